"""Exhaustive small-case self-checks, run by ``ctmbound verify``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .bound import PAIRS, ansatz_from_state, build_fl, psi, psi_raw, ratio, vpsi_raw
from .bracelets import brute_force_bracelets, canonicalize, enumerate_bracelets
from .ctmrg import ctmrg_step, init_state, read_ffile
from .exact import Boundary, code_to_spins, dense_matrix, dominant_eigenvalue, enumerate_states, tm_apply
from .hplinalg import context, nth_root
from .spins import MODELS, SPINS, Face, face_weight, face_weight_from_pairs, get_model

CheckResult = tuple  # (name, ok, detail)


def _check(name: str, fn: Callable[[], str | None]) -> CheckResult:
    try:
        detail = fn()
    except AssertionError as exc:
        return name, False, str(exc) or "assertion failed"
    except Exception as exc:  # a crash is a failed check, reported with its cause
        return name, False, f"{type(exc).__name__}: {exc}"
    return name, True, detail or ""


def _small_state(model, steps=(2, 3, 4), bits=128):
    state = init_state(model, bits)
    for keep in steps:
        state = ctmrg_step(state, keep)
    return state


def check_face_weights() -> str:
    cases = 0
    for model in MODELS.values():
        for a in SPINS:
            for b in SPINS:
                for c in SPINS:
                    for d in SPINS:
                        assert face_weight(model, a, b, c, d) == face_weight_from_pairs(
                            model, Face(a, b, c, d)), (model, a, b, c, d)
                        cases += 1
    return f"{cases} cases"


def check_transfer(model) -> str:
    for boundary in Boundary:
        for w in range(1 if boundary is Boundary.PATH else 2, 9):
            space = enumerate_states(model, w, boundary)
            dense = dense_matrix(space)
            x = np.arange(1, len(space) + 1, dtype=object)
            assert list(tm_apply(space, x)) == list(dense.astype(object) @ x), (boundary, w)
    return "widths up to 8"


def check_bracelets(model) -> str:
    for m in range(2, 13):
        got = list(enumerate_bracelets(model, m))
        assert got == brute_force_bracelets(model, m), m
        for b in got:
            assert all(canonicalize(s) == b for s in b.orbit()), b
    return "m <= 12"


def check_vpsi_oracle(model) -> str:
    aset = ansatz_from_state(_small_state(model), 128)
    worst = 0
    for m in (4, 6):
        space = enumerate_states(model, m)
        ps = np.array([psi_raw(aset, code_to_spins(s, m)) for s in space.states], dtype=object)
        direct = tm_apply(space, ps)
        for s, d in zip(space.states, direct):
            v = vpsi_raw(aset, code_to_spins(s, m))
            with context(128):
                err = abs(v - d) / abs(d)
            worst = max(worst, float(err))
    assert worst < 1e-30, worst
    return f"max relative deviation {worst:.1e}"


def check_orbit_invariance(model) -> str:
    aset = ansatz_from_state(_small_state(model), 128)
    for b in enumerate_bracelets(model, 8):
        ref = psi(aset, b.bits)
        for s in b.orbit():
            assert psi(aset, s) == ref, s
            with context(128):
                assert abs(psi_raw(aset, s) - ref) <= abs(ref) * 1e-30, s
    return "m = 8"


def check_sandwich(model) -> str:
    aset = ansatz_from_state(_small_state(model), 128)
    for m in (4, 6, 8):
        exact = nth_root(dominant_eigenvalue(model, m, Boundary.CYCLIC, 128).value, m)
        roots = [ratio(aset, b.bits).ratio_root for b in enumerate_bracelets(model, m)]
        assert min(roots) <= exact <= max(roots), m
    return "m in 4, 6, 8"


def check_ffile(path, model=None) -> str:
    ff = read_ffile(path, model)
    aset = build_fl(ff.state.F, ff.state.model, 128)
    asym = float(aset.max_asymmetry())
    assert asym < 1e-30, f"F(a,b) - F(b,a)^T = {asym:.1e}"
    for m in (4, 6, 8):
        for b in enumerate_bracelets(aset.model, m):
            ratio(aset, b.bits)
    return f"{ff.state.model} n={ff.state.n} checksum ok, traces positive for m <= 8"


def run_checks(model=None, f_file=None) -> list:
    models = [get_model(model)] if model else list(MODELS.values())
    results = [_check("face weights equal pairwise legality products", check_face_weights)]
    for mdl in models:
        results.append(_check(f"{mdl}: matrix-free transfer equals dense", lambda: check_transfer(mdl)))
        results.append(_check(f"{mdl}: bracelets equal brute force", lambda: check_bracelets(mdl)))
        results.append(_check(f"{mdl}: Fl traces equal direct transfer", lambda: check_vpsi_oracle(mdl)))
        results.append(_check(f"{mdl}: traces invariant on orbits", lambda: check_orbit_invariance(mdl)))
        results.append(_check(f"{mdl}: ratio range contains exact root", lambda: check_sandwich(mdl)))
    if f_file is not None:
        results.append(_check(f"F-file {f_file}", lambda: check_ffile(f_file, model)))
    return results
