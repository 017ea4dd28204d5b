import logging
from fractions import Fraction

import pytest
from gmpy2 import mpfr

from ctmbound.ctmrg import (
    PAIRS,
    GrowthSchedule,
    _warn_degenerate,
    ctm_residuals,
    ctmrg_solve,
    ctmrg_step,
    expand,
    init_state,
    kappa_estimate,
    load_state,
    read_ffile,
    save_state,
)
from ctmbound.errors import ChecksumMismatch, FormatVersionMismatch, ModelMismatch, NoConvergence
from ctmbound.hplinalg import context
from ctmbound.spins import SPINS, face_weight

KAPPA = {
    "hard-squares": 1.503048082475332,
    "nak": 1.342643951124601,
    "rwim": 1.448957371775608,
}


def test_initial_states():
    nak = init_state("nak")
    assert nak.F[1, 1].is_zero() and not nak.F[0, 1].is_zero()
    assert nak.G is None
    rwim = init_state("rwim")
    assert rwim.G is not None
    assert not rwim.F[1, 1].is_zero()  # vertical pairs allowed along the cut
    assert rwim.G[1, 1].is_zero()  # horizontal pairs forbidden


def test_expansion_block_identities(small_states):
    state = small_states["hard-squares"]
    n = state.n
    exp = expand(state)
    for c, a in PAIRS:
        big = exp.F_l[c, a].data
        for d in SPINS:
            for b in SPINS:
                block = big[d * n:(d + 1) * n, b * n:(b + 1) * n]
                w = face_weight(state.model, a, b, c, d)
                expected = state.F[d, b].data if w else state.F[d, b].data * 0
                assert (block == expected).all()
    with context(state.bits):
        for c in SPINS:
            for d in SPINS:
                for a in SPINS:
                    block = exp.A_l[c].data[d * n:(d + 1) * n, a * n:(a + 1) * n]
                    ref = sum(
                        (state.F[d, b].data * list(state.A[b])) @ state.F[b, a].data
                        for b in SPINS if face_weight(state.model, a, b, c, d)
                    )
                    if isinstance(ref, int):
                        assert all(v == 0 for v in block.flat)
                    else:
                        assert max(abs(x - y) for x, y in zip(block.flat, ref.flat)) < 1e-35


@pytest.mark.parametrize("model", sorted(KAPPA))
def test_converged_small_state(small_states, model):
    state = small_states[model]
    assert state.n == 4
    assert abs(float(kappa_estimate(state)) - KAPPA[model]) < 1e-6
    r1, r2 = ctm_residuals(state)
    assert r1 < 1e-20 and r2 < 1e-20
    with context(state.bits):
        for a, b in PAIRS:
            assert all(x == y for x, y in zip(state.F[a, b].data.flat, state.F[b, a].data.T.flat))
    assert (state.G is None) == (model != "rwim")
    spectrum = list(state.A[0]) + list(state.A[1])
    assert max(abs(v) for v in spectrum) == 1


def test_growth_schedule():
    s = GrowthSchedule(16)
    sizes = [1]
    while sizes[-1] < 16:
        sizes.append(s.next_keep(sizes[-1]))
    assert sizes == [1, 2, 4, 8, 16]
    s = GrowthSchedule(6, growth_factor=Fraction(3, 2))
    assert [s.next_keep(k) for k in (1, 2, 3, 5, 6)] == [2, 3, 5, 6, 6]
    with pytest.raises(ValueError):
        GrowthSchedule(4, growth_factor=3)


def test_no_convergence():
    with pytest.raises(NoConvergence):
        ctmrg_solve("hard-squares", GrowthSchedule(4, polish_iters=3, tol="1e-30", max_iters=5), bits=128)


def test_continuation_from_smaller_state(small_states):
    schedule = GrowthSchedule(5, polish_iters=10, tol="1e-20", max_iters=500)
    state = ctmrg_solve("hard-squares", schedule, bits=128, initial=small_states["hard-squares"])
    assert state.n == 5
    assert abs(float(kappa_estimate(state)) - KAPPA["hard-squares"]) < 1e-9


def test_degeneracy_warning(caplog):
    vals = [mpfr(1), mpfr("0.5"), mpfr("0.5"), mpfr("0.1")]
    with caplog.at_level(logging.WARNING):
        _warn_degenerate(vals, 2, mpfr("1e-20"), 0)
    assert "degenerate" in caplog.text
    caplog.clear()
    _warn_degenerate(vals, 3, mpfr("1e-20"), 0)
    assert not caplog.text


def test_ffile_round_trip_and_determinism(small_states, tmp_path):
    state = small_states["rwim"]
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    d1 = save_state(state, p1, {"note": "x"})
    d2 = save_state(state, p2, {"note": "x"})
    assert d1 == d2 and p1.read_bytes() == p2.read_bytes()
    ff = read_ffile(p1, "rwim")
    assert ff.header["config.note"] == "x"
    back = ff.state
    for k in PAIRS:
        assert back.F[k].equals(state.F[k]) and back.G[k].equals(state.G[k])
    assert all(back.A[a] == state.A[a] for a in SPINS)
    assert kappa_estimate(back) == kappa_estimate(state)


def test_ffile_errors(small_states, tmp_path):
    path = tmp_path / "f.txt"
    save_state(small_states["hard-squares"], path)
    text = path.read_text()
    with pytest.raises(ModelMismatch):
        load_state(path, "nak")
    bad = tmp_path / "bad.txt"
    lines = text.splitlines()
    i = lines.index("F 0 1") + 1
    lines[i] = "-" + lines[i]
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ChecksumMismatch):
        load_state(bad)
    bad.write_text(text[: len(text) // 2])
    with pytest.raises(ChecksumMismatch):
        load_state(bad)
    from ctmbound.ctmrg import checksum

    for old, new in (("format=ctmbound-ffile/1", "format=ctmbound-ffile/0"),
                     ("orientation=transfer=horizontal,cut=vertical", "orientation=transfer=vertical,cut=horizontal")):
        body = text.replace(old, new).splitlines()[:-1]
        bad.write_text("\n".join(body) + f"\nchecksum={checksum(body)}\n")
        with pytest.raises(FormatVersionMismatch):
            load_state(bad)


def test_step_keeps_exact_sizes():
    state = init_state("hard-squares", 96)
    state = ctmrg_step(state, 2)
    assert state.n == 2 and state.F[0, 0].shape == (2, 2)
    with pytest.raises(ValueError):
        ctmrg_step(state, 5)
