"""Corner transfer matrix renormalisation group (CTMRG).

The state holds, per spin, the diagonal corner spectrum ``A(a)`` and, per
ordered spin pair, the ``n x n`` half-row matrix ``F(a, b)`` that runs along
the transfer direction.  One iteration expands to ``2n x 2n`` matrices,
diagonalises the expanded corners and truncates back to the ``keep`` largest
eigenvalues.

Models whose face weight is not symmetric under exchanging the lattice axes
(RWIM) also carry ``G(a, b)``, the half-column matrices along the cut
direction.  For those the expanded corner is not symmetric, so it is
truncated with its singular value decomposition instead; rows of the corner
live in the ``F`` basis and columns in the ``G`` basis.  For the symmetric
models ``G`` is identical to ``F`` and is not stored.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    FormatVersionMismatch,
    ModelMismatch,
    NoConvergence,
    ZeroDenominator,
)
from .hplinalg import (
    DEFAULT_CTMRG_BITS,
    HPMatrix,
    context,
    decimal_digits,
    sym_eigen,
    to_decimal,
)
from .spins import SPINS, Direction, ModelSpec, face_weight, get_model

log = logging.getLogger(__name__)

PAIRS = tuple((a, b) for a in SPINS for b in SPINS)
FFILE_FORMAT = "ctmbound-ffile/1"
ORIENTATION = "transfer=horizontal,cut=vertical"


@dataclass(frozen=True)
class GrowthSchedule:
    target_n: int
    growth_factor: Fraction = Fraction(2)
    polish_iters: int = 50
    tol: str = "1e-40"
    max_iters: int = 2000

    def __post_init__(self):
        gf = Fraction(self.growth_factor)
        object.__setattr__(self, "growth_factor", gf)
        if self.target_n < 1:
            raise ValueError("target_n must be at least 1")
        if not 1 < gf <= 2:
            raise ValueError("growth_factor must lie in (1, 2]")
        if not 1 <= self.polish_iters <= self.max_iters:
            raise ValueError("need 1 <= polish_iters <= max_iters")

    def next_keep(self, n: int) -> int:
        if n >= self.target_n:
            return self.target_n
        return min(self.target_n, 2 * n, max(n + 1, math.ceil(n * self.growth_factor)))


@dataclass
class CTMState:
    model: ModelSpec
    n: int
    bits: int
    A: dict
    F: dict
    G: dict | None = None
    xi: mpfr = None
    eta: mpfr = None
    iteration: int = 0
    a_scale: mpfr = None
    f_scale: mpfr = None
    basis: dict | None = field(default=None, repr=False, compare=False)

    @property
    def transverse(self) -> dict:
        """Half-column matrices along the cut (``F`` itself for symmetric models)."""
        return self.F if self.G is None else self.G

    def kappa(self) -> mpfr:
        with context(self.bits):
            return self.eta / self.xi


@dataclass(frozen=True)
class Expansion:
    A_l: dict
    F_l: dict
    G_l: dict | None


def _pair_legal_vertical(model: ModelSpec, a: int, b: int) -> bool:
    return not (a and b and Direction.VERTICAL in model.forbidden)


def _pair_legal_horizontal(model: ModelSpec, a: int, b: int) -> bool:
    return not (a and b and Direction.HORIZONTAL in model.forbidden)


def init_state(model: ModelSpec | str, bits: int = DEFAULT_CTMRG_BITS) -> CTMState:
    """1 x 1 seed: unit corners, unit half-rows on every legal pair."""
    model = get_model(model)
    one = mpfr(1, bits)
    A = {a: (one,) for a in SPINS}
    F = {
        (a, b): HPMatrix([[int(_pair_legal_vertical(model, a, b))]], bits)
        for a, b in PAIRS
    }
    G = None
    if not model.diagonal_symmetric:
        G = {
            (a, b): HPMatrix([[int(_pair_legal_horizontal(model, a, b))]], bits)
            for a, b in PAIRS
        }
    return CTMState(model, 1, bits, A, F, G, xi=one, eta=one, a_scale=one, f_scale=one)


def _scale_cols(m: HPMatrix, vec) -> np.ndarray:
    return m.data * np.asarray(vec, dtype=object)[None, :]


def _block2(blocks: dict, n: int, bits: int) -> HPMatrix:
    """Assemble a 2n x 2n matrix from blocks keyed by (row spin, col spin)."""
    out = np.empty((2 * n, 2 * n), dtype=object)
    for (r, c), blk in blocks.items():
        out[r * n:(r + 1) * n, c * n:(c + 1) * n] = blk
    return HPMatrix._wrap(out, bits)


def expand(state: CTMState) -> Expansion:
    """Build the enlarged corners and half-rows.

    ``A_l(c)[d, a] = sum_b w(a b; c d) F(d, b) A(b) G(b, a)`` and
    ``F_l(c, a)[d, b] = w(a b; c d) F(d, b)``, blocks ordered spin 0 first.
    """
    model, n, bits = state.model, state.n, state.bits
    F, G = state.F, state.transverse
    w = {(a, b, c, d): face_weight(model, a, b, c, d)
         for a in SPINS for b in SPINS for c in SPINS for d in SPINS}
    with context(bits):
        zero = np.empty((n, n), dtype=object)
        zero.fill(mpfr(0, bits))
        fa = {(d, b): _scale_cols(F[d, b], state.A[b]) for d, b in PAIRS}
        prod = {
            (d, b, a): np.dot(fa[d, b], G[b, a].data)
            for d in SPINS for b in SPINS for a in SPINS
        }
        A_l = {}
        for c in SPINS:
            blocks = {}
            for d in SPINS:
                for a in SPINS:
                    acc = zero
                    for b in SPINS:
                        if w[a, b, c, d]:
                            acc = acc + prod[d, b, a]
                    blocks[d, a] = acc
            A_l[c] = _block2(blocks, n, bits)
        F_l = {}
        for c, a in PAIRS:
            blocks = {(d, b): (F[d, b].data if w[a, b, c, d] else zero)
                      for d in SPINS for b in SPINS}
            F_l[c, a] = _block2(blocks, n, bits)
        G_l = None
        if state.G is not None:
            G_l = {}
            for c, d in PAIRS:
                blocks = {(a, b): (state.G[a, b].data if w[a, b, c, d] else zero)
                          for a in SPINS for b in SPINS}
                G_l[c, d] = _block2(blocks, n, bits)
    return Expansion(A_l, F_l, G_l)


def _conjugate(left: HPMatrix, mid: HPMatrix, right: HPMatrix) -> HPMatrix:
    with context(max(left.bits, mid.bits)):
        return HPMatrix._wrap(np.dot(np.dot(left.data.T, mid.data), right.data), mid.bits)


def _normalise_pairs(mats: dict, bits: int):
    with context(bits):
        top = max(m.max_abs() for m in mats.values())
        if top == 0:
            raise ZeroDenominator("all half-row matrices vanished")
        scaled = {k: HPMatrix._wrap(m.data / top, bits) for k, m in mats.items()}
        half = mpfr("0.5", bits)
        sym = {}
        for a, b in PAIRS:
            sym[a, b] = HPMatrix._wrap(
                (scaled[a, b].data + scaled[b, a].data.T) * half, bits
            )
    return sym, top


def _warn_degenerate(values, keep: int, tol, spin: int) -> None:
    if keep < len(values):
        scale = tol * abs(values[0])
        gap = abs(abs(values[keep - 1]) - abs(values[keep]))
        if gap <= scale and abs(values[keep - 1]) > scale:
            log.warning(
                "truncating inside a near-degenerate pair of corner eigenvalues "
                "(spin %d, keep %d)", spin, keep,
            )


def _complete_columns(cols: list, dim: int, bits: int) -> list:
    """Extend orthonormal columns to ``len(cols) + k`` using unit vectors."""
    basis = list(cols)
    one = mpfr(1, bits)
    for i in range(dim):
        e = np.empty(dim, dtype=object)
        e.fill(mpfr(0, bits))
        e[i] = one
        v = e
        for _ in range(2):
            for u in basis:
                v = v - np.dot(u, v) * u
        nrm = gmpy2.sqrt(np.dot(v, v))
        if nrm > mpfr("0.5", bits):
            basis.append(v / nrm)
        if len(basis) == dim:
            break
    return basis


def renormalize(
    state: CTMState,
    exp: Expansion,
    keep: int,
    tol=None,
) -> CTMState:
    """Diagonalise the enlarged corners, truncate to ``keep`` and normalise."""
    n2 = exp.A_l[0].rows
    if keep > n2 or keep < 1:
        raise ValueError(f"keep={keep} outside 1..{n2}")
    bits = state.bits
    with context(bits):
        tol = mpfr(tol if tol is not None else "1e-40", bits)
        eig_tol = gmpy2.mul_2exp(mpfr(1, bits), -(bits - 24))
        prev = state.basis if state.basis and state.basis[0].rows == n2 else None
        basis = {}
        A_new = {}
        U = {}
        V = {}
        if exp.G_l is None:
            for c in SPINS:
                eig = sym_eigen(exp.A_l[c], eig_tol, guess=prev[c] if prev else None)
                _warn_degenerate(eig.values, keep, tol, c)
                basis[c] = eig.vectors
                U[c] = eig.vectors[:, :keep]
                A_new[c] = eig.values[:keep]
        else:
            for c in SPINS:
                C = exp.A_l[c]
                eig = sym_eigen(C @ C.T, eig_tol, guess=prev[c] if prev else None)
                _warn_degenerate(eig.values, keep, tol, c)
                basis[c] = eig.vectors
                sing = [gmpy2.sqrt(max(v, 0)) for v in eig.values[:keep]]
                U[c] = eig.vectors[:, :keep]
                smax = sing[0] if sing else 0
                cols = []
                ct = C.data.T
                for k in range(keep):
                    if smax > 0 and sing[k] > smax * gmpy2.mul_2exp(mpfr(1, bits), -(bits // 2)):
                        cols.append(np.dot(ct, U[c].data[:, k]) / sing[k])
                    else:
                        break
                cols = _complete_columns(cols, n2, bits)[:keep]
                V[c] = HPMatrix._wrap(np.array(cols, dtype=object).T.copy(), bits)
                A_new[c] = tuple(sing)
        amax = max(abs(v) for c in SPINS for v in A_new[c])
        if amax == 0:
            raise ZeroDenominator("corner spectrum vanished")
        A = {c: tuple(v / amax for v in A_new[c]) for c in SPINS}
        F_raw = {(c, a): _conjugate(U[c], exp.F_l[c, a], U[a]) for c, a in PAIRS}
        F, fmax = _normalise_pairs(F_raw, bits)
        G = None
        if exp.G_l is not None:
            G_raw = {(c, d): _conjugate(V[c], exp.G_l[c, d], V[d]) for c, d in PAIRS}
            G, _ = _normalise_pairs(G_raw, bits)
    return CTMState(
        state.model, keep, bits, A, F, G,
        xi=state.xi, eta=state.eta, iteration=state.iteration + 1,
        a_scale=amax, f_scale=fmax, basis=basis,
    )


# ---------------------------------------------------------------------------
# CTM equations: multipliers, kappa estimate, residuals
# ---------------------------------------------------------------------------


def _diag(vals, bits):
    return np.asarray(vals, dtype=object)


def _ctm_sides(state: CTMState):
    """Both sides of the two CTM equations, without the multipliers.

    Returns ``(lhs1, rhs1, lhs2, rhs2)`` keyed by spin / spin pair, where
    ``xi * lhs1 = rhs1`` and ``eta * lhs2 = rhs2`` hold at a fixed point.
    """
    model, bits = state.model, state.bits
    F, G, A = state.F, state.transverse, state.A
    with context(bits):
        a2 = {a: np.asarray([v * v for v in A[a]], dtype=object) for a in SPINS}
        lhs1 = {a: np.diag(a2[a]) for a in SPINS}
        rhs1 = {}
        for a in SPINS:
            acc = None
            for b in SPINS:
                t = np.dot(G[a, b].data * a2[b][None, :], G[b, a].data)
                acc = t if acc is None else acc + t
            rhs1[a] = acc
        ga = {(x, y): G[x, y].data * np.asarray(A[y], dtype=object)[None, :] for x, y in PAIRS}
        fa = {(x, y): F[x, y].data * np.asarray(A[y], dtype=object)[None, :] for x, y in PAIRS}
        lhs2 = {}
        rhs2 = {}
        for a2_, b2_ in PAIRS:
            lhs2[a2_, b2_] = np.asarray(A[a2_], dtype=object)[:, None] * fa[a2_, b2_]
            acc = None
            for b in SPINS:
                inner = None
                for a in SPINS:
                    # new boundary pair (a2_, b2_), previous column pair (a, b)
                    if face_weight(model, b, b2_, a, a2_):
                        t = np.dot(ga[a2_, a], fa[a, b])
                        inner = t if inner is None else inner + t
                if inner is not None:
                    t = np.dot(inner, G[b, b2_].data)
                    acc = t if acc is None else acc + t
            if acc is None:
                acc = lhs2[a2_, b2_] * 0
            rhs2[a2_, b2_] = acc
    return lhs1, rhs1, lhs2, rhs2


def multipliers(state: CTMState):
    """Trace-functional estimates of the CTM multipliers ``(xi, eta)``."""
    lhs1, rhs1, lhs2, rhs2 = _ctm_sides(state)
    bits = state.bits
    with context(bits):
        zero = mpfr(0, bits)
        den1 = sum((np.trace(lhs1[a]) for a in SPINS), zero)
        num1 = sum((np.trace(rhs1[a]) for a in SPINS), zero)
        num2 = zero
        den2 = zero
        for p in PAIRS:
            f = state.F[p].data
            num2 += np.sum(rhs2[p] * f)
            den2 += np.sum(lhs2[p] * f)
        if den1 == 0 or den2 == 0 or num1 == 0:
            raise ZeroDenominator("degenerate CTM state")
        return num1 / den1, num2 / den2


def kappa_estimate(state: CTMState) -> mpfr:
    """Non-rigorous growth-rate estimate ``eta / xi`` from the CTM equations."""
    xi, eta = multipliers(state)
    with context(state.bits):
        return eta / xi


def ctm_residuals(state: CTMState) -> tuple:
    """Max-norm residuals of both CTM equations at the trace-functional multipliers."""
    xi, eta = multipliers(state)
    lhs1, rhs1, lhs2, rhs2 = _ctm_sides(state)
    with context(state.bits):
        r1 = max(max(abs(v) for v in (rhs1[a] - xi * lhs1[a]).flat) for a in SPINS)
        r2 = max(max(abs(v) for v in (rhs2[p] - eta * lhs2[p]).flat) for p in PAIRS)
    return r1, r2


def _spectrum_change(old: CTMState, new: CTMState) -> mpfr:
    with context(new.bits):
        return max(abs(x - y) for c in SPINS for x, y in zip(old.A[c], new.A[c]))


def ctmrg_step(state: CTMState, keep: int, tol=None) -> CTMState:
    new = renormalize(state, expand(state), keep, tol)
    xi, eta = multipliers(new)
    new.xi, new.eta = xi, eta
    return new


def ctmrg_solve(
    model: ModelSpec | str,
    schedule: GrowthSchedule,
    bits: int = DEFAULT_CTMRG_BITS,
    callback=None,
    initial: CTMState | None = None,
) -> CTMState:
    """Grow the matrices to ``schedule.target_n`` and polish to a fixed point.

    Converged means: at least ``polish_iters`` iterations at the target size,
    then a relative change of ``eta/xi`` and a max-norm change of the kept
    corner spectrum both at most ``tol`` between successive iterations.
    ``initial`` continues from an earlier state (for sweeps over ``n``)
    instead of the 1 x 1 seed.
    """
    model = get_model(model)
    if initial is None:
        state = init_state(model, bits)
    else:
        if initial.model != model or initial.bits != bits:
            raise ModelMismatch("initial state has a different model or precision")
        if initial.n > schedule.target_n:
            raise ValueError("initial state is larger than the target size")
        state = replace(initial, iteration=0, basis=None)
    with context(bits):
        tol = mpfr(schedule.tol, bits)
    polished = 0
    while state.iteration < schedule.max_iters:
        keep = schedule.next_keep(state.n)
        new = ctmrg_step(state, keep, tol)
        if callback is not None:
            callback(new)
        if new.n == state.n == schedule.target_n:
            polished += 1
            if polished >= schedule.polish_iters:
                with context(bits):
                    k_old, k_new = state.kappa(), new.kappa()
                    dk = abs(k_new - k_old) / k_new
                    if dk <= tol and _spectrum_change(state, new) <= tol:
                        return new
        state = new
    raise NoConvergence(
        f"CTMRG did not converge within {schedule.max_iters} iterations (n={state.n})"
    )


# ---------------------------------------------------------------------------
# F-matrix file
# ---------------------------------------------------------------------------


def _fmt_row(values, digits: int) -> str:
    return " ".join(to_decimal(v, digits) for v in values)


def state_lines(state: CTMState, extra_header: dict | None = None) -> list:
    digits = decimal_digits(state.bits)
    lines = [
        f"format={FFILE_FORMAT}",
        f"model={state.model.token}",
        f"orientation={ORIENTATION}",
        f"n={state.n}",
        f"precision_bits={state.bits}",
        f"iterations={state.iteration}",
        f"kappa_estimate={to_decimal(kappa_estimate(state), digits)}",
    ]
    for key, value in (extra_header or {}).items():
        lines.append(f"config.{key}={value}")
    for a, b in PAIRS:
        lines.append(f"F {a} {b}")
        lines.extend(_fmt_row(row, digits) for row in state.F[a, b].data)
    for a in SPINS:
        lines.append(f"A {a}")
        lines.append(_fmt_row(state.A[a], digits))
    if state.G is not None:
        for a, b in PAIRS:
            lines.append(f"G {a} {b}")
            lines.extend(_fmt_row(row, digits) for row in state.G[a, b].data)
    return lines


def checksum(lines) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def save_state(state: CTMState, path, extra_header: dict | None = None) -> str:
    """Write the F-matrix file; returns its checksum."""
    lines = state_lines(state, extra_header)
    digest = checksum(lines)
    Path(path).write_text("\n".join(lines) + f"\nchecksum={digest}\n", encoding="utf-8")
    return digest


@dataclass
class FFile:
    header: dict
    state: CTMState
    checksum: str


def read_ffile(path, model: ModelSpec | str | None = None) -> FFile:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines or not lines[-1].startswith("checksum="):
        raise ChecksumMismatch(f"{path}: missing checksum line (truncated file?)")
    digest = lines[-1].split("=", 1)[1]
    body = lines[:-1]
    if checksum(body) != digest:
        raise ChecksumMismatch(f"{path}: checksum does not match contents")
    header = {}
    i = 0
    while i < len(body) and "=" in body[i]:
        k, v = body[i].split("=", 1)
        header[k] = v
        i += 1
    if header.get("format") != FFILE_FORMAT:
        raise FormatVersionMismatch(
            f"{path}: format {header.get('format')!r}, expected {FFILE_FORMAT!r}"
        )
    if header.get("orientation") != ORIENTATION:
        raise FormatVersionMismatch(f"{path}: unexpected orientation {header.get('orientation')!r}")
    file_model = get_model(header["model"])
    if model is not None and get_model(model) != file_model:
        raise ModelMismatch(f"{path}: file is for {file_model.token}, requested {get_model(model).token}")
    n = int(header["n"])
    bits = int(header["precision_bits"])
    F, A, G = {}, {}, {}
    while i < len(body):
        parts = body[i].split()
        tag = parts[0]
        if tag in ("F", "G"):
            key = (int(parts[1]), int(parts[2]))
            rows = [r.split() for r in body[i + 1:i + 1 + n]]
            if len(rows) != n or any(len(r) != n for r in rows):
                raise DimensionMismatch(f"{path}: block {body[i]} is not {n}x{n}")
            (F if tag == "F" else G)[key] = HPMatrix(rows, bits)
            i += 1 + n
        elif tag == "A":
            vals = body[i + 1].split()
            if len(vals) != n:
                raise DimensionMismatch(f"{path}: block {body[i]} has {len(vals)} entries")
            A[int(parts[1])] = tuple(mpfr(v, bits) for v in vals)
            i += 2
        else:
            raise FormatVersionMismatch(f"{path}: unexpected line {body[i]!r}")
    if set(F) != set(PAIRS) or set(A) != set(SPINS):
        raise DimensionMismatch(f"{path}: incomplete F/A blocks")
    state = CTMState(file_model, n, bits, A, F, G or None,
                     iteration=int(header["iterations"]))
    if state.G is None and not file_model.diagonal_symmetric:
        raise DimensionMismatch(f"{path}: {file_model.token} needs G blocks")
    xi, eta = multipliers(state)
    state.xi, state.eta = xi, eta
    return FFile(header, state, digest)


def load_state(path, model: ModelSpec | str | None = None) -> CTMState:
    return read_ffile(path, model).state
