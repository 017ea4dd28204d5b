"""Exact strip and cylinder transfer matrices for small widths.

States of a column of width ``w`` are stored as integers, bit ``i`` holding
spin ``sigma_{i+1}``.  The transfer operator is applied matrix-free with a
subset-sum dynamic program: every cross-column constraint of the supported
models is a pairwise exclusion, so ``V[sigma, tau] = 1`` exactly when
``tau`` avoids a mask determined by ``sigma``.  Summing ``x`` over all
subsets of a set is done one tau-spin at a time in ``O(w 2^w)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import NonPositiveVector, OddWidth, WidthTooLarge
from .hplinalg import (
    DEFAULT_BOUND_BITS,
    PowerResult,
    context,
    cw_ratios,
    nth_root,
    precision_of,
    power_iteration,
)
from .spins import Direction, ModelSpec, face_weight, get_model

DEFAULT_STATE_CAP = 2**26


class Boundary(enum.Enum):
    CYCLIC = "cyclic"
    PATH = "path"


@dataclass(frozen=True)
class CutState:
    spins: tuple
    boundary: Boundary = Boundary.CYCLIC

    def __post_init__(self):
        if len(self.spins) < 1:
            raise ValueError("a cut state needs at least one spin")

    @property
    def width(self) -> int:
        return len(self.spins)

    @property
    def code(self) -> int:
        return state_code(self.spins)

    @classmethod
    def from_code(cls, code: int, width: int, boundary=Boundary.CYCLIC) -> "CutState":
        return cls(code_to_spins(code, width), boundary)


def state_code(spins) -> int:
    return sum(1 << i for i, s in enumerate(spins) if s)


def code_to_spins(code: int, width: int) -> tuple:
    return tuple((code >> i) & 1 for i in range(width))


def _rotl(x: int, w: int) -> int:
    full = (1 << w) - 1
    return ((x << 1) | (x >> (w - 1))) & full


def _rotr(x: int, w: int) -> int:
    full = (1 << w) - 1
    return ((x >> 1) | ((x & 1) << (w - 1))) & full


def _column_ok(model: ModelSpec, code: int, w: int, boundary: Boundary) -> bool:
    if Direction.VERTICAL not in model.forbidden:
        return True
    if boundary is Boundary.CYCLIC:
        return (code & _rotl(code, w)) == 0 if w > 1 else True
    return (code & (code << 1)) == 0


@dataclass(frozen=True)
class StateSpace:
    model: ModelSpec
    width: int
    boundary: Boundary
    states: tuple = field(repr=False)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def index(self) -> dict:
        return _index_of(self.states)


@lru_cache(maxsize=64)
def _index_of(states: tuple) -> dict:
    return {s: i for i, s in enumerate(states)}


def count_legal(model: ModelSpec, w: int, boundary: Boundary) -> int:
    """Closed-form number of legal columns (Lucas / Fibonacci / powers of two)."""
    if Direction.VERTICAL not in model.forbidden:
        return 2**w
    a, b = (2, 1) if boundary is Boundary.CYCLIC else (1, 2)
    # cyclic: Lucas L_w; path: Fibonacci F_{w+2}
    for _ in range(w if boundary is Boundary.CYCLIC else w - 1):
        a, b = b, a + b
    return a if boundary is Boundary.CYCLIC else b


def enumerate_states(
    model: ModelSpec | str,
    w: int,
    boundary: Boundary | str = Boundary.CYCLIC,
    cap: int = DEFAULT_STATE_CAP,
) -> StateSpace:
    model = get_model(model)
    boundary = Boundary(boundary)
    if w < 1 or (boundary is Boundary.CYCLIC and w < 2):
        raise ValueError(f"width {w} too small for {boundary.value} boundary")
    count = count_legal(model, w, boundary)
    if count > cap:
        raise WidthTooLarge(f"{count} states at width {w} exceed the cap {cap}")
    states = tuple(c for c in range(1 << w) if _column_ok(model, c, w, boundary))
    return StateSpace(model, w, boundary, states)


def forbidden_mask(model: ModelSpec, sigma: int, w: int, boundary: Boundary) -> int:
    """Bits of tau that must be vacant next to column ``sigma``."""
    full = (1 << w) - 1
    mask = sigma if Direction.HORIZONTAL in model.forbidden else 0
    cyclic = boundary is Boundary.CYCLIC
    # NE pair (sigma_i, tau_{i+1}); NW pair (tau_i, sigma_{i+1})
    if Direction.DIAGONAL_NE in model.forbidden:
        mask |= _rotl(sigma, w) if cyclic else (sigma << 1) & full
    if Direction.DIAGONAL_NW in model.forbidden:
        mask |= _rotr(sigma, w) if cyclic else sigma >> 1
    return mask


def _subset_sums(full_vec: np.ndarray, w: int) -> np.ndarray:
    z = full_vec.copy()
    for i in range(w):
        view = z.reshape(-1, 2, 1 << i)
        view[:, 1, :] = view[:, 1, :] + view[:, 0, :]
    return z


def tm_apply(space: StateSpace, x) -> np.ndarray:
    """Apply the column transfer matrix to ``x`` (indexed like ``space.states``)."""
    x = np.asarray(x, dtype=object)
    if x.shape != (len(space),):
        raise ValueError(f"vector of length {x.shape} does not match {len(space)} states")
    w = space.width
    zero = x[0] * 0
    vec = np.empty(1 << w, dtype=object)
    vec.fill(zero)
    codes = np.fromiter(space.states, dtype=np.int64, count=len(space))
    vec[codes] = x
    with context(precision_of(*x[:1])):
        z = _subset_sums(vec, w)
    return z[_targets(space)]


@lru_cache(maxsize=64)
def _target_cache(model: ModelSpec, w: int, boundary: Boundary, states: tuple) -> np.ndarray:
    full = (1 << w) - 1
    return np.array(
        [full & ~forbidden_mask(model, s, w, boundary) for s in states], dtype=np.int64
    )


def _targets(space: StateSpace) -> np.ndarray:
    return _target_cache(space.model, space.width, space.boundary, space.states)


def matrix_element(model: ModelSpec, sigma, tau, boundary: Boundary) -> int:
    """Transfer-matrix entry as a product of face weights (and row edges)."""
    w = len(sigma)
    weight = 1
    faces = w if boundary is Boundary.CYCLIC else w - 1
    for i in range(faces):
        j = (i + 1) % w
        weight *= face_weight(model, sigma[j], tau[j], sigma[i], tau[i])
    if boundary is Boundary.PATH and w == 1:
        if Direction.HORIZONTAL in model.forbidden and sigma[0] and tau[0]:
            weight = 0
    return weight


def dense_matrix(space: StateSpace) -> np.ndarray:
    """Explicit 0/1 transfer matrix built from face weights (oracle use only)."""
    spins = [code_to_spins(s, space.width) for s in space.states]
    n = len(spins)
    out = np.zeros((n, n), dtype=np.int64)
    for i, s in enumerate(spins):
        for j, t in enumerate(spins):
            out[i, j] = matrix_element(space.model, s, t, space.boundary)
    return out


def dominant_eigenvalue(
    model: ModelSpec | str,
    w: int,
    boundary: Boundary | str = Boundary.CYCLIC,
    bits: int = DEFAULT_BOUND_BITS,
    tol=None,
    max_iters: int = 10_000,
) -> PowerResult:
    """Power iteration on the transfer operator; the result carries the enclosure."""
    space = enumerate_states(model, w, boundary)
    if tol is None:
        tol = gmpy2.mul_2exp(mpfr(1, bits), -(bits // 2))
    return power_iteration(
        lambda v: tm_apply(space, v), len(space), tol, max_iters=max_iters, bits=bits
    )


def cw_upper_direct(model, m: int, bits: int = DEFAULT_BOUND_BITS, tol=None) -> mpfr:
    """Upper bound ``Lambda_cyl(m) ** (1/m)`` from the top of the eigenvalue enclosure."""
    if m < 2 or m % 2:
        raise OddWidth(f"the cylinder bound needs an even width >= 2, got {m}")
    res = dominant_eigenvalue(model, m, Boundary.CYCLIC, bits, tol)
    return nth_root(res.upper, m, gmpy2.RoundUp)


def cw_lower(model, p: int, q: int, bits: int = DEFAULT_BOUND_BITS, tol=None) -> mpfr:
    """Strip lower bound ``(Lambda(p + 2q + 1) / Lambda(2q + 1)) ** (1/p)``.

    ``Lambda(k)`` is the dominant eigenvalue for a free strip of ``k`` spins.
    The Rayleigh quotient of the (symmetric) column transfer matrix ``T``
    with the vector ``T^q 1`` compares grids of ``p + 2q + 1`` and ``2q + 1``
    columns, which is why the strips carry one spin more than the power
    indices ``p + 2q`` and ``2q``.  The numerator uses the bottom of its
    enclosure, the denominator the top, and all rounding is downward.
    """
    if p < 1 or q < 1:
        raise ValueError("p and q must both be positive")
    big = dominant_eigenvalue(model, p + 2 * q + 1, Boundary.PATH, bits, tol)
    small = dominant_eigenvalue(model, 2 * q + 1, Boundary.PATH, bits, tol)
    with context(bits, gmpy2.RoundDown):
        ratio = big.lower / small.upper
    return nth_root(ratio, p, gmpy2.RoundDown)


def cw_bounds(apply: Callable[[np.ndarray], np.ndarray], x) -> tuple:
    """Collatz-Wielandt interval ``(min_i (Ax)_i/x_i, max_i (Ax)_i/x_i)``."""
    x = np.asarray(x, dtype=object)
    if any(not v > 0 for v in x):
        raise NonPositiveVector("Collatz-Wielandt needs a strictly positive vector")
    y = np.asarray(apply(x), dtype=object)
    return cw_ratios(x, y)
