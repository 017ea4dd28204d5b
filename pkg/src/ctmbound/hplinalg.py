"""Arbitrary-precision scalars and dense matrices on top of gmpy2.

Scalars are plain :class:`gmpy2.mpfr` values (each carries its own
precision).  Matrices are :class:`HPMatrix`, a read-only wrapper around a
numpy ``object`` array of mpfr entries.  Every operation runs inside a
gmpy2 context at an explicit precision, the maximum of its inputs, so no
result depends on whatever context the caller happens to have active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import NoConvergence, NonPositiveIterate, NotSymmetric

HPReal = mpfr

DEFAULT_CTMRG_BITS = 1024
DEFAULT_BOUND_BITS = 256


def context(bits: int, rounding=gmpy2.RoundToNearest):
    return gmpy2.context(precision=bits, round=rounding)


def hp(x, bits: int) -> mpfr:
    """Convert ``x`` (int, float, str, Fraction or mpfr) to an mpfr at ``bits``."""
    if isinstance(x, str):
        return mpfr(x.strip(), bits)
    with context(bits):
        return mpfr(x, bits)


def precision_of(*values) -> int:
    bits = 0
    for v in values:
        if isinstance(v, HPMatrix):
            bits = max(bits, v.bits)
        elif isinstance(v, type(mpfr(0))):
            bits = max(bits, v.precision)
    return bits or 53


def decimal_digits(bits: int) -> int:
    """Significant decimal digits that round-trip an mpfr of ``bits`` bits exactly."""
    return math.ceil(bits * math.log10(2)) + 1


def to_decimal(x: mpfr, digits: int | None = None, rounding: str = "N") -> str:
    """Scientific-notation rendering with ``digits`` significant digits.

    ``rounding`` is ``N`` (nearest, ties to even), ``U`` (towards +inf) or
    ``D`` (towards -inf).  The digits come from exact integer arithmetic on
    the binary value, so directed rounding is exact.
    """
    if digits is None:
        digits = decimal_digits(x.precision)
    if not gmpy2.is_finite(x):
        raise ValueError(f"cannot render {x} as a decimal")
    if x == 0:
        return f"{'0.' + '0' * (digits - 1) if digits > 1 else '0'}e+00"
    num, den = x.as_integer_ratio()
    neg = num < 0
    num = abs(num)
    exp10 = len(str(num)) - len(str(den))
    if _ge_pow10(num, den, exp10 + 1):
        exp10 += 1
    elif not _ge_pow10(num, den, exp10):
        exp10 -= 1
    shift = digits - 1 - exp10
    if shift >= 0:
        q, r = divmod(num * 10**shift, den)
        d = den
    else:
        d = den * 10**-shift
        q, r = divmod(num, d)
    if r:
        if rounding == "N":
            if 2 * r > d or (2 * r == d and q % 2):
                q += 1
        elif rounding == ("D" if neg else "U"):
            q += 1
        elif rounding not in ("U", "D"):
            raise ValueError(f"unknown rounding code {rounding!r}")
    if q >= 10**digits:
        q //= 10
        exp10 += 1
    text = str(q)
    mant = text[0] + ("." + text[1:] if digits > 1 else "")
    return f"{'-' if neg else ''}{mant}e{exp10:+03d}"


def _ge_pow10(num: int, den: int, e: int) -> bool:
    """``num / den >= 10**e`` for positive integers."""
    return num * 10**-e >= den if e < 0 else num >= den * 10**e


def from_decimal(text: str, bits: int) -> mpfr:
    return mpfr(text.strip(), bits)


def fixed_decimal(x: mpfr, places: int, rounding: str = "N") -> str:
    """Fixed-point rendering with ``places`` digits after the point."""
    return format(x, f".{places}{rounding}f")


def nth_root(x: mpfr, n: int, rounding=gmpy2.RoundToNearest, bits: int | None = None):
    bits = bits or x.precision
    with context(bits, rounding):
        return gmpy2.root(x, n)


_to_mpfr_cache: dict[int, np.ufunc] = {}


def _converter(bits: int):
    f = _to_mpfr_cache.get(bits)
    if f is None:
        def conv(v, _b=bits):
            if isinstance(v, str):
                return mpfr(v.strip(), _b)
            return mpfr(v, _b)
        f = np.frompyfunc(conv, 1, 1)
        _to_mpfr_cache[bits] = f
    return f


def as_mpfr_array(values, bits: int) -> np.ndarray:
    arr = np.asarray(values, dtype=object)
    with context(bits):
        out = _converter(bits)(arr)
    return np.asarray(out, dtype=object)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class HPMatrix:
    """Immutable dense matrix of mpfr entries at ``bits`` of precision."""

    __slots__ = ("data", "bits")

    def __init__(self, values, bits: int, *, _raw: bool = False):
        if _raw:
            arr = values
        else:
            arr = as_mpfr_array(values, bits)
        if arr.ndim != 2:
            raise ValueError(f"HPMatrix needs a 2-d array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("HPMatrix dimensions must be positive")
        self.data = _frozen(arr)
        self.bits = bits

    @classmethod
    def _wrap(cls, arr: np.ndarray, bits: int) -> "HPMatrix":
        return cls(np.asarray(arr, dtype=object), bits, _raw=True)

    def __reduce__(self):
        return (HPMatrix._wrap, (self.data.copy(), self.bits))

    @classmethod
    def zeros(cls, rows: int, cols: int, bits: int) -> "HPMatrix":
        z = mpfr(0, bits)
        arr = np.empty((rows, cols), dtype=object)
        arr.fill(z)
        return cls._wrap(arr, bits)

    @classmethod
    def identity(cls, n: int, bits: int) -> "HPMatrix":
        arr = cls.zeros(n, n, bits).data.copy()
        one = mpfr(1, bits)
        for i in range(n):
            arr[i, i] = one
        return cls._wrap(arr, bits)

    @classmethod
    def diag(cls, values: Sequence, bits: int) -> "HPMatrix":
        n = len(values)
        arr = cls.zeros(n, n, bits).data.copy()
        vals = as_mpfr_array(list(values), bits)
        for i in range(n):
            arr[i, i] = vals[i]
        return cls._wrap(arr, bits)

    @classmethod
    def block(cls, blocks: Sequence[Sequence["HPMatrix"]]) -> "HPMatrix":
        bits = max(b.bits for row in blocks for b in row)
        arr = np.block([[b.data for b in row] for row in blocks])
        return cls._wrap(np.asarray(arr, dtype=object), bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> "HPMatrix":
        return HPMatrix._wrap(self.data.T.copy(), self.bits)

    def __getitem__(self, key):
        out = self.data[key]
        if isinstance(out, np.ndarray):
            if out.ndim == 2:
                return HPMatrix._wrap(out.copy(), self.bits)
            return out.copy()
        return out

    def __matmul__(self, other: "HPMatrix") -> "HPMatrix":
        return matmul(self, other)

    def __add__(self, other: "HPMatrix") -> "HPMatrix":
        self._check_same_shape(other)
        bits = max(self.bits, other.bits)
        with context(bits):
            return HPMatrix._wrap(self.data + other.data, bits)

    def __sub__(self, other: "HPMatrix") -> "HPMatrix":
        self._check_same_shape(other)
        bits = max(self.bits, other.bits)
        with context(bits):
            return HPMatrix._wrap(self.data - other.data, bits)

    def __neg__(self) -> "HPMatrix":
        with context(self.bits):
            return HPMatrix._wrap(-self.data, self.bits)

    def scale(self, s) -> "HPMatrix":
        bits = max(self.bits, precision_of(s))
        with context(bits):
            return HPMatrix._wrap(self.data * s, bits)

    def scale_2exp(self, e: int) -> "HPMatrix":
        """Multiply by ``2**e`` exactly."""
        f = np.frompyfunc(lambda v: gmpy2.mul_2exp(v, e), 1, 1)
        with context(self.bits):
            return HPMatrix._wrap(np.asarray(f(self.data), dtype=object), self.bits)

    def with_precision(self, bits: int) -> "HPMatrix":
        return HPMatrix(self.data, bits)

    def max_abs(self) -> mpfr:
        with context(self.bits):
            return max(abs(v) for v in self.data.flat)

    def trace(self) -> mpfr:
        with context(self.bits):
            return sum(np.diagonal(self.data), mpfr(0, self.bits))

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.data.flat)

    def to_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.data], dtype=float)

    def equals(self, other: "HPMatrix") -> bool:
        return self.shape == other.shape and all(
            x == y for x, y in zip(self.data.flat, other.data.flat)
        )

    def _check_same_shape(self, other: "HPMatrix") -> None:
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")

    def __repr__(self) -> str:
        return f"HPMatrix(shape={self.shape}, bits={self.bits})"


def matmul(x: HPMatrix, y: HPMatrix) -> HPMatrix:
    if x.cols != y.rows:
        raise ValueError(f"dimension mismatch: {x.shape} @ {y.shape}")
    bits = max(x.bits, y.bits)
    with context(bits):
        return HPMatrix._wrap(np.dot(x.data, y.data), bits)


def max_abs_diff(x: HPMatrix, y: HPMatrix) -> mpfr:
    return (x - y).max_abs()


# ---------------------------------------------------------------------------
# symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenDecomposition:
    values: tuple
    vectors: HPMatrix

    def reconstruct(self) -> HPMatrix:
        q = self.vectors
        return q @ HPMatrix.diag(self.values, q.bits) @ q.T


def _default_tol(bits: int) -> mpfr:
    return gmpy2.mul_2exp(mpfr(1, bits), -(bits - 16))


def sym_eigen(
    m: HPMatrix,
    tol=None,
    guess: HPMatrix | None = None,
    max_sweeps: int = 100,
) -> EigenDecomposition:
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back sorted by descending absolute value (ties: larger
    signed value first, then diagonal position); in every eigenvector the
    entry of largest magnitude (lowest index on ties) is non-negative.

    ``guess`` is an optional orthogonal matrix whose columns approximate the
    eigenvectors; the rotations then start from ``guess.T @ m @ guess``.
    """
    n = m.rows
    if m.cols != n:
        raise ValueError(f"sym_eigen needs a square matrix, got {m.shape}")
    bits = m.bits
    with context(bits):
        tol = _default_tol(bits) if tol is None else mpfr(tol, bits)
        norm = m.max_abs()
        asym = (m - m.T).max_abs()
        if asym > tol * norm:
            raise NotSymmetric(f"asymmetry {float(asym):.3e} exceeds tol * |M|")
        half = mpfr("0.5", bits)
        s = (m.data + m.data.T) * half
        if guess is not None:
            s = np.dot(np.dot(guess.data.T, s), guess.data)
            s = (s + s.T) * half
            v = guess.data.copy()
        else:
            v = HPMatrix.identity(n, bits).data.copy()
        s = np.array(s, dtype=object)
        one = mpfr(1, bits)
        zero = mpfr(0, bits)
        stop = tol * norm
        if norm == 0:
            stop = zero
        for _sweep in range(max_sweeps):
            off = max((abs(s[p, q]) for p in range(n) for q in range(p + 1, n)), default=zero)
            if off <= stop:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = s[p, q]
                    if apq == 0 or abs(apq) <= stop / n:
                        continue
                    app = s[p, p]
                    aqq = s[q, q]
                    theta = (aqq - app) / (2 * apq)
                    t = one / (abs(theta) + gmpy2.sqrt(theta * theta + one))
                    if theta < 0:
                        t = -t
                    c = one / gmpy2.sqrt(t * t + one)
                    sn = t * c
                    colp = s[:, p].copy()
                    colq = s[:, q].copy()
                    newp = c * colp - sn * colq
                    newq = sn * colp + c * colq
                    s[:, p] = newp
                    s[:, q] = newq
                    s[p, :] = newp
                    s[q, :] = newq
                    s[p, p] = app - t * apq
                    s[q, q] = aqq + t * apq
                    s[p, q] = zero
                    s[q, p] = zero
                    vp = v[:, p].copy()
                    vq = v[:, q].copy()
                    v[:, p] = c * vp - sn * vq
                    v[:, q] = sn * vp + c * vq
        else:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")

        diag = [s[i, i] for i in range(n)]
        order = sorted(range(n), key=lambda i: (-abs(diag[i]), -diag[i], i))
        values = tuple(diag[i] for i in order)
        vecs = v[:, order].copy()
        for j in range(n):
            col = vecs[:, j]
            best = 0
            for i in range(1, n):
                if abs(col[i]) > abs(col[best]):
                    best = i
            if col[best] < 0:
                vecs[:, j] = -col
    return EigenDecomposition(values, HPMatrix._wrap(vecs, bits))


# ---------------------------------------------------------------------------
# power iteration with a Collatz-Wielandt enclosure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerResult:
    value: mpfr
    vector: np.ndarray
    lower: mpfr
    upper: mpfr
    iterations: int

    @property
    def width(self) -> mpfr:
        return self.upper - self.lower


def cw_ratios(x: np.ndarray, y: np.ndarray):
    """Min and max of ``y[i] / x[i]`` over a strictly positive ``x``."""
    bits = precision_of(*x[:1], *y[:1])
    lo = hi = None
    with context(bits):
        for xi, yi in zip(x, y):
            if not xi > 0:
                raise NonPositiveIterate("vector has a non-positive entry")
            r = yi / xi
            if lo is None or r < lo:
                lo = r
            if hi is None or r > hi:
                hi = r
    return lo, hi


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    tol,
    max_iters: int = 10_000,
    bits: int = DEFAULT_BOUND_BITS,
) -> PowerResult:
    """Dominant eigenpair of a non-negative irreducible operator.

    Starts from the all-ones vector.  Stops once the Rayleigh quotient moves
    by at most ``tol * lambda`` between iterations and the Collatz-Wielandt
    interval of the current iterate is no wider than ``tol * lambda``.
    """
    with context(bits):
        tol = mpfr(tol, bits)
        x = np.empty(dim, dtype=object)
        x.fill(mpfr(1, bits))
        prev = None
        for it in range(1, max_iters + 1):
            y = np.asarray(apply(x), dtype=object)
            lo, hi = cw_ratios(x, y)
            lam = np.dot(x, y) / np.dot(x, x)
            top = max(y)
            if not top > 0:
                raise NonPositiveIterate("operator annihilated the iterate")
            done = prev is not None and abs(lam - prev) <= tol * lam and hi - lo <= tol * lam
            if done:
                return PowerResult(lam, x, lo, hi, it)
            if any(not v > 0 for v in y):
                raise NonPositiveIterate("iterate lost strict positivity")
            prev = lam
            x = y / top
    raise NoConvergence(f"power iteration did not converge in {max_iters} iterations")


def random_orthogonal(n: int, bits: int, rng: np.random.Generator) -> HPMatrix:
    """Orthogonal matrix from Gram-Schmidt on a random float matrix, at ``bits``."""
    raw = as_mpfr_array(rng.standard_normal((n, n)), bits)
    with context(bits):
        cols = []
        for j in range(n):
            v = raw[:, j].copy()
            for u in cols:
                v = v - np.dot(u, v) * u
            for u in cols:
                v = v - np.dot(u, v) * u
            v = v / gmpy2.sqrt(np.dot(v, v))
            cols.append(v)
        arr = np.array(cols, dtype=object).T.copy()
    return HPMatrix._wrap(arr, bits)
