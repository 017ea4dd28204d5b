"""Legal cut states up to rotation and reflection, and their sharding.

Necklaces (lexicographically least rotations) are produced in increasing
order by the recursive Fredricksen-Kessler-Maiorana scheme.  Prefixes with
two adjacent occupied spins are pruned when the model forbids vertical
pairs, so illegal strings are never visited.  A necklace is kept as a
bracelet representative when it is no larger than the least rotation of
its reversal.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import islice
from typing import Iterator

from .errors import IllegalState, IndexOutOfRange
from .exact import Boundary, CutState
from .spins import Direction, ModelSpec, bits_to_str, column_legal, get_model, str_to_bits


@dataclass(frozen=True, order=True)
class Bracelet:
    bits: tuple

    @property
    def m(self) -> int:
        return len(self.bits)

    @property
    def representative(self) -> CutState:
        return CutState(self.bits, Boundary.CYCLIC)

    @property
    def text(self) -> str:
        return bits_to_str(self.bits)

    @classmethod
    def from_text(cls, text: str) -> "Bracelet":
        return cls(str_to_bits(text))

    def orbit(self) -> set:
        """All rotations and reflections of the representative."""
        return set(_orbit(self.bits))

    def __str__(self) -> str:
        return self.text


def _orbit(bits: tuple):
    m = len(bits)
    rev = bits[::-1]
    for k in range(m):
        yield bits[k:] + bits[:k]
        yield rev[k:] + rev[:k]


def least_rotation(bits: tuple) -> tuple:
    """Lexicographically least rotation (Booth's algorithm, linear time)."""
    s = bits + bits
    n = len(bits)
    f = [-1] * len(s)
    k = 0
    for j in range(1, len(s)):
        sj = s[j]
        i = f[j - k - 1]
        while i != -1 and sj != s[k + i + 1]:
            if sj < s[k + i + 1]:
                k = j - i - 1
            i = f[i]
        if sj != s[k + i + 1]:
            if sj < s[k]:
                k = j
            f[j - k] = -1
        else:
            f[j - k] = i + 1
    return s[k:k + n]


def canonicalize(state, model: ModelSpec | str | None = None) -> Bracelet:
    """Least representative over all rotations and reflections.

    ``state`` may be a :class:`CutState`, a bit tuple or a bit string.  With a
    model given, the state must be a legal cyclic column for it.
    """
    if isinstance(state, CutState):
        if state.boundary is not Boundary.CYCLIC:
            raise IllegalState("bracelets are defined for cyclic cut states only")
        bits = tuple(state.spins)
    elif isinstance(state, str):
        bits = str_to_bits(state)
    else:
        bits = tuple(int(b) for b in state)
    if not bits or any(b not in (0, 1) for b in bits):
        raise IllegalState(f"not a binary cut state: {state!r}")
    if model is not None and not column_legal(get_model(model), bits, cyclic=True):
        raise IllegalState(f"{bits_to_str(bits)} is not a legal column for {get_model(model)}")
    return Bracelet(min(least_rotation(bits), least_rotation(bits[::-1])))


def enumerate_bracelets(model: ModelSpec | str, m: int) -> Iterator[Bracelet]:
    """Stream every legal bracelet of length ``m`` once, in increasing order."""
    model = get_model(model)
    if m < 2:
        raise ValueError(f"bracelets need m >= 2, got {m}")
    no_pairs = Direction.VERTICAL in model.forbidden
    a = [0] * (m + 1)  # a[1..m]; a[0] is a sentinel

    def gen(t: int, p: int):
        if t > m:
            if m % p == 0 and not (no_pairs and a[m] and a[1]):
                word = tuple(a[1:])
                if word <= least_rotation(word[::-1]):
                    yield Bracelet(word)
            return
        a[t] = a[t - p]
        if not (no_pairs and a[t] and t > 1 and a[t - 1]):
            yield from gen(t + 1, p)
        if a[t - p] == 0:
            a[t] = 1
            if not (no_pairs and t > 1 and a[t - 1]):
                yield from gen(t + 1, t)
            a[t] = 0

    return gen(1, 1)


@lru_cache(maxsize=256)
def count_bracelets(model: ModelSpec | str, m: int) -> int:
    return sum(1 for _ in enumerate_bracelets(model, m))


def brute_force_bracelets(model: ModelSpec | str, m: int) -> list:
    """Reference enumeration over all ``2**m`` strings (small ``m`` only)."""
    model = get_model(model)
    found = set()
    for code in range(1 << m):
        bits = tuple((code >> (m - 1 - i)) & 1 for i in range(m))
        if column_legal(model, bits, cyclic=True):
            found.add(canonicalize(bits).bits)
    return [Bracelet(b) for b in sorted(found)]


@dataclass(frozen=True)
class ShardSpec:
    model: ModelSpec
    m: int
    shard_count: int
    shard_index: int
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start

    def bracelets(self) -> Iterator[tuple]:
        """``(global index, bracelet)`` pairs of this shard."""
        stream = islice(enumerate_bracelets(self.model, self.m), self.start, self.stop)
        return enumerate(stream, self.start)


def shard_range(model: ModelSpec | str, m: int, shard_count: int, shard_index: int) -> ShardSpec:
    """Contiguous slice of the canonical order; sizes differ by at most one."""
    model = get_model(model)
    if shard_count < 1:
        raise IndexOutOfRange(f"shard_count must be positive, got {shard_count}")
    if not 0 <= shard_index < shard_count:
        raise IndexOutOfRange(f"shard_index {shard_index} not in [0, {shard_count})")
    total = count_bracelets(model, m)
    q, r = divmod(total, shard_count)
    start = shard_index * q + min(shard_index, r)
    stop = start + q + (1 if shard_index < r else 0)
    return ShardSpec(model, m, shard_count, shard_index, start, stop)
