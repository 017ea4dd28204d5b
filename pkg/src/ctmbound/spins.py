"""Spins, adjacency-constrained models and the 0/1 face weight.

Orientation is fixed for the whole package: ``VERTICAL`` runs along a column
(the cylinder cut, index ``i`` of a cut state) and ``HORIZONTAL`` is the
transfer direction, between a column ``sigma`` and the next column ``tau``.

A face is written ``(a, b, c, d)`` with ``a`` top-left, ``b`` top-right,
``c`` bottom-left and ``d`` bottom-right::

    a --- b        left column = sigma, right column = tau
    |     |        bottom row = index i, top row = i + 1
    c --- d
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence


class Spin(enum.IntEnum):
    VACANT = 0
    OCCUPIED = 1


SPINS = (Spin.VACANT, Spin.OCCUPIED)


class Direction(enum.Enum):
    HORIZONTAL = "H"
    VERTICAL = "V"
    DIAGONAL_NE = "NE"
    DIAGONAL_NW = "NW"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    forbidden: frozenset

    @property
    def token(self) -> str:
        return self.name

    @property
    def diagonal_symmetric(self) -> bool:
        """True when the face weight is unchanged by swapping the two lattice axes.

        Models without this symmetry need separate half-row matrices for the
        two lattice directions during CTMRG.
        """
        return (Direction.HORIZONTAL in self.forbidden) == (
            Direction.VERTICAL in self.forbidden
        )

    def __str__(self) -> str:
        return self.name


HARD_SQUARES = ModelSpec(
    "hard-squares", frozenset({Direction.HORIZONTAL, Direction.VERTICAL})
)
NAK = ModelSpec("nak", frozenset(Direction))
# vertical adjacency (along the cut) is allowed; everything else is forbidden
RWIM = ModelSpec(
    "rwim",
    frozenset({Direction.HORIZONTAL, Direction.DIAGONAL_NE, Direction.DIAGONAL_NW}),
)

MODELS = {m.name: m for m in (HARD_SQUARES, NAK, RWIM)}


def get_model(token: str | ModelSpec) -> ModelSpec:
    if isinstance(token, ModelSpec):
        return token
    try:
        return MODELS[token]
    except KeyError:
        raise ValueError(
            f"unknown model {token!r}; expected one of {sorted(MODELS)}"
        ) from None


class Face(NamedTuple):
    a: int  # top-left
    b: int  # top-right
    c: int  # bottom-left
    d: int  # bottom-right


def pair_legal(model: ModelSpec, s: int, t: int, direction: Direction) -> bool:
    return not (s and t and direction in model.forbidden)


def face_weight(model: ModelSpec, a: int, b: int, c: int, d: int) -> int:
    """Return 1 if the four corner spins of a face are a legal patch, else 0."""
    f = model.forbidden
    if Direction.VERTICAL in f and ((c and a) or (d and b)):
        return 0
    if Direction.HORIZONTAL in f and ((c and d) or (a and b)):
        return 0
    if Direction.DIAGONAL_NE in f and c and b:
        return 0
    if Direction.DIAGONAL_NW in f and d and a:
        return 0
    return 1


FACE_PAIRS = (
    (Direction.VERTICAL, "c", "a"),
    (Direction.VERTICAL, "d", "b"),
    (Direction.HORIZONTAL, "c", "d"),
    (Direction.HORIZONTAL, "a", "b"),
    (Direction.DIAGONAL_NE, "c", "b"),
    (Direction.DIAGONAL_NW, "d", "a"),
)


def face_weight_from_pairs(model: ModelSpec, face: Face) -> int:
    """Reference form of :func:`face_weight` as a product over the six in-face pairs."""
    w = 1
    for direction, s, t in FACE_PAIRS:
        w *= int(pair_legal(model, getattr(face, s), getattr(face, t), direction))
    return w


def face_table(model: ModelSpec) -> dict[tuple[int, int, int, int], int]:
    return {
        (a, b, c, d): face_weight(model, a, b, c, d)
        for a in SPINS
        for b in SPINS
        for c in SPINS
        for d in SPINS
    }


def column_legal(model: ModelSpec, state: Sequence[int], cyclic: bool = True) -> bool:
    """Check vertical legality of a column; the wrap-around pair only if ``cyclic``."""
    m = len(state)
    if Direction.VERTICAL not in model.forbidden:
        return True
    last = m if cyclic else m - 1
    return all(not (state[i] and state[(i + 1) % m]) for i in range(last))


def bits_to_str(state: Iterable[int]) -> str:
    return "".join("1" if s else "0" for s in state)


def str_to_bits(text: str) -> tuple[int, ...]:
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"not a bit string: {text!r}")
    return tuple(int(ch) for ch in text)
