"""Dyadic mesh hierarchy on the unit square.

Cells are addressed by (level, i, j): level l partitions [0,1]^2 into
2^l x 2^l squares of side 2^-l, with integer indices 0 <= i, j < 2^l.
All adjacency arithmetic is integer-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

#: Sentinel returned by neighbor() when the face lies on the domain boundary.
BOUNDARY = "boundary"

#: Child offsets within a refined cell, in a fixed deterministic order.
CHILD_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))


class CellIndex(NamedTuple):
    l: int
    i: int
    j: int


@dataclass(frozen=True)
class CellGeometry:
    center: tuple[float, float]
    side: float
    area: float


def _check(idx: CellIndex) -> None:
    l, i, j = idx
    if l < 0:
        raise IndexError(f"negative level {l}")
    n = 1 << l
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"cell index ({l},{i},{j}) outside the level-{l} grid")


def geometry(idx: CellIndex) -> CellGeometry:
    """Exact dyadic geometry of a cell: center, side 2^-l, area 4^-l."""
    _check(idx)
    l, i, j = idx
    side = 2.0**-l
    return CellGeometry(
        center=((i + 0.5) * side, (j + 0.5) * side),
        side=side,
        area=side * side,
    )


def children(idx: CellIndex, finest_level: int | None = None) -> tuple[CellIndex, ...]:
    """Four children of a cell, ordered by CHILD_OFFSETS."""
    _check(idx)
    l, i, j = idx
    if finest_level is not None and l >= finest_level:
        raise ValueError(f"cannot refine level {l} beyond finest level {finest_level}")
    return tuple(CellIndex(l + 1, 2 * i + e1, 2 * j + e2) for e1, e2 in CHILD_OFFSETS)


def parent(idx: CellIndex) -> CellIndex:
    _check(idx)
    l, i, j = idx
    if l == 0:
        raise ValueError("root cell has no parent")
    return CellIndex(l - 1, i // 2, j // 2)


def neighbor(idx: CellIndex, direction: tuple[int, int]):
    """Edge neighbor of a cell, or BOUNDARY when the face lies on the domain edge.

    direction is a unit offset: (+1,0), (-1,0), (0,+1) or (0,-1).
    """
    _check(idx)
    di, dj = direction
    if abs(di) + abs(dj) != 1:
        raise ValueError(f"direction must be a unit axis offset, got {direction}")
    l, i, j = idx
    ni, nj = i + di, j + dj
    n = 1 << l
    if not (0 <= ni < n and 0 <= nj < n):
        return BOUNDARY
    return CellIndex(l, ni, nj)


def mirror_index(k: int, n: int) -> int:
    """Reflect an out-of-range index back into [0, n) across the domain edge.

    Reflection duplicates the boundary cell (k = -1 maps to 0, k = n to n-1),
    matching the no-flux boundary extension used by the prediction stencils.
    """
    while k < 0 or k >= n:
        if k < 0:
            k = -k - 1
        else:
            k = 2 * n - 1 - k
    return k
