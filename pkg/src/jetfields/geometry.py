"""Bundle data for a trivialized fiber bundle over a rectangular base, and
the coordinate spaces derived from it (jet space, multimomentum spaces, the
unified jet-multimomentum spaces).  Everything lives in one global chart;
projections between spaces act as coordinate-subset maps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Tuple

from . import symexpr
from .symexpr import (
    AFFINE_MOMENTUM,
    CoordinateSymbol,
    Expression,
    base_symbol,
    field_symbol,
    momentum_symbol,
    velocity_symbol,
)

__all__ = ["SpaceTag", "Chart", "FieldModel", "build_model", "ModelError"]


class ModelError(Exception):
    pass


class SpaceTag(enum.Enum):
    JET = "jet"                              # (x, y, v)
    RESTRICTED_MOMENTUM = "restricted"       # (x, y, p^nu_A)
    EXTENDED_MOMENTUM = "extended"           # (x, y, p^nu_A, p)
    UNIFIED_W = "unified_w"                  # (x, y, v, p^nu_A, p)
    UNIFIED_W0 = "unified_w0"                # (x, y, v, p^nu_A)


def _coordinate_list(tag: SpaceTag, m: int, n: int) -> Tuple[CoordinateSymbol, ...]:
    coords = [base_symbol(nu) for nu in range(1, m + 1)]
    coords += [field_symbol(a) for a in range(1, n + 1)]
    if tag in (SpaceTag.JET, SpaceTag.UNIFIED_W, SpaceTag.UNIFIED_W0):
        coords += [
            velocity_symbol(a, nu)
            for a in range(1, n + 1)
            for nu in range(1, m + 1)
        ]
    if tag is not SpaceTag.JET:
        coords += [
            momentum_symbol(a, nu)
            for a in range(1, n + 1)
            for nu in range(1, m + 1)
        ]
    if tag in (SpaceTag.EXTENDED_MOMENTUM, SpaceTag.UNIFIED_W):
        coords.append(AFFINE_MOMENTUM)
    return tuple(coords)


@dataclass(frozen=True)
class Chart:
    """An ordered coordinate environment for one of the derived spaces."""

    tag: SpaceTag
    m: int
    n: int
    coords: Tuple[CoordinateSymbol, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "coords", _coordinate_list(self.tag, self.m, self.n))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(s.name for s in self.coords)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ModelError(f"coordinate {name!r} not in {self.tag.value} chart")


@dataclass(frozen=True)
class FieldModel:
    """Base dimension m, fiber dimension n, Lagrangian over (x, y, v); the
    volume form is fixed to dx1^...^dxm."""

    m: int
    n: int
    lagrangian: Expression

    def chart(self, tag: SpaceTag) -> Chart:
        return Chart(tag, self.m, self.n)

    @property
    def jet_chart(self) -> Chart:
        return self.chart(SpaceTag.JET)

    @property
    def momentum_chart(self) -> Chart:
        return self.chart(SpaceTag.RESTRICTED_MOMENTUM)


def build_model(m: int, n: int, lagrangian_text: str) -> FieldModel:
    if m < 1 or n < 1:
        raise ModelError("base and fiber dimensions must be at least 1")
    lagrangian = symexpr.parse(lagrangian_text, dims=(m, n))
    for sym in symexpr.free_symbols(lagrangian):
        if sym.kind in ("momentum", "affine"):
            raise ModelError(
                f"momentum symbol {sym.name!r} not allowed in a Lagrangian"
            )
        if sym.kind == "formal":
            raise ModelError(f"formal symbol {sym.name!r} not allowed in a Lagrangian")
    return FieldModel(m, n, lagrangian)
