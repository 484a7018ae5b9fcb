"""Discretized sections over rectangular base grids: storage, finite
differences, jet prolongation, vectorized expression evaluation, CSV I/O.

Grid values are node-collocated; derivatives are central in the interior
and second-order one-sided at the boundary (numpy.gradient).  CSV columns
follow the header x1,...,xm,y1,...[,v...,p...], row-major over the grid.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import symexpr
from .geometry import FieldModel
from .symexpr import (
    Add,
    Call,
    Const,
    Coord,
    DomainError,
    Expression,
    Mul,
    Opaque,
    Pow,
)

__all__ = [
    "SectionGrid",
    "GridError",
    "evaluate_array",
    "jet_prolongation",
    "lagrangian_density",
    "write_csv",
    "read_csv",
]


class GridError(Exception):
    pass


@dataclass
class SectionGrid:
    """Field (and optionally velocity/momentum) values over a rectangular
    grid.  values maps symbol names like 'y1', 'v1_2', 'p1_1' to arrays of
    the grid shape."""

    domain: Tuple[Tuple[float, float], ...]
    shape: Tuple[int, ...]
    values: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.domain) != len(self.shape):
            raise GridError("domain and resolution rank mismatch")
        if any(r < 2 for r in self.shape):
            raise GridError("need at least 2 points per axis")
        for name, arr in self.values.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != tuple(self.shape):
                raise GridError(f"array {name!r} has shape {arr.shape}, grid {self.shape}")
            self.values[name] = arr

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def axis_points(self, axis: int) -> np.ndarray:
        a, b = self.domain[axis]
        return np.linspace(a, b, self.shape[axis])

    def spacing(self, axis: int) -> float:
        a, b = self.domain[axis]
        return (b - a) / (self.shape[axis] - 1)

    def meshes(self) -> Dict[str, np.ndarray]:
        axes = [self.axis_points(i) for i in range(self.ndim)]
        grids = np.meshgrid(*axes, indexing="ij")
        return {f"x{i + 1}": g for i, g in enumerate(grids)}

    def derivative(self, name: str, axis: int) -> np.ndarray:
        if name not in self.values:
            raise GridError(f"no values stored for {name!r}")
        return np.gradient(self.values[name], self.spacing(axis), axis=axis)

    def environment(self) -> Dict[str, np.ndarray]:
        env = self.meshes()
        env.update(self.values)
        return env

    def copy(self) -> "SectionGrid":
        return SectionGrid(
            self.domain, self.shape, {k: v.copy() for k, v in self.values.items()}
        )


# ---------------------------------------------------------------------------
# vectorized expression evaluation


def evaluate_array(e: Expression, env: Mapping[str, object]):
    """Evaluate an expression over numpy arrays (or scalars).  Domain errors
    carry the offending subexpression and the first offending grid index."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Coord):
        name = e.symbol.name
        if name not in env:
            raise symexpr.UnknownSymbolError(f"no value assigned to symbol {name!r}")
        return env[name]
    if isinstance(e, Add):
        out = 0.0
        for t in e.terms:
            out = out + evaluate_array(t, env)
        return out
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out = out * evaluate_array(f, env)
        return out
    if isinstance(e, Pow):
        b = np.asarray(evaluate_array(e.base, env), dtype=float)
        ex = e.exponent
        if ex < 0 and np.any(b == 0.0):
            raise DomainError(_located("division by zero", b == 0.0), e)
        if ex.denominator != 1 and np.any(b < 0.0):
            raise DomainError(
                _located("fractional power of a negative value", b < 0.0), e
            )
        return b ** float(ex)
    if isinstance(e, Call):
        u = np.asarray(evaluate_array(e.arg, env), dtype=float)
        if e.fname == "log":
            if np.any(u <= 0.0):
                raise DomainError(_located("log of a non-positive value", u <= 0.0), e)
            return np.log(u)
        return getattr(np, e.fname)(u)
    if isinstance(e, Opaque):
        # opaque maps take scalar environments; broadcast over the grid
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items() if k in e.arg_names}
        shape = None
        for v in arrays.values():
            if v.ndim:
                shape = v.shape
                break
        if shape is None:
            return e.fn({k: float(v) for k, v in arrays.items()})
        out = np.empty(shape)
        for idx in np.ndindex(shape):
            out[idx] = e.fn(
                {
                    k: float(v[idx]) if v.ndim else float(v)
                    for k, v in arrays.items()
                }
            )
        return out
    raise symexpr.ExpressionError(f"cannot evaluate node {type(e).__name__}")


def _located(message: str, bad_mask) -> str:
    mask = np.asarray(bad_mask)
    if mask.ndim == 0:
        return message
    where = np.argwhere(mask)
    return f"{message} at grid index {tuple(int(i) for i in where[0])}"


# ---------------------------------------------------------------------------
# jet prolongation and densities


def jet_prolongation(model: FieldModel, grid: SectionGrid) -> SectionGrid:
    """Fill velocity arrays v{A}_{nu} from the y arrays by differences."""
    out = grid.copy()
    for a in range(1, model.n + 1):
        for nu in range(1, model.m + 1):
            out.values[f"v{a}_{nu}"] = grid.derivative(f"y{a}", nu - 1)
    return out


def lagrangian_density(model: FieldModel, grid: SectionGrid) -> np.ndarray:
    """Lagrangian evaluated on the (prolonged) section, over the grid."""
    if any(
        f"v{a}_{nu}" not in grid.values
        for a in range(1, model.n + 1)
        for nu in range(1, model.m + 1)
    ):
        grid = jet_prolongation(model, grid)
    env = grid.environment()
    out = evaluate_array(model.lagrangian, env)
    return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()


# ---------------------------------------------------------------------------
# CSV I/O


def _column_names(grid: SectionGrid) -> List[str]:
    m = grid.ndim
    coords = [f"x{i + 1}" for i in range(m)]
    fields = sorted(n for n in grid.values if n.startswith("y"))
    vels = sorted(n for n in grid.values if n.startswith("v"))
    moms = sorted(n for n in grid.values if n.startswith("p"))
    return coords + fields + vels + moms


def write_csv(grid: SectionGrid) -> str:
    names = _column_names(grid)
    meshes = grid.meshes()
    columns = [meshes.get(n, grid.values.get(n)) for n in names]
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    flat = [np.asarray(c).reshape(-1) for c in columns]
    for row in zip(*flat):
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def read_csv(text: str) -> SectionGrid:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise GridError("CSV has no data rows")
    names = [n.strip() for n in lines[0].split(",")]
    data = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float
    )
    if data.shape[1] != len(names):
        raise GridError("CSV row width does not match header")
    coord_cols = [i for i, n in enumerate(names) if n.startswith("x")]
    m = len(coord_cols)
    if m == 0:
        raise GridError("CSV has no base-coordinate columns")
    # recover the grid shape from the coordinate columns (row-major order)
    axes: List[np.ndarray] = []
    for i in coord_cols:
        axes.append(np.unique(data[:, i]))
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != data.shape[0]:
        raise GridError("CSV rows do not form a full rectangular grid")
    domain = tuple((float(ax[0]), float(ax[-1])) for ax in axes)
    values = {}
    for i, n in enumerate(names):
        if i in coord_cols:
            continue
        values[n] = data[:, i].reshape(shape)
    return SectionGrid(domain, shape, values)
