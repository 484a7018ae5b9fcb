"""Exterior calculus over a coordinate chart.

k-forms are stored as coefficient maps indexed by strictly increasing
coordinate-index tuples.  The interior product is the antiderivation acting
from the left, so i(X1 ^ ... ^ Xr) omega = i(Xr) ... i(X1) omega for
decomposable multivectors, and d^{m-1}x_nu = i(d/dx^nu) d^m x.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import symexpr
from .geometry import Chart, SpaceTag
from .symexpr import (
    Expression,
    ZERO,
    ONE,
    add,
    const,
    coord,
    differentiate,
    evaluate,
    mul,
    neg,
    substitute,
)

__all__ = [
    "CoordinateForm",
    "VectorField",
    "ConnectionCoefficients",
    "FormError",
    "zero_form",
    "function_form",
    "basis_one_form",
    "wedge",
    "exterior_derivative",
    "interior_product",
    "contract_multivector",
    "insert_endomorphism",
    "pullback",
    "kernel_dimension",
    "involutivity_check",
    "lie_bracket",
    "volume_form",
    "base_volume_contraction",
]

RANK_TOL = 1e-9


class FormError(Exception):
    pass


@dataclass(frozen=True)
class CoordinateForm:
    chart: Chart
    degree: int
    coefficients: Mapping[Tuple[int, ...], Expression]

    def __post_init__(self):
        if self.degree < 0 or self.degree > self.chart.dim:
            raise FormError("form degree outside 0..dim")
        clean: Dict[Tuple[int, ...], Expression] = {}
        for idx, c in self.coefficients.items():
            idx = tuple(idx)
            if len(idx) != self.degree:
                raise FormError(f"index tuple {idx} has wrong length")
            if any(a >= b for a, b in zip(idx, idx[1:])):
                raise FormError(f"index tuple {idx} not strictly increasing")
            if not c.is_zero():
                clean[idx] = c
        object.__setattr__(self, "coefficients", clean)

    def coefficient(self, idx: Tuple[int, ...]) -> Expression:
        return self.coefficients.get(tuple(idx), ZERO)

    def is_zero(self) -> bool:
        return not self.coefficients

    def __add__(self, other: "CoordinateForm") -> "CoordinateForm":
        self._check_compatible(other)
        coeffs = dict(self.coefficients)
        for idx, c in other.coefficients.items():
            coeffs[idx] = add(coeffs.get(idx, ZERO), c)
        return CoordinateForm(self.chart, self.degree, coeffs)

    def __sub__(self, other: "CoordinateForm") -> "CoordinateForm":
        return self + other.scale(const(-1))

    def scale(self, factor: Expression) -> "CoordinateForm":
        return CoordinateForm(
            self.chart,
            self.degree,
            {idx: mul(factor, c) for idx, c in self.coefficients.items()},
        )

    def _check_compatible(self, other: "CoordinateForm"):
        if self.chart != other.chart or self.degree != other.degree:
            raise FormError("forms live on different spaces or degrees")

    def equals(self, other: "CoordinateForm", rng=None) -> bool:
        """Normal-form equality coefficient by coefficient, with the random
        point fallback of the expression layer."""
        self._check_compatible(other)
        keys = set(self.coefficients) | set(other.coefficients)
        return all(
            symexpr.sym_equal(self.coefficient(k), other.coefficient(k), rng=rng)
            for k in keys
        )

    def evaluate_coefficients(self, point: Mapping[str, float]) -> Dict[Tuple[int, ...], float]:
        return {idx: evaluate(c, point) for idx, c in self.coefficients.items()}

    def evaluate_on_vectors(
        self, point: Mapping[str, float], vectors: Sequence[Sequence[float]]
    ) -> float:
        """Multilinear evaluation omega(V1, ..., Vk) at a point, with the
        vectors given in chart components."""
        if len(vectors) != self.degree:
            raise FormError("need exactly k vectors for a k-form")
        total = 0.0
        for idx, c in self.coefficients.items():
            cval = evaluate(c, point)
            if cval == 0.0:
                continue
            # determinant of the selected components
            sub = [[v[i] for i in idx] for v in vectors]
            total += cval * _det(sub)
        return total

    def report_lines(self) -> List[str]:
        names = self.chart.names
        lines = []
        for idx in sorted(self.coefficients):
            label = "^".join(f"d{names[i]}" for i in idx) if idx else "1"
            lines.append(f"{label}: {self.coefficients[idx]}")
        if not lines:
            lines.append("0")
        return lines


def _det(rows: List[List[float]]) -> float:
    k = len(rows)
    if k == 0:
        return 1.0
    if k == 1:
        return rows[0][0]
    if k == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    if k == 3:
        a, b, c = rows
        return (
            a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
        )
    total = 0.0
    for j in range(k):
        minor = [row[:j] + row[j + 1 :] for row in rows[1:]]
        total += ((-1) ** j) * rows[0][j] * _det(minor)
    return total


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    components: Mapping[str, Expression]

    def __post_init__(self):
        names = set(self.chart.names)
        clean = {}
        for name, c in self.components.items():
            if name not in names:
                raise FormError(f"component {name!r} not a chart coordinate")
            if not c.is_zero():
                clean[name] = c
        object.__setattr__(self, "components", clean)

    def component(self, name: str) -> Expression:
        return self.components.get(name, ZERO)

    def evaluate(self, point: Mapping[str, float]) -> List[float]:
        return [evaluate(self.component(n), point) for n in self.chart.names]


@dataclass(frozen=True)
class ConnectionCoefficients:
    """Horizontal fields X_nu = d/dx^nu + vertical part, one per base index;
    the d/dx^mu component of X_nu must be the Kronecker delta."""

    chart: Chart
    horizontal_fields: Tuple[VectorField, ...]

    def __post_init__(self):
        if len(self.horizontal_fields) != self.chart.m:
            raise FormError("need one horizontal field per base direction")
        for nu, X in enumerate(self.horizontal_fields, start=1):
            if X.chart != self.chart:
                raise FormError("horizontal field on the wrong space")
            for mu in range(1, self.chart.m + 1):
                want = ONE if mu == nu else ZERO
                if X.component(f"x{mu}") != want:
                    raise FormError(
                        f"horizontal field {nu} has base component "
                        f"d/dx{mu} != {want}"
                    )


# ---------------------------------------------------------------------------
# constructors


def zero_form(chart: Chart, degree: int) -> CoordinateForm:
    return CoordinateForm(chart, degree, {})


def function_form(chart: Chart, f: Expression) -> CoordinateForm:
    return CoordinateForm(chart, 0, {(): f})


def basis_one_form(chart: Chart, name: str) -> CoordinateForm:
    return CoordinateForm(chart, 1, {(chart.index_of(name),): ONE})


def volume_form(chart: Chart) -> CoordinateForm:
    """dx1 ^ ... ^ dxm pulled back to the chart."""
    idx = tuple(chart.index_of(f"x{nu}") for nu in range(1, chart.m + 1))
    return CoordinateForm(chart, chart.m, {idx: ONE})


def _merge_indices(i1: Tuple[int, ...], i2: Tuple[int, ...]):
    """Sort the concatenation, returning (sign, sorted tuple) or None if a
    repeated index kills the term."""
    merged = list(i1 + i2)
    if len(set(merged)) != len(merged):
        return None
    sign = 1
    # insertion sort, counting swaps
    for i in range(1, len(merged)):
        j = i
        while j > 0 and merged[j - 1] > merged[j]:
            merged[j - 1], merged[j] = merged[j], merged[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(merged)


def wedge(a: CoordinateForm, b: CoordinateForm) -> CoordinateForm:
    if a.chart != b.chart:
        raise FormError("wedge of forms on different spaces")
    coeffs: Dict[Tuple[int, ...], Expression] = {}
    for i1, c1 in a.coefficients.items():
        for i2, c2 in b.coefficients.items():
            merged = _merge_indices(i1, i2)
            if merged is None:
                continue
            sign, idx = merged
            term = mul(const(sign), c1, c2)
            coeffs[idx] = add(coeffs.get(idx, ZERO), term)
    return CoordinateForm(a.chart, a.degree + b.degree, coeffs)


# ---------------------------------------------------------------------------
# operations


def exterior_derivative(omega: CoordinateForm) -> CoordinateForm:
    if omega.degree >= omega.chart.dim:
        raise FormError("exterior derivative would exceed the space dimension")
    chart = omega.chart
    coeffs: Dict[Tuple[int, ...], Expression] = {}
    for idx, c in omega.coefficients.items():
        for j, sym in enumerate(chart.coords):
            dc = differentiate(c, sym)
            if dc.is_zero():
                continue
            merged = _merge_indices((j,), idx)
            if merged is None:
                continue
            sign, new_idx = merged
            coeffs[new_idx] = add(coeffs.get(new_idx, ZERO), mul(const(sign), dc))
    return CoordinateForm(chart, omega.degree + 1, coeffs)


def interior_product(X: VectorField, omega: CoordinateForm) -> CoordinateForm:
    if X.chart != omega.chart:
        raise FormError("vector field and form on different spaces")
    if omega.degree == 0:
        raise FormError("cannot contract a 0-form")
    chart = omega.chart
    coeffs: Dict[Tuple[int, ...], Expression] = {}
    for idx, c in omega.coefficients.items():
        for pos, i in enumerate(idx):
            comp = X.component(chart.names[i])
            if comp.is_zero():
                continue
            sign = (-1) ** pos
            new_idx = idx[:pos] + idx[pos + 1 :]
            term = mul(const(sign), comp, c)
            coeffs[new_idx] = add(coeffs.get(new_idx, ZERO), term)
    return CoordinateForm(chart, omega.degree - 1, coeffs)


def contract_multivector(
    omega: CoordinateForm, fields: Sequence[VectorField]
) -> CoordinateForm:
    if len(fields) > omega.degree:
        raise FormError("more fields than the form degree")
    out = omega
    for X in fields:
        out = interior_product(X, out)
    return out


def insert_endomorphism(
    omega: CoordinateForm, nabla: ConnectionCoefficients
) -> CoordinateForm:
    """Argument-wise insertion of the horizontal projector h of nabla:
    (i(h)w)(X1..Xk) = sum_i w(X1,..,hXi,..,Xk) = sum_nu dx^nu ^ i(X_nu) w."""
    if omega.chart != nabla.chart:
        raise FormError("form and connection on different spaces")
    if omega.degree < 1:
        raise FormError("insertion needs a form of degree >= 1")
    out = zero_form(omega.chart, omega.degree)
    for nu, X in enumerate(nabla.horizontal_fields, start=1):
        out = out + wedge(basis_one_form(omega.chart, f"x{nu}"), interior_product(X, omega))
    return out


def pullback(
    omega: CoordinateForm,
    target_map: Mapping[str, Expression],
    source_chart: Chart,
) -> CoordinateForm:
    """Pull omega (on a target chart) back along the map whose target
    coordinates are given as expressions over the source chart."""
    target_chart = omega.chart
    for name in target_chart.names:
        if name not in target_map:
            raise FormError(f"map does not supply target coordinate {name!r}")
    differentials: Dict[int, CoordinateForm] = {}
    for i, name in enumerate(target_chart.names):
        expr = target_map[name]
        coeffs = {}
        for j, sym in enumerate(source_chart.coords):
            d = differentiate(expr, sym)
            if not d.is_zero():
                coeffs[(j,)] = d
        differentials[i] = CoordinateForm(source_chart, 1, coeffs)
    out = zero_form(source_chart, omega.degree)
    for idx, c in omega.coefficients.items():
        term = function_form(source_chart, substitute(c, target_map))
        factor: CoordinateForm = term
        for i in idx:
            factor = wedge(factor, differentials[i])
        out = out + factor
    return out


def _rank(matrix: List[List[float]], tol: float = RANK_TOL) -> int:
    """Rank by column elimination with partial pivoting; tolerance applied
    to entries scaled by the largest magnitude in the matrix."""
    if not matrix or not matrix[0]:
        return 0
    a = [row[:] for row in matrix]
    rows, cols = len(a), len(a[0])
    scale = max((abs(x) for row in a for x in row), default=0.0)
    if scale == 0.0:
        return 0
    threshold = tol * scale
    rank = 0
    row = 0
    for col in range(cols):
        pivot = max(range(row, rows), key=lambda r: abs(a[r][col]), default=None)
        if pivot is None or abs(a[pivot][col]) <= threshold:
            continue
        a[row], a[pivot] = a[pivot], a[row]
        pv = a[row][col]
        for r in range(row + 1, rows):
            f = a[r][col] / pv
            if f != 0.0:
                for cc in range(col, cols):
                    a[r][cc] -= f * a[row][cc]
        rank += 1
        row += 1
        if row == rows:
            break
    return rank


def kernel_dimension(omega: CoordinateForm, point: Mapping[str, float]) -> int:
    """dim { X : i(X) omega = 0 } at the point; 0 certifies the form is
    multisymplectic there."""
    if omega.degree < 2:
        raise FormError("kernel dimension needs a form of degree >= 2")
    chart = omega.chart
    rows_index: Dict[Tuple[int, ...], int] = {}
    columns: List[Dict[int, float]] = []
    for j in range(chart.dim):
        e_j = VectorField(chart, {chart.names[j]: ONE})
        contracted = interior_product(e_j, omega)
        col: Dict[int, float] = {}
        for idx, c in contracted.coefficients.items():
            if idx not in rows_index:
                rows_index[idx] = len(rows_index)
            col[rows_index[idx]] = evaluate(c, point)
        columns.append(col)
    nrows = len(rows_index)
    matrix = [[columns[j].get(r, 0.0) for j in range(chart.dim)] for r in range(nrows)]
    return chart.dim - _rank(matrix)


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    if X.chart != Y.chart:
        raise FormError("bracket of fields on different spaces")
    chart = X.chart
    comps: Dict[str, Expression] = {}
    for name in chart.names:
        parts = []
        for sym in chart.coords:
            xs = X.component(sym.name)
            ys = Y.component(sym.name)
            if not xs.is_zero():
                parts.append(mul(xs, differentiate(Y.component(name), sym)))
            if not ys.is_zero():
                parts.append(neg(mul(ys, differentiate(X.component(name), sym))))
        comps[name] = add(*parts) if parts else ZERO
    return VectorField(chart, comps)


def involutivity_check(
    fields: Sequence[VectorField],
    points: Sequence[Mapping[str, float]],
    tol: float = RANK_TOL,
):
    """True iff every Lie bracket stays in the pointwise span of the fields
    at every sample point.  Returns (ok, witness); witness is the first
    failing (i, j, point).  Pointwise dependent fields raise."""
    if not fields:
        raise FormError("need at least one field")
    chart = fields[0].chart
    brackets = {}
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            brackets[(i, j)] = lie_bracket(fields[i], fields[j])
    for point in points:
        span_cols = [X.evaluate(point) for X in fields]
        base_matrix = [[col[r] for col in span_cols] for r in range(chart.dim)]
        if _rank(base_matrix, tol) < len(fields):
            raise FormError(f"fields linearly dependent at sample point {dict(point)}")
        for (i, j), b in sorted(brackets.items()):
            bvec = b.evaluate(point)
            augmented = [row[:] + [bvec[r]] for r, row in enumerate(base_matrix)]
            if _rank(augmented, tol) > len(fields):
                return False, (i, j, dict(point))
    return True, None


def base_volume_contraction(
    fields: Sequence[VectorField], point: Mapping[str, float]
) -> float:
    """i(X1^...^Xm)(dx1^...^dxm) at a point; nonzero certifies transversality
    over the base."""
    chart = fields[0].chart
    omega = volume_form(chart)
    contracted = contract_multivector(omega, list(fields))
    if contracted.degree != 0:
        raise FormError("need exactly m fields")
    return evaluate(contracted.coefficient(()), point)
