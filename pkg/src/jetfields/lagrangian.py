"""Lagrangian side: Poincare-Cartan forms, regularity certification,
Euler-Lagrange residuals, Euler-Lagrange multivector construction, and the
action functional.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import symexpr
from .forms import (
    CoordinateForm,
    VectorField,
    basis_one_form,
    contract_multivector,
    exterior_derivative,
    volume_form,
    wedge,
    zero_form,
)
from .geometry import Chart, FieldModel, SpaceTag
from .symexpr import (
    Expression,
    ONE,
    ZERO,
    add,
    base_symbol,
    const,
    coord,
    differentiate,
    evaluate,
    field_symbol,
    formal_symbol,
    mul,
    neg,
    substitute,
    velocity_symbol,
)

__all__ = [
    "RegularityReport",
    "ELSystem",
    "SingularModelError",
    "poincare_cartan",
    "omega_display",
    "regularity_certificate",
    "hessian_matrix",
    "el_system",
    "el_multivector",
    "action",
    "multivector_factors",
]

HESSIAN_DET_TOL = 1e-12


class SingularModelError(Exception):
    """The Hessian in the velocities is singular where invertibility is
    required; the constraint analysis for that case is not provided here."""


def _velocity_pairs(model: FieldModel) -> List[Tuple[int, int]]:
    """(A, nu) pairs in the chart's velocity order."""
    return [(a, nu) for a in range(1, model.n + 1) for nu in range(1, model.m + 1)]


def hessian_matrix(model: FieldModel) -> List[List[Expression]]:
    """The nm x nm block of second velocity derivatives of the Lagrangian."""
    pairs = _velocity_pairs(model)
    first = {
        (a, nu): differentiate(model.lagrangian, velocity_symbol(a, nu))
        for (a, nu) in pairs
    }
    return [
        [differentiate(first[p], velocity_symbol(*q)) for q in pairs] for p in pairs
    ]


def _det_expression(matrix: List[List[Expression]]) -> Expression:
    k = len(matrix)
    if k == 0:
        return ONE
    if k == 1:
        return matrix[0][0]
    parts = []
    for j in range(k):
        entry = matrix[0][j]
        if entry.is_zero():
            continue
        minor = [row[:j] + row[j + 1 :] for row in matrix[1:]]
        parts.append(mul(const((-1) ** j), entry, _det_expression(minor)))
    return add(*parts) if parts else ZERO


@dataclass(frozen=True)
class RegularityReport:
    hessian: List[List[Expression]]
    determinant: Expression
    samples: List[dict]

    @property
    def regular_on_samples(self) -> bool:
        return all(s["verdict"] == "regular" for s in self.samples if "error" not in s)

    @property
    def singular_somewhere(self) -> bool:
        return any(s.get("verdict") == "singular" for s in self.samples)


def regularity_certificate(
    model: FieldModel, sample_points: Sequence[Mapping[str, float]]
) -> RegularityReport:
    hessian = hessian_matrix(model)
    det = _det_expression(hessian)
    samples = []
    for point in sample_points:
        entry: dict = {"point": dict(point)}
        try:
            value = evaluate(det, point)
            entry["determinant"] = value
            entry["verdict"] = "regular" if abs(value) > HESSIAN_DET_TOL else "singular"
        except symexpr.DomainError as exc:
            entry["error"] = str(exc)
        samples.append(entry)
    return RegularityReport(hessian, det, samples)


def poincare_cartan(model: FieldModel) -> Tuple[CoordinateForm, CoordinateForm]:
    """Theta built coefficient by coefficient from its coordinate display;
    Omega = -d Theta."""
    chart = model.jet_chart
    lag = model.lagrangian
    vol = volume_form(chart)
    theta = zero_form(chart, model.m)
    for a in range(1, model.n + 1):
        dy = basis_one_form(chart, f"y{a}")
        for nu in range(1, model.m + 1):
            p_coeff = differentiate(lag, velocity_symbol(a, nu))
            if p_coeff.is_zero():
                continue
            dmx_nu = contract_multivector(
                vol, [VectorField(chart, {f"x{nu}": ONE})]
            )
            theta = theta + wedge(dy, dmx_nu).scale(p_coeff)
    energy = add(
        *(
            mul(
                differentiate(lag, velocity_symbol(a, nu)),
                coord(velocity_symbol(a, nu)),
            )
            for a in range(1, model.n + 1)
            for nu in range(1, model.m + 1)
        ),
        neg(lag),
    )
    theta = theta + vol.scale(neg(energy))
    omega = exterior_derivative(theta).scale(const(-1))
    return theta, omega


def omega_display(model: FieldModel) -> CoordinateForm:
    """The independently built four-term coordinate display of Omega, used to
    cross-check -d Theta."""
    chart = model.jet_chart
    lag = model.lagrangian
    vol = volume_form(chart)
    out = zero_form(chart, model.m + 1)
    for b in range(1, model.n + 1):
        for nu in range(1, model.m + 1):
            dv_b = basis_one_form(chart, f"v{b}_{nu}")
            for a in range(1, model.n + 1):
                for alpha in range(1, model.m + 1):
                    hvv = differentiate(
                        differentiate(lag, velocity_symbol(a, alpha)),
                        velocity_symbol(b, nu),
                    )
                    if hvv.is_zero():
                        continue
                    dmx_a = contract_multivector(
                        vol, [VectorField(chart, {f"x{alpha}": ONE})]
                    )
                    dy_a = basis_one_form(chart, f"y{a}")
                    out = out + wedge(dv_b, wedge(dy_a, dmx_a)).scale(neg(hvv))
                    out = out + wedge(dv_b, vol).scale(
                        mul(hvv, coord(velocity_symbol(a, alpha)))
                    )
    for b in range(1, model.n + 1):
        dy_b = basis_one_form(chart, f"y{b}")
        for a in range(1, model.n + 1):
            for alpha in range(1, model.m + 1):
                hyv = differentiate(
                    differentiate(lag, velocity_symbol(a, alpha)),
                    field_symbol(b),
                )
                if hyv.is_zero():
                    continue
                dmx_a = contract_multivector(
                    vol, [VectorField(chart, {f"x{alpha}": ONE})]
                )
                dy_a = basis_one_form(chart, f"y{a}")
                out = out + wedge(dy_b, wedge(dy_a, dmx_a)).scale(neg(hyv))
                out = out + wedge(dy_b, vol).scale(
                    mul(hyv, coord(velocity_symbol(a, alpha)))
                )
        trailing = add(
            neg(differentiate(lag, field_symbol(b))),
            *(
                differentiate(
                    differentiate(lag, velocity_symbol(b, alpha)),
                    base_symbol(alpha),
                )
                for alpha in range(1, model.m + 1)
            ),
        )
        if not trailing.is_zero():
            out = out + wedge(dy_b, vol).scale(trailing)
    return out


# ---------------------------------------------------------------------------
# Euler-Lagrange residuals with formal derivative symbols


def first_derivative_symbol(a: int, nu: int):
    return formal_symbol(f"y{a}_{nu}")


def second_derivative_symbol(a: int, nu: int, mu: int):
    lo, hi = sorted((nu, mu))
    return formal_symbol(f"y{a}_{lo}{hi}")


@dataclass(frozen=True)
class ELSystem:
    """Residuals over {x, y, formal y^A_nu, y^A_{nu mu}}; quasilinear in the
    second-derivative symbols."""

    model: FieldModel
    residuals: Tuple[Expression, ...]

    def display(self) -> List[str]:
        return [
            f"EL[{a + 1}]: {res} = 0" for a, res in enumerate(self.residuals)
        ]


def _to_formal(model: FieldModel, e: Expression) -> Expression:
    mapping = {
        velocity_symbol(a, nu).name: coord(first_derivative_symbol(a, nu))
        for a in range(1, model.n + 1)
        for nu in range(1, model.m + 1)
    }
    return substitute(e, mapping)


def el_system(model: FieldModel) -> ELSystem:
    lag = model.lagrangian
    residuals = []
    for a in range(1, model.n + 1):
        parts = [differentiate(lag, field_symbol(a))]
        for mu in range(1, model.m + 1):
            p_amu = differentiate(lag, velocity_symbol(a, mu))
            parts.append(neg(differentiate(p_amu, base_symbol(mu))))
            for b in range(1, model.n + 1):
                hyv = differentiate(p_amu, field_symbol(b))
                if not hyv.is_zero():
                    parts.append(
                        neg(mul(hyv, coord(first_derivative_symbol(b, mu))))
                    )
                for nu in range(1, model.m + 1):
                    hvv = differentiate(p_amu, velocity_symbol(b, nu))
                    if not hvv.is_zero():
                        parts.append(
                            neg(
                                mul(
                                    hvv,
                                    coord(second_derivative_symbol(b, nu, mu)),
                                )
                            )
                        )
        residuals.append(_to_formal(model, add(*parts)))
    return ELSystem(model, tuple(residuals))


# ---------------------------------------------------------------------------
# Euler-Lagrange multivector at a point


def multivector_factors(
    model: FieldModel,
    point: Mapping[str, float],
    F: Mapping[Tuple[int, int], float],
    G: Mapping[Tuple[int, int, int], float],
) -> List[VectorField]:
    """The m factor fields X_nu = d/dx^nu + F^A_nu d/dy^A + G^A_{nu rho}
    d/dv^A_rho with constant coefficients frozen at the point."""
    chart = model.jet_chart
    fields = []
    for nu in range(1, model.m + 1):
        comps: Dict[str, Expression] = {f"x{nu}": ONE}
        for a in range(1, model.n + 1):
            comps[f"y{a}"] = const(Fraction(float(F[(a, nu)])))
            for rho in range(1, model.m + 1):
                comps[f"v{a}_{rho}"] = const(Fraction(float(G[(a, nu, rho)])))
        fields.append(VectorField(chart, comps))
    return fields


def el_multivector(model: FieldModel, point: Mapping[str, float]):
    """Semiholonomic factors (F = v) plus a particular symmetric G solving
    the pointwise trace equations; returns (F, G, report)."""
    pairs = _velocity_pairs(model)
    hessian = hessian_matrix(model)
    H = np.array(
        [[evaluate(e, point) for e in row] for row in hessian], dtype=float
    )
    if abs(np.linalg.det(H)) <= HESSIAN_DET_TOL:
        raise SingularModelError(
            "Hessian singular at the requested point; the constraint "
            "analysis for non-regular models is out of scope"
        )
    lag = model.lagrangian
    # right-hand sides of the n trace equations
    rhs = np.zeros(model.n)
    for a in range(1, model.n + 1):
        val = evaluate(differentiate(lag, field_symbol(a)), point)
        for mu in range(1, model.m + 1):
            p_amu = differentiate(lag, velocity_symbol(a, mu))
            val -= evaluate(differentiate(p_amu, base_symbol(mu)), point)
            for b in range(1, model.n + 1):
                val -= evaluate(
                    differentiate(p_amu, field_symbol(b)), point
                ) * point[f"v{b}_{mu}"]
        rhs[a - 1] = val

    # unknowns: symmetric G^B_{nu mu}, nu <= mu
    sym_unknowns = [
        (b, nu, mu)
        for b in range(1, model.n + 1)
        for nu in range(1, model.m + 1)
        for mu in range(nu, model.m + 1)
    ]
    A = np.zeros((model.n, len(sym_unknowns)))
    pair_index = {p: i for i, p in enumerate(pairs)}
    for a in range(1, model.n + 1):
        for col, (b, nu, mu) in enumerate(sym_unknowns):
            coeff = H[pair_index[(a, mu)], pair_index[(b, nu)]]
            if nu != mu:
                coeff += H[pair_index[(a, nu)], pair_index[(b, mu)]]
            A[a - 1, col] = coeff
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    residual = A @ sol - rhs
    if np.max(np.abs(residual)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
        raise SingularModelError("trace system inconsistent despite regular Hessian")

    F = {(a, nu): point[f"v{a}_{nu}"] for (a, nu) in pairs}
    G: Dict[Tuple[int, int, int], float] = {}
    for col, (b, nu, mu) in enumerate(sym_unknowns):
        G[(b, nu, mu)] = sol[col]
        G[(b, mu, nu)] = sol[col]

    _, omega = poincare_cartan(model)
    fields = multivector_factors(model, point, F, G)
    contracted = contract_multivector(omega, fields)
    residual_form = {
        idx: evaluate(c, point) for idx, c in contracted.coefficients.items()
    }
    max_res = max((abs(v) for v in residual_form.values()), default=0.0)
    report = {
        "contraction_sup_norm": max_res,
        "trace_residual": float(np.max(np.abs(residual))) if residual.size else 0.0,
    }
    return F, G, report


# ---------------------------------------------------------------------------
# action functional on grids


def action(model: FieldModel, grid) -> float:
    """Trapezoid-rule integral of the Lagrangian along the grid section;
    equals the pulled-back canonical m-form integral for holonomic data."""
    from .grids import lagrangian_density  # local import to avoid a cycle

    values = lagrangian_density(model, grid)
    weights = np.ones_like(values)
    for axis in range(values.ndim):
        shape = [1] * values.ndim
        shape[axis] = values.shape[axis]
        w = np.ones(values.shape[axis])
        w[0] = w[-1] = 0.5
        weights = weights * w.reshape(shape)
    cell = 1.0
    for axis in range(values.ndim):
        cell *= grid.spacing(axis)
    return float(np.sum(values * weights) * cell)
