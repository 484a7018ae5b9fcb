"""Hamiltonian side: Legendre maps (with symbolic or numeric inversion),
the local Hamiltonian function, Hamilton-Cartan forms, Hamilton-De
Donder-Weyl residuals on grids, and the HDW multivector construction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
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
from .grids import SectionGrid, GridError, evaluate_array
from .lagrangian import hessian_matrix, _det_expression
from .symexpr import (
    Expression,
    ONE,
    ZERO,
    Opaque,
    add,
    base_symbol,
    const,
    coord,
    differentiate,
    evaluate,
    field_symbol,
    momentum_symbol,
    mul,
    neg,
    substitute,
    velocity_symbol,
    AFFINE_MOMENTUM,
)

__all__ = [
    "LegendreMaps",
    "HamiltonianSystem",
    "NewtonInverse",
    "NotInvertibleError",
    "HdwResidualReport",
    "legendre",
    "hamiltonian_system",
    "from_hamiltonian",
    "hdw_partials",
    "hdw_residual",
    "hdw_multivector",
]


class NotInvertibleError(Exception):
    """The velocity-momentum map failed to invert (symbolically and, where
    attempted, numerically): the model is not hyper-regular there."""


def _velocity_pairs(m: int, n: int) -> List[Tuple[int, int]]:
    return [(a, nu) for a in range(1, n + 1) for nu in range(1, m + 1)]


# ---------------------------------------------------------------------------
# numeric inversion of the velocity-momentum map


@dataclass(frozen=True)
class NewtonInverse:
    """Newton iteration solving p = dL/dv for v at a given (x, y, p) point.
    Initial guess v = p; converged when the momentum residual sup-norm drops
    below 1e-12; at most 50 iterations."""

    model: FieldModel
    forward: Tuple[Expression, ...]
    hessian: Tuple[Tuple[Expression, ...], ...]

    def __call__(self, point: Mapping[str, float]) -> Dict[str, float]:
        pairs = _velocity_pairs(self.model.m, self.model.n)
        target = np.array([point[f"p{a}_{nu}"] for (a, nu) in pairs])
        v = target.copy()
        env = dict(point)
        for _ in range(50):
            for (a, nu), val in zip(pairs, v):
                env[f"v{a}_{nu}"] = float(val)
            try:
                r = np.array([evaluate(f, env) for f in self.forward]) - target
                if np.max(np.abs(r)) < 1e-12:
                    return {f"v{a}_{nu}": float(val) for (a, nu), val in zip(pairs, v)}
                J = np.array([[evaluate(e, env) for e in row] for row in self.hessian])
                v = v - np.linalg.solve(J, r)
            except (symexpr.DomainError, np.linalg.LinAlgError) as exc:
                raise NotInvertibleError(f"not invertible here: {exc}") from exc
            if not np.all(np.isfinite(v)):
                raise NotInvertibleError("not invertible here: iteration diverged")
        raise NotInvertibleError("not invertible here: no convergence in 50 steps")


@dataclass(frozen=True)
class LegendreMaps:
    """restricted maps the jet chart to (x, y, p); extended additionally
    carries the affine momentum p = L - v.dL/dv.  inverse, when symbolic
    inversion succeeds, maps (x, y, p) back to the jet chart; otherwise
    numeric_inverse provides a Newton-based pointwise inverse."""

    model: FieldModel
    restricted: Mapping[str, Expression]
    extended: Mapping[str, Expression]
    inverse: Optional[Mapping[str, Expression]]
    numeric_inverse: Optional[NewtonInverse] = None

    def invert_point(self, point: Mapping[str, float]) -> Dict[str, float]:
        """Velocity values at an (x, y, p) point, by whichever inverse is
        available."""
        if self.inverse is not None:
            return {
                name: evaluate(e, point)
                for name, e in self.inverse.items()
                if name.startswith("v")
            }
        if self.numeric_inverse is not None:
            return self.numeric_inverse(point)
        raise NotInvertibleError("no inverse available for this model")


# ---------------------------------------------------------------------------
# sympy interchange (used only for nonlinear symbolic inversion)


class _BridgeError(Exception):
    pass


def _to_sympy(e: Expression, cache: dict):
    import sympy as sp

    if isinstance(e, symexpr.Const):
        return sp.Rational(e.value.numerator, e.value.denominator)
    if isinstance(e, symexpr.Coord):
        name = e.symbol.name
        if name not in cache:
            cache[name] = sp.Symbol(name, real=True)
        return cache[name]
    if isinstance(e, symexpr.Add):
        return sp.Add(*(_to_sympy(t, cache) for t in e.terms))
    if isinstance(e, symexpr.Mul):
        return sp.Mul(*(_to_sympy(f, cache) for f in e.factors))
    if isinstance(e, symexpr.Pow):
        return sp.Pow(
            _to_sympy(e.base, cache),
            sp.Rational(e.exponent.numerator, e.exponent.denominator),
        )
    if isinstance(e, symexpr.Call):
        return getattr(sp, e.fname)(_to_sympy(e.arg, cache))
    raise _BridgeError(f"cannot translate node {type(e).__name__}")


def _from_sympy(s, dims) -> Expression:
    import sympy as sp

    if isinstance(s, sp.Integer):
        return const(int(s))
    if isinstance(s, sp.Rational):
        return const(Fraction(int(s.p), int(s.q)))
    if isinstance(s, sp.Float):
        return const(Fraction(float(s)))
    if isinstance(s, sp.Symbol):
        return coord(symexpr.parse_symbol_name(s.name, dims))
    if isinstance(s, sp.Add):
        return add(*(_from_sympy(a, dims) for a in s.args))
    if isinstance(s, sp.Mul):
        return mul(*(_from_sympy(a, dims) for a in s.args))
    if isinstance(s, sp.Pow):
        base, expo = s.args
        if isinstance(expo, sp.Rational):
            return symexpr.pow_(
                _from_sympy(base, dims), Fraction(int(expo.p), int(expo.q))
            )
        raise _BridgeError(f"non-rational exponent {expo}")
    for fname in ("sin", "cos", "tan", "exp", "log"):
        if isinstance(s, getattr(sp, fname)):
            return symexpr.call(fname, _from_sympy(s.args[0], dims))
    raise _BridgeError(f"cannot translate sympy node {type(s).__name__}")


# ---------------------------------------------------------------------------
# Legendre maps


def _forward_momenta(model: FieldModel) -> Dict[Tuple[int, int], Expression]:
    return {
        (a, nu): differentiate(model.lagrangian, velocity_symbol(a, nu))
        for (a, nu) in _velocity_pairs(model.m, model.n)
    }


def _adjugate_solve(
    matrix: List[List[Expression]], rhs: List[Expression]
) -> Optional[List[Expression]]:
    """Symbolic solve via Cramer's rule; None when the determinant is the
    zero expression."""
    det = _det_expression(matrix)
    if det.is_zero():
        return None
    k = len(matrix)
    out = []
    inv_det = symexpr.pow_(det, -1)
    for j in range(k):
        replaced = [
            [rhs[i] if c == j else matrix[i][c] for c in range(k)] for i in range(k)
        ]
        out.append(mul(_det_expression(replaced), inv_det))
    return out


def _verify_inverse(
    model: FieldModel,
    forward: Mapping[Tuple[int, int], Expression],
    inverse: Mapping[str, Expression],
    rng: random.Random,
    points: int = 30,
    tol: float = 1e-9,
) -> bool:
    """restricted o inverse = identity on momenta at random points."""
    pairs = _velocity_pairs(model.m, model.n)
    checked = 0
    for _ in range(points * 4):
        if checked >= points:
            break
        env = {f"x{nu}": rng.uniform(-0.4, 0.4) for nu in range(1, model.m + 1)}
        env.update({f"y{a}": rng.uniform(-0.4, 0.4) for a in range(1, model.n + 1)})
        env.update({p.name: rng.uniform(-0.4, 0.4) for p in map(lambda q: velocity_symbol(*q), pairs)})
        try:
            momenta = {f"p{a}_{nu}": evaluate(forward[(a, nu)], env) for (a, nu) in pairs}
            back = dict(env)
            back.update(momenta)
            for (a, nu) in pairs:
                got = evaluate(inverse[f"v{a}_{nu}"], back)
                want = env[f"v{a}_{nu}"]
                if abs(got - want) > tol * max(1.0, abs(want)):
                    return False
        except symexpr.DomainError:
            continue
        checked += 1
    return checked > 0


def _symbolic_inverse(
    model: FieldModel, forward: Mapping[Tuple[int, int], Expression]
) -> Optional[Dict[str, Expression]]:
    pairs = _velocity_pairs(model.m, model.n)
    hessian = hessian_matrix(model)
    rng = random.Random(20090706)
    vel_names = {velocity_symbol(a, nu).name for (a, nu) in pairs}

    linear = all(
        not ({s.name for s in symexpr.free_symbols(e)} & vel_names)
        for row in hessian
        for e in row
    )
    if linear:
        # affine map p = H v + b with H, b velocity-free: Cramer solve
        zero_v = {name: ZERO for name in vel_names}
        rhs = [
            add(
                coord(momentum_symbol(a, nu)),
                neg(substitute(forward[(a, nu)], zero_v)),
            )
            for (a, nu) in pairs
        ]
        sol = _adjugate_solve(hessian, rhs)
        if sol is None:
            return None
        inverse = {
            velocity_symbol(a, nu).name: e for (a, nu), e in zip(pairs, sol)
        }
        if not _verify_inverse(model, forward, inverse, rng):
            return None
        return inverse

    # nonlinear: delegate the solve to a CAS, pick the branch that matches
    # the forward map numerically
    try:
        import sympy as sp

        cache: dict = {}
        v_syms = [
            _to_sympy(coord(velocity_symbol(a, nu)), cache) for (a, nu) in pairs
        ]
        eqs = []
        for (a, nu) in pairs:
            p_sym = _to_sympy(coord(momentum_symbol(a, nu)), cache)
            eqs.append(sp.Eq(p_sym, _to_sympy(forward[(a, nu)], cache)))
        solutions = sp.solve(eqs, v_syms, dict=True)
    except (_BridgeError, NotImplementedError, Exception):
        return None
    dims = (model.m, model.n)
    for branch in solutions:
        try:
            inverse = {}
            for (a, nu), v_sym in zip(pairs, v_syms):
                if v_sym not in branch:
                    raise _BridgeError("incomplete branch")
                expr = sp.simplify(branch[v_sym])
                inverse[velocity_symbol(a, nu).name] = _from_sympy(expr, dims)
        except (_BridgeError, symexpr.ExpressionError):
            continue
        if _verify_inverse(model, forward, inverse, rng):
            return inverse
    return None


def legendre(model: FieldModel) -> LegendreMaps:
    forward = _forward_momenta(model)
    pairs = _velocity_pairs(model.m, model.n)
    restricted: Dict[str, Expression] = {}
    for nu in range(1, model.m + 1):
        restricted[f"x{nu}"] = coord(base_symbol(nu))
    for a in range(1, model.n + 1):
        restricted[f"y{a}"] = coord(field_symbol(a))
    for (a, nu) in pairs:
        restricted[f"p{a}_{nu}"] = forward[(a, nu)]
    energy_terms = [
        mul(forward[(a, nu)], coord(velocity_symbol(a, nu))) for (a, nu) in pairs
    ]
    extended = dict(restricted)
    extended["p"] = add(model.lagrangian, neg(add(*energy_terms)))

    inverse = _symbolic_inverse(model, forward)
    if inverse is not None:
        full_inverse: Dict[str, Expression] = {}
        for nu in range(1, model.m + 1):
            full_inverse[f"x{nu}"] = coord(base_symbol(nu))
        for a in range(1, model.n + 1):
            full_inverse[f"y{a}"] = coord(field_symbol(a))
        full_inverse.update(inverse)
        return LegendreMaps(model, restricted, extended, full_inverse)

    forward_list = tuple(forward[p] for p in pairs)
    hessian = tuple(tuple(row) for row in hessian_matrix(model))
    return LegendreMaps(
        model,
        restricted,
        extended,
        None,
        NewtonInverse(model, forward_list, hessian),
    )


# ---------------------------------------------------------------------------
# Hamiltonian systems


@dataclass(frozen=True)
class HamiltonianSystem:
    """h over (x, y, p) with the Hamilton-Cartan forms on the restricted
    momentum space."""

    m: int
    n: int
    h: Expression
    theta: CoordinateForm
    omega: CoordinateForm
    origin: str  # "derived-from-Lagrangian" | "user-supplied"
    legendre_maps: Optional[LegendreMaps] = None
    model: Optional[FieldModel] = None

    @property
    def chart(self) -> Chart:
        return Chart(SpaceTag.RESTRICTED_MOMENTUM, self.m, self.n)


def _hamilton_cartan_forms(
    m: int, n: int, h: Expression
) -> Tuple[CoordinateForm, CoordinateForm]:
    chart = Chart(SpaceTag.RESTRICTED_MOMENTUM, m, n)
    vol = volume_form(chart)
    theta = zero_form(chart, m)
    for a in range(1, n + 1):
        dy = basis_one_form(chart, f"y{a}")
        for nu in range(1, m + 1):
            dmx_nu = contract_multivector(vol, [VectorField(chart, {f"x{nu}": ONE})])
            theta = theta + wedge(dy, dmx_nu).scale(coord(momentum_symbol(a, nu)))
    theta = theta + vol.scale(neg(h))
    omega = exterior_derivative(theta).scale(const(-1))
    return theta, omega


def _numeric_hamiltonian(model: FieldModel, maps: LegendreMaps) -> Expression:
    """h as an opaque scalar evaluated through the pointwise inverse, with
    first partials supplied by the implicit-function shortcuts
    dh/dp = inverted velocity, dh/dy = -(dL/dy) o FL^-1, dh/dx likewise."""
    chart = Chart(SpaceTag.RESTRICTED_MOMENTUM, model.m, model.n)
    arg_names = chart.names
    pairs = _velocity_pairs(model.m, model.n)
    tag = str(model.lagrangian)

    def composed(point: Mapping[str, float]) -> Dict[str, float]:
        env = {k: float(point[k]) for k in arg_names}
        env.update(maps.invert_point(env))
        return env

    def h_value(point: Mapping[str, float]) -> float:
        env = composed(point)
        total = -evaluate(model.lagrangian, env)
        for (a, nu) in pairs:
            total += env[f"p{a}_{nu}"] * env[f"v{a}_{nu}"]
        return total

    partials: Dict[str, Expression] = {}
    for (a, nu) in pairs:

        def dp(point, a=a, nu=nu):
            return composed(point)[f"v{a}_{nu}"]

        partials[f"p{a}_{nu}"] = Opaque(
            f"D[h[{tag}], p{a}_{nu}]", dp, arg_names
        )
    for sym in [field_symbol(a) for a in range(1, model.n + 1)] + [
        base_symbol(nu) for nu in range(1, model.m + 1)
    ]:
        dlag = differentiate(model.lagrangian, sym)
        if dlag.is_zero():
            partials[sym.name] = ZERO
            continue

        def dxy(point, dlag=dlag):
            return -evaluate(dlag, composed(point))

        partials[sym.name] = Opaque(f"D[h[{tag}], {sym.name}]", dxy, arg_names)
    return Opaque(f"h[{tag}]", h_value, arg_names, partials)


def hamiltonian_system(model: FieldModel) -> HamiltonianSystem:
    maps = legendre(model)
    if maps.inverse is not None:
        pairs = _velocity_pairs(model.m, model.n)
        composite = add(
            *(
                mul(coord(momentum_symbol(a, nu)), maps.inverse[f"v{a}_{nu}"])
                for (a, nu) in pairs
            ),
            neg(substitute(model.lagrangian, dict(maps.inverse))),
        )
        h = _simplified(composite, (model.m, model.n))
    else:
        h = _numeric_hamiltonian(model, maps)
    theta, omega = _hamilton_cartan_forms(model.m, model.n, h)
    return HamiltonianSystem(
        model.m, model.n, h, theta, omega, "derived-from-Lagrangian", maps, model
    )


def _simplified(e: Expression, dims) -> Expression:
    """A CAS-simplified copy of e, kept only when it verifies numerically
    against the original."""
    try:
        import sympy as sp

        cache: dict = {}
        simplified = _from_sympy(sp.simplify(_to_sympy(e, cache)), dims)
    except (_BridgeError, symexpr.ExpressionError, Exception):
        return e
    if symexpr.sym_equal(simplified, e):
        return simplified
    return e


def from_hamiltonian(m: int, n: int, h: Expression) -> HamiltonianSystem:
    for sym in symexpr.free_symbols(h):
        if sym.kind in ("velocity", "affine", "formal"):
            raise symexpr.ExpressionError(
                f"symbol {sym.name!r} not allowed in a Hamiltonian over (x, y, p)"
            )
    theta, omega = _hamilton_cartan_forms(m, n, h)
    return HamiltonianSystem(m, n, h, theta, omega, "user-supplied")


# ---------------------------------------------------------------------------
# HDW residuals and multivectors


def hdw_partials(hs: HamiltonianSystem):
    """(dh/dp^nu_A keyed by (A, nu), dh/dy^A keyed by A) as expressions."""
    dh_dp = {
        (a, nu): differentiate(hs.h, momentum_symbol(a, nu))
        for (a, nu) in _velocity_pairs(hs.m, hs.n)
    }
    dh_dy = {a: differentiate(hs.h, field_symbol(a)) for a in range(1, hs.n + 1)}
    return dh_dp, dh_dy


@dataclass(frozen=True)
class HdwResidualReport:
    """Pointwise residual grids R1 (holonomy-type, per field and base index)
    and R2 (divergence-type, per field), with sup and L2 norms."""

    r1: Mapping[Tuple[int, int], np.ndarray]
    r2: Mapping[int, np.ndarray]
    sup_r1: float
    sup_r2: float
    l2_r1: float
    l2_r2: float

    @property
    def sup(self) -> float:
        return max(self.sup_r1, self.sup_r2)

    @property
    def l2(self) -> float:
        return float(np.hypot(self.l2_r1, self.l2_r2))


def _l2_norm(arrays: Sequence[np.ndarray], grid: SectionGrid) -> float:
    cell = 1.0
    for axis in range(grid.ndim):
        cell *= grid.spacing(axis)
    total = sum(float(np.sum(np.square(arr))) for arr in arrays)
    return float(np.sqrt(total * cell))


def hdw_residual(hs: HamiltonianSystem, grid: SectionGrid) -> HdwResidualReport:
    if grid.ndim != hs.m:
        raise GridError("grid rank does not match the base dimension")
    if any(r < 3 for r in grid.shape):
        raise GridError("need at least 3 points per axis for interior stencils")
    for a in range(1, hs.n + 1):
        if f"y{a}" not in grid.values:
            raise GridError(f"grid is missing y{a}")
        for nu in range(1, hs.m + 1):
            if f"p{a}_{nu}" not in grid.values:
                raise GridError(f"grid is missing p{a}_{nu}")
    dh_dp, dh_dy = hdw_partials(hs)
    env = grid.environment()
    r1: Dict[Tuple[int, int], np.ndarray] = {}
    r2: Dict[int, np.ndarray] = {}
    for a in range(1, hs.n + 1):
        div = np.zeros(grid.shape)
        for nu in range(1, hs.m + 1):
            dy = grid.derivative(f"y{a}", nu - 1)
            rhs = np.broadcast_to(
                np.asarray(evaluate_array(dh_dp[(a, nu)], env), dtype=float),
                grid.shape,
            )
            r1[(a, nu)] = dy - rhs
            div = div + grid.derivative(f"p{a}_{nu}", nu - 1)
        dh = np.broadcast_to(
            np.asarray(evaluate_array(dh_dy[a], env), dtype=float), grid.shape
        )
        r2[a] = div + dh
    sup_r1 = max(float(np.max(np.abs(v))) for v in r1.values())
    sup_r2 = max(float(np.max(np.abs(v))) for v in r2.values())
    return HdwResidualReport(
        r1,
        r2,
        sup_r1,
        sup_r2,
        _l2_norm(list(r1.values()), grid),
        _l2_norm(list(r2.values()), grid),
    )


def hdw_multivector(hs: HamiltonianSystem, point: Mapping[str, float]):
    """F = dh/dp at the point; G supported on the trace, split evenly over
    the base directions.  Returns (F, G, report) where the report carries the
    sup-norm of i(X_1 ^ ... ^ X_m) Omega_h at the point."""
    dh_dp, dh_dy = hdw_partials(hs)
    F = {
        (a, nu): evaluate(dh_dp[(a, nu)], point)
        for (a, nu) in _velocity_pairs(hs.m, hs.n)
    }
    trace = {a: -evaluate(dh_dy[a], point) for a in range(1, hs.n + 1)}
    G: Dict[Tuple[int, int, int], float] = {}
    for a in range(1, hs.n + 1):
        for nu in range(1, hs.m + 1):
            for rho in range(1, hs.m + 1):
                G[(a, nu, rho)] = trace[a] / hs.m if nu == rho else 0.0

    chart = hs.chart
    fields = []
    for nu in range(1, hs.m + 1):
        comps: Dict[str, Expression] = {f"x{nu}": ONE}
        for a in range(1, hs.n + 1):
            comps[f"y{a}"] = const(Fraction(float(F[(a, nu)])))
            for rho in range(1, hs.m + 1):
                comps[f"p{a}_{rho}"] = const(Fraction(float(G[(a, nu, rho)])))
        fields.append(VectorField(chart, comps))
    contracted = contract_multivector(hs.omega, fields)
    residual = {
        idx: evaluate(c, point) for idx, c in contracted.coefficients.items()
    }
    report = {
        "contraction_sup_norm": max(
            (abs(v) for v in residual.values()), default=0.0
        )
    }
    return F, G, report
