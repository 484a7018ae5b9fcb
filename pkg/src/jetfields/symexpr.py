"""Exact symbolic scalar expressions over named coordinates.

Expressions are immutable trees: rational constants, coordinate symbols,
unary functions (sin, cos, tan, exp, log; sqrt is stored as a 1/2 power),
flattened sums and products, and powers with rational constant exponents.
Construction always normalizes: sums/products are flattened, like terms and
like factors are collected, constants are folded exactly, and children are
sorted by a total order on trees, so the same mathematical input yields an
identical tree.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

__all__ = [
    "CoordinateSymbol",
    "Expression",
    "Const",
    "Coord",
    "Call",
    "Pow",
    "Add",
    "Mul",
    "Opaque",
    "ExpressionError",
    "ParseError",
    "DomainError",
    "UnknownSymbolError",
    "const",
    "coord",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "call",
    "parse",
    "parse_symbol_name",
    "base_symbol",
    "field_symbol",
    "velocity_symbol",
    "momentum_symbol",
    "formal_symbol",
    "AFFINE_MOMENTUM",
    "print_expression",
    "differentiate",
    "evaluate",
    "substitute",
    "free_symbols",
    "numerically_equal",
    "sym_equal",
    "ZERO",
    "ONE",
]


class ExpressionError(Exception):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownSymbolError(ExpressionError):
    pass


class DomainError(ExpressionError):
    """Numeric evaluation hit an undefined value; carries the subexpression."""

    def __init__(self, message: str, expr: "Expression"):
        super().__init__(f"{message} in subexpression {expr}")
        self.expr = expr


_SYMBOL_KIND_ORDER = {
    "base": 0,
    "field": 1,
    "velocity": 2,
    "momentum": 3,
    "affine": 4,
    "formal": 5,
}


@dataclass(frozen=True)
class CoordinateSymbol:
    """A named coordinate: base x<nu>, field y<A>, velocity v<A>_<nu>,
    momentum p<A>_<nu>, the affine momentum p, or a formal symbol used in
    derived equation displays (e.g. y1_12 for a second derivative)."""

    kind: str
    field_index: Optional[int] = None
    base_index: Optional[int] = None
    formal_name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in _SYMBOL_KIND_ORDER:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.kind == "base" and self.base_index is None:
            raise ValueError("base symbol needs a base index")
        if self.kind == "field" and self.field_index is None:
            raise ValueError("field symbol needs a field index")
        if self.kind in ("velocity", "momentum") and (
            self.field_index is None or self.base_index is None
        ):
            raise ValueError(f"{self.kind} symbol needs both indices")
        if self.kind == "affine" and (
            self.field_index is not None or self.base_index is not None
        ):
            raise ValueError("the affine momentum p carries no indices")
        if self.kind == "formal" and not self.formal_name:
            raise ValueError("formal symbol needs a name")

    @property
    def name(self) -> str:
        if self.kind == "base":
            return f"x{self.base_index}"
        if self.kind == "field":
            return f"y{self.field_index}"
        if self.kind == "velocity":
            return f"v{self.field_index}_{self.base_index}"
        if self.kind == "momentum":
            return f"p{self.field_index}_{self.base_index}"
        if self.kind == "affine":
            return "p"
        return self.formal_name  # type: ignore[return-value]

    def sort_key(self):
        return (
            _SYMBOL_KIND_ORDER[self.kind],
            self.field_index or 0,
            self.base_index or 0,
            self.formal_name or "",
        )

    def __str__(self) -> str:
        return self.name


def base_symbol(nu: int) -> CoordinateSymbol:
    return CoordinateSymbol("base", base_index=nu)


def field_symbol(a: int) -> CoordinateSymbol:
    return CoordinateSymbol("field", field_index=a)


def velocity_symbol(a: int, nu: int) -> CoordinateSymbol:
    return CoordinateSymbol("velocity", field_index=a, base_index=nu)


def momentum_symbol(a: int, nu: int) -> CoordinateSymbol:
    return CoordinateSymbol("momentum", field_index=a, base_index=nu)


AFFINE_MOMENTUM = CoordinateSymbol("affine")


def formal_symbol(name: str) -> CoordinateSymbol:
    return CoordinateSymbol("formal", formal_name=name)


class Expression:
    """Base class; instances are immutable and hashable.  Use the module
    constructors (add, mul, pow_, call, const, coord) rather than the node
    classes directly: the constructors produce the normal form."""

    __slots__ = ("_key", "_hash")

    def _set_key(self, key):
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    @property
    def key(self):
        return self._key

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, Expression) and self._key == other._key

    def __str__(self):
        return print_expression(self)

    def __repr__(self):
        return f"<expr {self}>"

    # operator sugar, used throughout the geometry layer
    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return sub(self, _as_expr(other))

    def __rsub__(self, other):
        return sub(_as_expr(other), self)

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __truediv__(self, other):
        return div(self, _as_expr(other))

    def __rtruediv__(self, other):
        return div(_as_expr(other), self)

    def __pow__(self, other):
        return pow_(self, other)

    def __neg__(self):
        return neg(self)

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0

    def is_one(self) -> bool:
        return isinstance(self, Const) and self.value == 1


def _as_expr(x) -> Expression:
    if isinstance(x, Expression):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(Fraction(x))
    raise TypeError(f"cannot coerce {x!r} to Expression")


class Const(Expression):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", Fraction(value))
        self._set_key((0, self.value))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Coord(Expression):
    __slots__ = ("symbol",)

    def __init__(self, symbol: CoordinateSymbol):
        object.__setattr__(self, "symbol", symbol)
        self._set_key((1, symbol.sort_key(), symbol.name))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Call(Expression):
    __slots__ = ("fname", "arg")

    def __init__(self, fname: str, arg: Expression):
        object.__setattr__(self, "fname", fname)
        object.__setattr__(self, "arg", arg)
        self._set_key((2, fname, arg.key))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Pow(Expression):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expression, exponent: Fraction):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", Fraction(exponent))
        self._set_key((3, base.key, self.exponent))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Mul(Expression):
    __slots__ = ("factors",)

    def __init__(self, factors: tuple):
        object.__setattr__(self, "factors", factors)
        self._set_key((4, tuple(f.key for f in factors)))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Add(Expression):
    __slots__ = ("terms",)

    def __init__(self, terms: tuple):
        object.__setattr__(self, "terms", terms)
        self._set_key((5, tuple(t.key for t in terms)))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


class Opaque(Expression):
    """A named numeric map treated as an atomic scalar: evaluable through
    its callable, differentiable only through the supplied partials.  Used
    for Hamiltonians obtained by numeric Legendre inversion."""

    __slots__ = ("name", "fn", "arg_names", "partials")

    def __init__(
        self,
        name: str,
        fn: Callable[[Mapping[str, float]], float],
        arg_names: tuple,
        partials: Optional[Mapping[str, Expression]] = None,
    ):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "fn", fn)
        object.__setattr__(self, "arg_names", tuple(arg_names))
        object.__setattr__(self, "partials", dict(partials) if partials else {})
        self._set_key((6, name))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")


ZERO = Const(0)
ONE = Const(1)


def const(value) -> Const:
    return Const(Fraction(value))


def coord(symbol: CoordinateSymbol) -> Coord:
    return Coord(symbol)


# ---------------------------------------------------------------------------
# normalizing constructors


def _term_parts(e: Expression):
    """Split e = coeff * rest with rational coeff; rest is None for constants."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        if len(rest) == 1:
            return e.factors[0].value, rest[0]
        return e.factors[0].value, Mul(rest)
    return Fraction(1), e


def _scale(coeff: Fraction, rest: Optional[Expression]) -> Expression:
    if rest is None:
        return Const(coeff)
    if coeff == 0:
        return ZERO
    if coeff == 1:
        return rest
    if isinstance(rest, Mul):
        return Mul((Const(coeff),) + rest.factors)
    return Mul((Const(coeff), rest))


def add(*terms) -> Expression:
    collected: dict = {}
    order: list = []
    constant = Fraction(0)

    def absorb(t: Expression):
        nonlocal constant
        if isinstance(t, Add):
            for s in t.terms:
                absorb(s)
            return
        coeff, rest = _term_parts(t)
        if rest is None:
            constant += coeff
            return
        k = rest.key
        if k in collected:
            collected[k] = (collected[k][0] + coeff, rest)
        else:
            collected[k] = (coeff, rest)
            order.append(k)

    for t in terms:
        absorb(_as_expr(t))

    # terms ordered by their non-constant part; a folded constant comes first
    out = [
        _scale(c, rest) for (c, rest) in (collected[k] for k in sorted(order)) if c != 0
    ]
    if constant != 0:
        out.insert(0, Const(constant))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def _base_exp(e: Expression):
    if isinstance(e, Pow):
        return e.base, e.exponent
    return e, Fraction(1)


def _rational_root(value: Fraction, q: int) -> Optional[Fraction]:
    """Exact q-th root of a nonnegative rational, or None."""

    def iroot(n: int) -> Optional[int]:
        if n == 0:
            return 0
        r = round(n ** (1.0 / q))
        for cand in (r - 1, r, r + 1):
            if cand >= 0 and cand**q == n:
                return cand
        return None

    a = iroot(value.numerator)
    b = iroot(value.denominator)
    if a is None or b is None:
        return None
    return Fraction(a, b)


def pow_(base, exponent) -> Expression:
    base = _as_expr(base)
    if isinstance(exponent, Expression):
        if not isinstance(exponent, Const):
            raise ExpressionError("exponent must be a rational constant")
        exponent = exponent.value
    exponent = Fraction(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if exponent.denominator == 1:
            n = int(exponent)
            if n >= 0:
                return Const(base.value**n)
            if base.value == 0:
                raise ExpressionError("zero to a negative power")
            return Const(base.value**n)
        if base.value >= 0:
            root = _rational_root(base.value, exponent.denominator)
            if root is not None:
                return pow_(Const(root), Fraction(exponent.numerator))
        if base.value == 1:
            return ONE
        return Pow(base, exponent)
    if isinstance(base, Mul) and exponent.denominator == 1:
        return mul(*(pow_(f, exponent) for f in base.factors))
    if isinstance(base, Pow) and exponent.denominator == 1:
        return pow_(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def mul(*factors) -> Expression:
    coeff = Fraction(1)
    collected: dict = {}
    order: list = []

    def absorb(f: Expression):
        nonlocal coeff
        if isinstance(f, Mul):
            for g in f.factors:
                absorb(g)
            return
        if isinstance(f, Const):
            coeff *= f.value
            return
        b, e = _base_exp(f)
        k = b.key
        if k in collected:
            collected[k] = (b, collected[k][1] + e)
        else:
            collected[k] = (b, e)
            order.append(k)

    for f in factors:
        absorb(_as_expr(f))

    if coeff == 0:
        return ZERO
    out = []
    for k in order:
        b, e = collected[k]
        g = pow_(b, e)
        if isinstance(g, Const):
            coeff *= g.value
        elif not g.is_one():
            out.append(g)
    if coeff == 0:
        return ZERO
    if not out:
        return Const(coeff)
    out.sort(key=lambda e: e.key)
    if coeff == 1:
        if len(out) == 1:
            return out[0]
        return Mul(tuple(out))
    return Mul((Const(coeff),) + tuple(out))


def neg(e) -> Expression:
    return mul(Const(-1), _as_expr(e))


def sub(a, b) -> Expression:
    return add(_as_expr(a), neg(b))


def div(a, b) -> Expression:
    return mul(_as_expr(a), pow_(b, Fraction(-1)))


_FUNCTIONS = ("sqrt", "sin", "cos", "tan", "exp", "log")


def call(fname: str, arg) -> Expression:
    arg = _as_expr(arg)
    if fname == "sqrt":
        return pow_(arg, Fraction(1, 2))
    if fname not in _FUNCTIONS:
        raise ExpressionError(f"unknown function {fname!r}")
    if isinstance(arg, Const) and arg.value == 0:
        if fname in ("sin", "tan"):
            return ZERO
        if fname == "cos":
            return ONE
        if fname == "exp":
            return ONE
        if fname == "log":
            raise ExpressionError("log(0) is undefined")
    if fname == "log" and isinstance(arg, Const) and arg.value == 1:
        return ZERO
    return Call(fname, arg)


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expression, s: CoordinateSymbol) -> Expression:
    """Partial derivative treating every coordinate as independent."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Coord):
        return ONE if e.symbol == s else ZERO
    if isinstance(e, Add):
        return add(*(differentiate(t, s) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            df = differentiate(f, s)
            if df.is_zero():
                continue
            others = e.factors[:i] + e.factors[i + 1 :]
            parts.append(mul(df, *others))
        return add(*parts)
    if isinstance(e, Pow):
        du = differentiate(e.base, s)
        if du.is_zero():
            return ZERO
        return mul(Const(e.exponent), pow_(e.base, e.exponent - 1), du)
    if isinstance(e, Call):
        du = differentiate(e.arg, s)
        if du.is_zero():
            return ZERO
        u = e.arg
        if e.fname == "sin":
            outer = call("cos", u)
        elif e.fname == "cos":
            outer = neg(call("sin", u))
        elif e.fname == "tan":
            outer = add(ONE, pow_(call("tan", u), 2))
        elif e.fname == "exp":
            outer = call("exp", u)
        elif e.fname == "log":
            outer = pow_(u, Fraction(-1))
        else:  # pragma: no cover - constructor rejects unknown names
            raise ExpressionError(f"no derivative rule for {e.fname}")
        return mul(outer, du)
    if isinstance(e, Opaque):
        p = e.partials.get(s.name)
        if p is None:
            if s.name in e.arg_names:
                raise ExpressionError(
                    f"opaque expression {e.name} has no partial for {s.name}"
                )
            return ZERO
        return p
    raise ExpressionError(f"cannot differentiate node {type(e).__name__}")


# ---------------------------------------------------------------------------
# evaluation and substitution


def evaluate(e: Expression, env: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Coord):
        name = e.symbol.name
        if name not in env:
            raise UnknownSymbolError(f"no value assigned to symbol {name!r}")
        return float(env[name])
    if isinstance(e, Add):
        return math.fsum(evaluate(t, env) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= evaluate(f, env)
        return out
    if isinstance(e, Pow):
        b = evaluate(e.base, env)
        ex = e.exponent
        if b == 0.0 and ex < 0:
            raise DomainError("division by zero", e)
        if b < 0.0 and ex.denominator != 1:
            raise DomainError("fractional power of a negative value", e)
        return float(b) ** float(ex)
    if isinstance(e, Call):
        u = evaluate(e.arg, env)
        if e.fname == "log":
            if u <= 0.0:
                raise DomainError("log of a non-positive value", e)
            return math.log(u)
        return getattr(math, e.fname)(u)
    if isinstance(e, Opaque):
        return e.fn(env)
    raise ExpressionError(f"cannot evaluate node {type(e).__name__}")


def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """Replace coordinate symbols (by name) with expressions, renormalizing."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Coord):
        return mapping.get(e.symbol.name, e)
    if isinstance(e, Add):
        return add(*(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Pow):
        return pow_(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Call):
        return call(e.fname, substitute(e.arg, mapping))
    if isinstance(e, Opaque):
        if any(name in mapping for name in e.arg_names):
            raise ExpressionError(
                f"cannot substitute into opaque expression {e.name}"
            )
        return e
    raise ExpressionError(f"cannot substitute in node {type(e).__name__}")


def free_symbols(e: Expression) -> set:
    out: set = set()

    def walk(x: Expression):
        if isinstance(x, Coord):
            out.add(x.symbol)
        elif isinstance(x, Add):
            for t in x.terms:
                walk(t)
        elif isinstance(x, Mul):
            for f in x.factors:
                walk(f)
        elif isinstance(x, Pow):
            walk(x.base)
        elif isinstance(x, Call):
            walk(x.arg)

    walk(e)
    return out


# ---------------------------------------------------------------------------
# equality


def numerically_equal(
    e1: Expression,
    e2: Expression,
    symbols: Sequence[CoordinateSymbol],
    rng: Optional[random.Random] = None,
    points: int = 50,
    rel_tol: float = 1e-10,
    low: float = -0.4,
    high: float = 0.4,
) -> bool:
    """Agreement at random points within a relative tolerance.  Points are
    drawn in a box small enough to stay inside typical function domains."""
    rng = rng or random.Random(20090706)
    tried = 0
    while tried < points:
        env = {s.name: rng.uniform(low, high) for s in symbols}
        try:
            a = evaluate(e1, env)
            b = evaluate(e2, env)
        except DomainError:
            continue
        finally:
            tried += 1
        scale = max(abs(a), abs(b), 1.0)
        if abs(a - b) > rel_tol * scale:
            return False
    return True


def sym_equal(
    e1: Expression,
    e2: Expression,
    rng: Optional[random.Random] = None,
) -> bool:
    """Identical normal form, or agreement at 50 random points (the latter
    is how identities beyond the normal form are decided)."""
    if e1 == e2:
        return True
    symbols = sorted(
        free_symbols(e1) | free_symbols(e2), key=lambda s: s.sort_key()
    )
    return numerically_equal(e1, e2, symbols, rng=rng)


# ---------------------------------------------------------------------------
# parsing

_SYMBOL_FACTORIES = {
    "x": lambda i, j: base_symbol(i),
    "y": lambda i, j: field_symbol(i),
    "v": velocity_symbol,
    "p": momentum_symbol,
}


def parse_symbol_name(
    name: str, dims: Optional[tuple] = None
) -> CoordinateSymbol:
    """Resolve a symbol name from the expression grammar.  dims=(m, n)
    enables bundle-range validation."""
    if name == "p":
        return AFFINE_MOMENTUM
    head, rest = name[0], name[1:]
    if head in ("x", "y") and rest.isdigit():
        idx = int(rest)
        sym = base_symbol(idx) if head == "x" else field_symbol(idx)
    elif head in ("v", "p") and "_" in rest:
        a_txt, nu_txt = rest.split("_", 1)
        if not (a_txt.isdigit() and nu_txt.isdigit()):
            raise UnknownSymbolError(f"unknown identifier {name!r}")
        sym = _SYMBOL_FACTORIES[head](int(a_txt), int(nu_txt))
    else:
        raise UnknownSymbolError(f"unknown identifier {name!r}")
    if dims is not None:
        m, n = dims
        if sym.base_index is not None and not 1 <= sym.base_index <= m:
            raise UnknownSymbolError(
                f"base index of {name!r} outside declared range 1..{m}"
            )
        if sym.field_index is not None and not 1 <= sym.field_index <= n:
            raise UnknownSymbolError(
                f"field index of {name!r} outside declared range 1..{n}"
            )
    return sym


class _Parser:
    def __init__(self, text: str, dims: Optional[tuple]):
        self.text = text
        self.pos = 0
        self.dims = dims

    def error(self, message: str):
        raise ParseError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self) -> Expression:
        e = self.expression()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return e

    def expression(self) -> Expression:
        e = self.term()
        while True:
            op = self.peek()
            if op == "+":
                self.pos += 1
                e = add(e, self.term())
            elif op == "-":
                self.pos += 1
                e = sub(e, self.term())
            else:
                return e

    def term(self) -> Expression:
        e = self.factor()
        while True:
            op = self.peek()
            if op == "*":
                self.pos += 1
                e = mul(e, self.factor())
            elif op == "/":
                self.pos += 1
                e = div(e, self.factor())
            else:
                return e

    def factor(self) -> Expression:
        e = self.base()
        if self.peek() == "^":
            self.pos += 1
            e = pow_(e, self.exponent())
        return e

    def exponent(self) -> Fraction:
        # integer, (signed rational), or decimal; a bare p/q after ^ would be
        # ambiguous with division, so fractions must be parenthesized
        if self.peek() == "(":
            self.pos += 1
            sign = 1
            if self.peek() == "-":
                sign = -1
                self.pos += 1
            value = self.number_value()
            if self.peek() == "/":
                self.pos += 1
                denom = self.number_value()
                if denom == 0:
                    self.error("zero denominator in exponent")
                value = value / denom
            self.expect(")")
            return sign * value
        sign = 1
        if self.peek() == "-":
            sign = -1
            self.pos += 1
        return sign * self.number_value()

    def number_value(self) -> Fraction:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isdigit() or self.text[self.pos] == "."
        ):
            self.pos += 1
        token = self.text[start : self.pos]
        if not token:
            self.error("expected a number")
        try:
            return Fraction(token)
        except ValueError:
            self.pos = start
            self.error(f"bad number {token!r}")

    def base(self) -> Expression:
        ch = self.peek()
        if ch == "-":
            self.pos += 1
            return neg(self.base())
        if ch == "(":
            self.pos += 1
            e = self.expression()
            self.expect(")")
            return e
        if ch.isdigit() or ch == ".":
            return Const(self.number_value())
        if ch.isalpha():
            start = self.pos
            while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"
            ):
                self.pos += 1
            name = self.text[start : self.pos]
            if name in _FUNCTIONS:
                self.expect("(")
                arg = self.expression()
                self.expect(")")
                return call(name, arg)
            try:
                sym = parse_symbol_name(name, self.dims)
            except UnknownSymbolError as exc:
                self.pos = start
                raise ParseError(str(exc), start) from exc
            return Coord(sym)
        self.error("expected a number, symbol, function or parenthesis")
        raise AssertionError  # unreachable


def parse(text: str, dims: Optional[tuple] = None) -> Expression:
    """Parse an expression string; dims=(m, n) validates coordinate ranges."""
    return _Parser(text, dims).parse()


# ---------------------------------------------------------------------------
# printing (emits the grammar exactly; parse(print(e)) == e)


def _print_fraction(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _needs_parens_in_product(e: Expression) -> bool:
    if isinstance(e, Add):
        return True
    if isinstance(e, Mul):
        return True
    if isinstance(e, Const):
        return e.value < 0 or e.value.denominator != 1
    return False


def _print_power(e: Pow) -> str:
    if e.exponent == Fraction(1, 2):
        return f"sqrt({print_expression(e.base)})"
    base_txt = print_expression(e.base)
    if not isinstance(e.base, (Coord, Call, Opaque)) and not (
        isinstance(e.base, Const)
        and e.base.value >= 0
        and e.base.value.denominator == 1
    ):
        base_txt = f"({base_txt})"
    if e.exponent.denominator == 1 and e.exponent > 0:
        return f"{base_txt}^{e.exponent.numerator}"
    return f"{base_txt}^({_print_fraction(e.exponent)})"


def _print_product(e: Expression) -> str:
    """Print a product (or single factor) with negative exponents moved to a
    denominator; returns text without any leading sign handling."""
    factors = e.factors if isinstance(e, Mul) else (e,)
    num_parts: list = []
    den_parts: list = []
    coeff = Fraction(1)
    for f in factors:
        if isinstance(f, Const):
            coeff *= f.value
            continue
        b, ex = _base_exp(f)
        if ex < 0:
            den_parts.append(pow_(b, -ex))
        else:
            num_parts.append(f)
    if coeff.numerator not in (1, -1):
        num_parts.insert(0, Const(abs(coeff.numerator)))
    if coeff.denominator != 1:
        den_parts.insert(0, Const(coeff.denominator))

    def fmt(parts):
        chunks = []
        for p in parts:
            if isinstance(p, Pow):
                txt = _print_power(p)
            else:
                txt = print_expression(p)
                if _needs_parens_in_product(p):
                    txt = f"({txt})"
            chunks.append(txt)
        return "*".join(chunks)

    num_txt = fmt(num_parts) if num_parts else "1"
    if not den_parts:
        return num_txt
    den_txt = fmt(den_parts)
    if len(den_parts) > 1:
        den_txt = f"({den_txt})"
    elif isinstance(den_parts[0], Pow) and den_parts[0].exponent != Fraction(1, 2):
        pass  # already safely parenthesized by power printing
    return f"{num_txt}/{den_txt}"


def _is_negative_term(e: Expression) -> bool:
    c, _ = _term_parts(e)
    return c < 0


def print_expression(e: Expression) -> str:
    if isinstance(e, Const):
        if e.value < 0:
            return f"-{_print_fraction(-e.value)}"
        return _print_fraction(e.value)
    if isinstance(e, Coord):
        return e.symbol.name
    if isinstance(e, Call):
        return f"{e.fname}({print_expression(e.arg)})"
    if isinstance(e, Pow):
        return _print_power(e)
    if isinstance(e, Opaque):
        return f"<{e.name}>"
    if isinstance(e, Mul):
        c, _ = _term_parts(e)
        txt = _print_product(e)
        return f"-{txt}" if c < 0 else txt
    if isinstance(e, Add):
        chunks = [print_expression(e.terms[0])]
        for t in e.terms[1:]:
            if _is_negative_term(t):
                chunks.append(" - " + _print_product(t) if not isinstance(t, Const) else " - " + _print_fraction(-t.value))
            else:
                chunks.append(" + " + print_expression(t))
        return "".join(chunks)
    raise ExpressionError(f"cannot print node {type(e).__name__}")
