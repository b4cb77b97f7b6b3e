"""Scalar expressions over coordinates x1..xd with forward-mode derivatives.

The grammar is fixed (no user-defined functions)::

    expr    := term { ("+" | "-") term }
    term    := factor { ("*" | "/") factor }
    factor  := "-" factor | power
    power   := atom [ "^" factor ]
    atom    := NUMBER | COORD | FUNC "(" expr { "," expr } ")" | "(" expr ")"
    COORD   := "x" DIGITS          (1-based, bounded by the declared dimension)
    FUNC    := sin | cos | tanh | sech | exp | log | sqrt | abs | erfc
             | min | max           (min/max take exactly two arguments)

Precedence is ``^`` > unary ``-`` > ``* /`` > ``+ -`` and function application
requires parentheses.  Evaluation is vectorized over points; gradients are
computed exactly with dual numbers.  At the kinks of ``abs``/``min``/``max``
the derivative from the right is used (``abs'(0) = +1``; ties resolve to the
first argument for ``max`` and the second for ``min``, consistent with
``max(a,b) = (a+b+|a-b|)/2``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .errors import EvaluationError, ExpressionSyntaxError

__all__ = [
    "Expression",
    "ScalarField",
    "parse",
    "render",
    "evaluate",
    "FUNCTION_ARITY",
]

# Step rule for central differences: truncation/round-off balance.
_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)

FUNCTION_ARITY = {
    "sin": 1, "cos": 1, "tanh": 1, "sech": 1, "exp": 1, "log": 1,
    "sqrt": 1, "abs": 1, "erfc": 1, "min": 2, "max": 2,
}

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """Value plus a stack of partial derivatives, vectorized over points.

    ``val`` has shape (N,); ``eps`` broadcasts against (d, N).
    """

    __slots__ = ("val", "eps")

    def __init__(self, val, eps):
        self.val = val
        self.eps = eps

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val + o.val, self.eps + o.eps)
        return Dual(self.val + o, self.eps)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val - o.val, self.eps - o.eps)
        return Dual(self.val - o, self.eps)

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val * o.val, self.eps * o.val + self.val * o.eps)
        return Dual(self.val * o, self.eps * o)

    def __truediv__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val / o.val,
                        (self.eps * o.val - self.val * o.eps) / (o.val * o.val))
        return Dual(self.val / o, self.eps / o)


def _dual_pow(base, expo, expo_is_const, base_is_const):
    if expo_is_const:
        v = np.power(base.val, expo.val)
        dv = expo.val * np.power(base.val, expo.val - 1.0) * base.eps
        return Dual(v, dv)
    if base_is_const:
        v = np.power(base.val, expo.val)
        return Dual(v, v * np.log(base.val) * expo.eps)
    v = np.power(base.val, expo.val)
    return Dual(v, v * (expo.eps * np.log(base.val) + expo.val * base.eps / base.val))


def _sech(t):
    return 1.0 / np.cosh(t)


_UNARY_FUNCS = {
    # name -> (value, derivative-of-value given (t, value))
    "sin": (np.sin, lambda t, v: np.cos(t)),
    "cos": (np.cos, lambda t, v: -np.sin(t)),
    "tanh": (np.tanh, lambda t, v: 1.0 - v * v),
    "sech": (_sech, lambda t, v: -v * np.tanh(t)),
    "exp": (np.exp, lambda t, v: v),
    "log": (np.log, lambda t, v: 1.0 / t),
    "sqrt": (np.sqrt, lambda t, v: 0.5 / v),
    "erfc": (special.erfc, lambda t, v: -_TWO_OVER_SQRT_PI * np.exp(-t * t)),
    # right derivative at 0
    "abs": (np.abs, lambda t, v: np.where(t >= 0.0, 1.0, -1.0)),
}


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Node:
    pass


@dataclass(frozen=True)
class Num(Node):
    value: float
    coords: frozenset = frozenset()


@dataclass(frozen=True)
class Coord(Node):
    index: int  # 1-based
    coords: frozenset = None

    def __post_init__(self):
        object.__setattr__(self, "coords", frozenset((self.index,)))


@dataclass(frozen=True)
class Neg(Node):
    child: Node
    coords: frozenset = None

    def __post_init__(self):
        object.__setattr__(self, "coords", self.child.coords)


@dataclass(frozen=True)
class Bin(Node):
    op: str  # one of + - * / ^
    left: Node
    right: Node
    coords: frozenset = None

    def __post_init__(self):
        object.__setattr__(self, "coords", self.left.coords | self.right.coords)


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple
    coords: frozenset = None

    def __post_init__(self):
        cs = frozenset()
        for a in self.args:
            cs = cs | a.coords
        object.__setattr__(self, "coords", cs)


@dataclass(frozen=True)
class Expression:
    """Parsed, immutable expression over coordinates x1..xd."""

    root: Node
    dimension: int

    def __str__(self):
        return render(self)

    @property
    def is_constant(self) -> bool:
        return not self.root.coords

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vectorized values at ``points`` of shape (N, d)."""
        with np.errstate(all="ignore"):
            out = _eval(self.root, points)
        return np.broadcast_to(out, (points.shape[0],)).astype(float, copy=False)

    def evaluate_with_gradient(self, points: np.ndarray):
        n, d = points.shape
        eye = np.eye(d)
        with np.errstate(all="ignore"):
            out = _eval_dual(self.root, points, eye)
        val = np.broadcast_to(out.val, (n,)).astype(float, copy=False)
        grad = np.broadcast_to(out.eps, (d, n)).T.astype(float, copy=False)
        return val, grad


def _eval(node, pts):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Coord):
        return pts[:, node.index - 1]
    if isinstance(node, Neg):
        return -_eval(node.child, pts)
    if isinstance(node, Bin):
        a = _eval(node.left, pts)
        b = _eval(node.right, pts)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return np.power(a, b)
    a = _eval(node.args[0], pts)
    if node.func == "min":
        return np.minimum(a, _eval(node.args[1], pts))
    if node.func == "max":
        return np.maximum(a, _eval(node.args[1], pts))
    return _UNARY_FUNCS[node.func][0](a)


def _eval_dual(node, pts, eye):
    if isinstance(node, Num):
        return Dual(node.value, 0.0)
    if isinstance(node, Coord):
        i = node.index - 1
        return Dual(pts[:, i], eye[:, i][:, None])
    if isinstance(node, Neg):
        return -_eval_dual(node.child, pts, eye)
    if isinstance(node, Bin):
        a = _eval_dual(node.left, pts, eye)
        b = _eval_dual(node.right, pts, eye)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return _dual_pow(a, b, not node.right.coords, not node.left.coords)
    a = _eval_dual(node.args[0], pts, eye)
    if node.func in ("min", "max"):
        b = _eval_dual(node.args[1], pts, eye)
        av = np.broadcast_to(a.val, pts.shape[:1])
        bv = np.broadcast_to(b.val, pts.shape[:1])
        if node.func == "min":
            pick_a = av < bv
            val = np.minimum(av, bv)
        else:
            pick_a = av >= bv
            val = np.maximum(av, bv)
        ae = np.broadcast_to(a.eps, (eye.shape[0], pts.shape[0]))
        be = np.broadcast_to(b.eps, (eye.shape[0], pts.shape[0]))
        return Dual(val, np.where(pick_a, ae, be))
    fn, dfn = _UNARY_FUNCS[node.func]
    v = fn(a.val)
    return Dual(v, dfn(a.val, v) * a.eps)


# ---------------------------------------------------------------------------
# parsing


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_COORD_RE = re.compile(r"^x(\d+)$")


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ExpressionSyntaxError(f"unexpected character {stripped[0]!r}", at)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, dimension):
        self.tokens = tokens
        self.i = 0
        self.dimension = dimension

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExpressionSyntaxError(f"expected {op!r}, found {text or 'end of input'!r}", pos)
        return self.advance()

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = Bin(text, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = Bin(text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_power()

    def parse_power(self):
        node = self.parse_atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return Bin("^", node, self.parse_factor())
        return node

    def parse_atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            m = _COORD_RE.match(text)
            if m:
                idx = int(m.group(1))
                if idx < 1 or idx > self.dimension:
                    raise ExpressionSyntaxError(
                        f"coordinate index out of range: {text} with dimension {self.dimension}",
                        pos)
                return Coord(idx)
            if text in FUNCTION_ARITY:
                self.expect_op("(")
                args = [self.parse_expr()]
                while True:
                    k, t, p = self.peek()
                    if k == "op" and t == ",":
                        self.advance()
                        args.append(self.parse_expr())
                    else:
                        break
                self.expect_op(")")
                want = FUNCTION_ARITY[text]
                if len(args) != want:
                    raise ExpressionSyntaxError(
                        f"arity mismatch: {text} expects {want} argument(s), got {len(args)}",
                        pos)
                return Call(text, tuple(args))
            raise ExpressionSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ExpressionSyntaxError(
            f"expected a number, coordinate, function or '(', found {text or 'end of input'!r}",
            pos)


def parse(source: str, dimension: int) -> Expression:
    """Parse ``source`` into an :class:`Expression` over x1..x{dimension}."""
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    parser = _Parser(_tokenize(source), dimension)
    root = parser.parse_expr()
    kind, text, pos = parser.peek()
    if kind != "end":
        raise ExpressionSyntaxError(f"unexpected trailing input {text!r}", pos)
    return Expression(root, dimension)


# ---------------------------------------------------------------------------
# rendering (mirrors the grammar so parse(render(e)) evaluates identically)


def render(expression: Expression) -> str:
    return _r_expr(expression.root)


def _r_expr(n):
    if isinstance(n, Bin) and n.op in "+-":
        return f"{_r_expr(n.left)} {n.op} {_r_term(n.right)}"
    return _r_term(n)


def _r_term(n):
    if isinstance(n, Bin) and n.op in "*/":
        return f"{_r_term(n.left)}{n.op}{_r_factor(n.right)}"
    return _r_factor(n)


def _r_factor(n):
    if isinstance(n, Neg):
        return f"-{_r_factor(n.child)}"
    return _r_power(n)


def _r_power(n):
    if isinstance(n, Bin) and n.op == "^":
        return f"{_r_atom(n.left)}^{_r_factor(n.right)}"
    return _r_atom(n)


def _r_atom(n):
    if isinstance(n, Num):
        return repr(n.value)
    if isinstance(n, Coord):
        return f"x{n.index}"
    if isinstance(n, Call):
        return f"{n.func}({', '.join(_r_expr(a) for a in n.args)})"
    return f"({_r_expr(n)})"


def _find_bad_subexpression(node, point):
    """Deepest sub-expression whose value is non-finite at a single point."""
    pts = point[None, :]
    with np.errstate(all="ignore"):
        if isinstance(node, (Neg,)):
            sub = _find_bad_subexpression(node.child, point)
            if sub is not None:
                return sub
        elif isinstance(node, Bin):
            for child in (node.left, node.right):
                sub = _find_bad_subexpression(child, point)
                if sub is not None:
                    return sub
        elif isinstance(node, Call):
            for child in node.args:
                sub = _find_bad_subexpression(child, point)
                if sub is not None:
                    return sub
        val = np.broadcast_to(_eval(node, pts), (1,))
    if not np.isfinite(val[0]):
        return node
    return None


# ---------------------------------------------------------------------------
# scalar fields


def _as_points(x, dimension):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dimension:
            raise ValueError(f"point has length {arr.shape[0]}, field dimension is {dimension}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != dimension:
        raise ValueError(f"points must have shape (N, {dimension})")
    return arr, False


class ScalarField:
    """An evaluable function R^d -> R with first derivatives.

    Fields are immutable; evaluation is pure and safe to call concurrently.
    Expression-backed fields and combinator results carry exact forward-mode
    gradients; bare callables fall back to central differences with step
    ``cbrt(machine eps) * max(1, |x_i|)``.
    """

    __slots__ = ("dimension", "exact", "expression", "name", "_value_fn", "_grad_fn", "const")

    def __init__(self, dimension, value_fn, grad_fn=None, expression=None,
                 name="field", exact=None, const=None):
        self.dimension = int(dimension)
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self.expression = expression
        self.name = name
        self.exact = bool(grad_fn is not None) if exact is None else bool(exact)
        self.const = const

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_expression(cls, source, dimension=None):
        if isinstance(source, Expression):
            e = source
        else:
            if dimension is None:
                raise ValueError("dimension required when parsing from text")
            e = parse(source, dimension)
        const = None
        if e.is_constant:
            const = float(e.evaluate(np.zeros((1, e.dimension)))[0])
        return cls(e.dimension, e.evaluate, lambda p: e.evaluate_with_gradient(p)[1],
                   expression=e, name=render(e), exact=True, const=const)

    @classmethod
    def from_callable(cls, fn, dimension, grad=None, name="callable", const=None):
        return cls(dimension, fn, grad, name=name, exact=grad is not None, const=const)

    @classmethod
    def constant(cls, value, dimension):
        value = float(value)
        return cls(dimension,
                   lambda p: np.full(p.shape[0], value),
                   lambda p: np.zeros_like(p),
                   name=repr(value), exact=True, const=value)

    @classmethod
    def coordinate(cls, index, dimension):
        """The field x_index (1-based)."""
        return cls.from_expression(f"x{index}", dimension)

    # -- evaluation --------------------------------------------------------

    def value(self, x, check=True):
        pts, single = _as_points(x, self.dimension)
        with np.errstate(all="ignore"):
            out = np.asarray(self._value_fn(pts), dtype=float)
        out = np.broadcast_to(out, (pts.shape[0],))
        if check and not np.all(np.isfinite(out)):
            self._raise_bad(pts, out)
        return float(out[0]) if single else out

    def gradient(self, x, check=True):
        pts, single = _as_points(x, self.dimension)
        with np.errstate(all="ignore"):
            if self._grad_fn is not None:
                g = np.asarray(self._grad_fn(pts), dtype=float)
            else:
                g = self._fd_gradient(pts)
        g = np.broadcast_to(g, pts.shape)
        if check and not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise EvaluationError(
                f"non-finite gradient of {self.name!r} at {pts[bad[0]].tolist()}")
        return g[0] if single else g

    def _fd_gradient(self, pts):
        g = np.empty_like(pts)
        for i in range(self.dimension):
            h = _FD_STEP * np.maximum(1.0, np.abs(pts[:, i]))
            hi = pts.copy()
            lo = pts.copy()
            hi[:, i] += h
            lo[:, i] -= h
            g[:, i] = (np.asarray(self._value_fn(hi), dtype=float)
                       - np.asarray(self._value_fn(lo), dtype=float)) / (2.0 * h)
        return g

    def _raise_bad(self, pts, out):
        bad = int(np.argmax(~np.isfinite(np.broadcast_to(out, (pts.shape[0],)))))
        point = pts[bad]
        detail = ""
        if self.expression is not None:
            node = _find_bad_subexpression(self.expression.root, point)
            if node is not None:
                detail = f" in sub-expression '{_r_expr(node)}'"
        raise EvaluationError(
            f"non-finite value of {self.name!r}{detail} at {point.tolist()}")

    # -- algebra (exactness propagates) -------------------------------------

    def _binary(self, other, vfn, gfn, sym):
        if np.isscalar(other):
            other = ScalarField.constant(other, self.dimension)
        if other.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        a, b = self, other
        f = ScalarField(
            self.dimension,
            lambda p: vfn(a._value_fn(p), b._value_fn(p)),
            lambda p: gfn(a, b, p),
            name=f"({a.name} {sym} {b.name})",
            exact=a.exact and b.exact)
        if a.const is not None and b.const is not None:
            f.const = float(vfn(a.const, b.const))
        return f

    def __add__(self, other):
        return self._binary(other, lambda u, v: u + v,
                            lambda a, b, p: a.gradient(p, check=False) + b.gradient(p, check=False),
                            "+")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda u, v: u - v,
                            lambda a, b, p: a.gradient(p, check=False) - b.gradient(p, check=False),
                            "-")

    def __mul__(self, other):
        def grad(a, b, p):
            av = np.asarray(a._value_fn(p), dtype=float)
            bv = np.asarray(b._value_fn(p), dtype=float)
            return (a.gradient(p, check=False) * bv[..., None]
                    + b.gradient(p, check=False) * av[..., None])
        return self._binary(other, lambda u, v: u * v, grad, "*")

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def of(self, inner: "ScalarField") -> "ScalarField":
        """Composition outer(inner(x)) for a 1-D outer field; exact chain rule."""
        if self.dimension != 1:
            raise ValueError("composition requires a 1-D outer field")
        outer = self

        def val(p):
            t = np.asarray(inner._value_fn(p), dtype=float)
            t = np.broadcast_to(t, (p.shape[0],))
            return outer._value_fn(t[:, None])

        def grad(p):
            t = np.broadcast_to(np.asarray(inner._value_fn(p), dtype=float), (p.shape[0],))
            slope = outer.gradient(t[:, None], check=False)[:, 0]
            return inner.gradient(p, check=False) * slope[:, None]

        return ScalarField(inner.dimension, val, grad,
                           name=f"{outer.name}∘({inner.name})",
                           exact=outer.exact and inner.exact)

    def embed(self, axis: int, dimension: int) -> "ScalarField":
        """Lift a 1-D field to d dimensions acting on coordinate ``axis`` (0-based)."""
        if self.dimension != 1:
            raise ValueError("embed requires a 1-D field")
        if self.expression is not None:
            sub = _substitute(self.expression.root, {1: Coord(axis + 1)})
            return ScalarField.from_expression(Expression(sub, dimension))
        f = self

        def val(p):
            return f._value_fn(p[:, axis][:, None])

        def grad(p):
            g = np.zeros_like(p)
            g[:, axis] = f.gradient(p[:, axis][:, None], check=False)[:, 0]
            return g

        return ScalarField(dimension, val, grad, name=f"{f.name}[x{axis + 1}]",
                           exact=f.exact, const=f.const)

    def derivative1(self) -> "ScalarField":
        """For 1-D fields: the derivative as a new 1-D field.

        The new field's value is exact when this field has exact gradients;
        its own gradient (the second derivative) falls back to differences.
        """
        if self.dimension != 1:
            raise ValueError("derivative1 requires a 1-D field")
        f = self
        return ScalarField(1, lambda p: f.gradient(p, check=False)[:, 0],
                           None, name=f"d({f.name})", exact=f.exact,
                           const=0.0 if f.const is not None else None)

    def partial(self, j: int) -> "ScalarField":
        """The field x -> d(self)/dx_j (0-based axis); value exact when self is."""
        f = self
        return ScalarField(self.dimension,
                           lambda p: f.gradient(p, check=False)[:, j],
                           None, name=f"d{j + 1}({f.name})", exact=f.exact,
                           const=0.0 if f.const is not None else None)


def _substitute(node, mapping):
    if isinstance(node, Coord):
        return mapping.get(node.index, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return Neg(_substitute(node.child, mapping))
    if isinstance(node, Bin):
        return Bin(node.op, _substitute(node.left, mapping), _substitute(node.right, mapping))
    return Call(node.func, tuple(_substitute(a, mapping) for a in node.args))


def evaluate(field: ScalarField, point, want_gradient: bool = False):
    """Evaluate a field at one point, optionally with its gradient."""
    v = field.value(point)
    if not want_gradient:
        return v, None
    return v, field.gradient(point)
