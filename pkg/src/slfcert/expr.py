"""Arithmetic expressions over state variables with second-order forward AD.

Coefficient functions (drift and diffusion components, rate functions,
user test functions) are small closed-form formulas in the state variables
x1..xn.  This module gives them a concrete representation: a recursive
descent parser to a tiny immutable AST, plain float evaluation, and joint
(value, gradient, Hessian) forward propagation so downstream code can
consume exact second-order data.

Grammar (whitespace insignificant)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | base ("^" factor)?
    base   := number | ident | func "(" expr ")" | "(" expr ")"
    ident  := "x" digits          -- 1-based, bounded by declared dimension
    func   := abs | sgn | sin | cos | exp | log | sqrt

"^" is right-associative and binds tighter than unary minus, so "-x1^2"
means -(x1^2).  sgn(0) evaluates to 0.  Differentiating abs/sgn/sqrt at
their kink yields a jet with ``smooth=False`` instead of made-up numbers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("abs", "sgn", "sin", "cos", "exp", "log", "sqrt")


class ExprError(Exception):
    """Base for everything this module raises."""


class ParseError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(ExprError):
    """Evaluation left the domain (log of non-positive, division by zero, ...)."""


class NonSmoothPointError(ExprError):
    """A second-order jet was requested where the function is not C^2."""


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Num | Var | Neg | Bin | Call


def max_var_index(e: Expr) -> int:
    if isinstance(e, Num):
        return 0
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Neg):
        return max_var_index(e.arg)
    if isinstance(e, Bin):
        return max(max_var_index(e.lhs), max_var_index(e.rhs))
    return max_var_index(e.arg)


# --------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            if source[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, n):
        self.tokens = tokens
        self.n = n
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.take()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}, found {text!r}", pos)

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                node = Bin(text, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                node = Bin(text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.parse_factor())
        node = self.parse_base()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return Bin("^", node, self.parse_factor())
        return node

    def parse_base(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(text, arg)
            m = re.fullmatch(r"x(\d+)", text)
            if m is None:
                raise ParseError(f"unknown identifier {text!r}", pos)
            index = int(m.group(1))
            if index < 1:
                raise ParseError("variable indices are 1-based", pos)
            if index > self.n:
                raise ParseError(
                    f"variable x{index} exceeds dimension {self.n}", pos
                )
            return Var(index)
        if kind == "op" and text == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {text!r}", pos)


def parse(source: str, n: int) -> Expr:
    """Parse ``source`` into an AST; variables x1..x`n` are in scope."""
    parser = _Parser(_tokenize(source), n)
    node = parser.parse_expr()
    kind, text, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input {text!r}", pos)
    return node


# --------------------------------------------------------------------------
# Rendering (inverse of parse up to whitespace)

_PREC_ATOM, _PREC_POW, _PREC_NEG, _PREC_MUL, _PREC_ADD = 4, 3, 2, 1, 0


def _prec(e):
    if isinstance(e, (Num, Var, Call)):
        return _PREC_ATOM
    if isinstance(e, Neg):
        return _PREC_NEG
    if e.op == "^":
        return _PREC_POW
    if e.op in "*/":
        return _PREC_MUL
    return _PREC_ADD


def _wrap(e, minimum):
    text = render(e)
    return f"({text})" if _prec(e) < minimum else text


def render(e: Expr) -> str:
    """Serialize an AST; parse(render(e)) is structurally e."""
    if isinstance(e, Num):
        if e.value < 0 or (e.value == 0 and math.copysign(1.0, e.value) < 0):
            return render(Neg(Num(-e.value)))
        return repr(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Call):
        return f"{e.fn}({render(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC_NEG)
    if e.op == "^":
        # power is right-associative and binds tighter than unary minus
        left = _wrap(e.lhs, _PREC_ATOM)
        right = render(e.rhs) if _prec(e.rhs) >= _PREC_NEG else f"({render(e.rhs)})"
        return f"{left}^{right}"
    if e.op in "*/":
        # left-associative: a right-nested chain keeps its parentheses
        left = _wrap(e.lhs, _PREC_MUL)
        right = _wrap(e.rhs, _PREC_MUL + 1)
        return f"{left}{e.op}{right}"
    left = _wrap(e.lhs, _PREC_ADD)
    right = _wrap(e.rhs, _PREC_ADD + 1)
    return f"{left} {e.op} {right}"


# --------------------------------------------------------------------------
# Plain evaluation


def eval_expr(e: Expr, x) -> float:
    """Evaluate at the point ``x`` (sequence of floats, 1-based variables)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(x[e.index - 1])
    if isinstance(e, Neg):
        return -eval_expr(e.arg, x)
    if isinstance(e, Bin):
        a = eval_expr(e.lhs, x)
        if e.op == "^":
            return _pow_value(a, eval_expr(e.rhs, x))
        b = eval_expr(e.rhs, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    return _call_value(e.fn, eval_expr(e.arg, x))


def _pow_value(base, exponent):
    if base == 0.0 and exponent < 0.0:
        raise DomainError("zero raised to a negative power")
    if base < 0.0 and exponent != round(exponent):
        raise DomainError("negative base with non-integer exponent")
    try:
        return math.pow(base, exponent)
    except (ValueError, OverflowError) as exc:
        raise DomainError(f"pow({base}, {exponent}): {exc}") from exc


def _call_value(fn, u):
    if fn == "abs":
        return abs(u)
    if fn == "sgn":
        return 0.0 if u == 0.0 else math.copysign(1.0, u)
    if fn == "sin":
        return math.sin(u)
    if fn == "cos":
        return math.cos(u)
    if fn == "exp":
        try:
            return math.exp(u)
        except OverflowError as exc:
            raise DomainError(f"exp({u}) overflows") from exc
    if fn == "log":
        if u <= 0.0:
            raise DomainError(f"log of non-positive value {u}")
        return math.log(u)
    if u < 0.0:
        raise DomainError(f"sqrt of negative value {u}")
    return math.sqrt(u)


# --------------------------------------------------------------------------
# Second-order forward propagation


@dataclass
class Jet2:
    """Value, gradient and symmetric Hessian of a scalar expression.

    ``smooth`` is False iff a non-smooth primitive (abs/sgn/sqrt, or a
    fractional power at base 0) was differentiated at its kink; gradient
    and Hessian are then zeroed placeholders, not usable derivatives.
    """

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    smooth: bool = True


class _JetNode:
    __slots__ = ("v", "g", "h", "smooth")

    def __init__(self, v, g, h, smooth=True):
        self.v = v
        self.g = g
        self.h = h
        self.smooth = smooth


def _jet_const(v, n):
    return _JetNode(v, np.zeros(n), np.zeros((n, n)))


def _jet_kink(v, n):
    return _JetNode(v, np.zeros(n), np.zeros((n, n)), smooth=False)


def _jet_chain(u, fv, d1, d2):
    # f(u): value fv, with f'(u)=d1, f''(u)=d2
    g = d1 * u.g
    h = d1 * u.h + d2 * np.outer(u.g, u.g)
    return _JetNode(fv, g, 0.5 * (h + h.T), u.smooth)


def _jet_eval(e, x, n):
    if isinstance(e, Num):
        return _jet_const(e.value, n)
    if isinstance(e, Var):
        g = np.zeros(n)
        g[e.index - 1] = 1.0
        return _JetNode(float(x[e.index - 1]), g, np.zeros((n, n)))
    if isinstance(e, Neg):
        u = _jet_eval(e.arg, x, n)
        return _JetNode(-u.v, -u.g, -u.h, u.smooth)
    if isinstance(e, Bin):
        a = _jet_eval(e.lhs, x, n)
        if e.op == "^":
            return _jet_pow(a, _jet_eval(e.rhs, x, n), n)
        b = _jet_eval(e.rhs, x, n)
        ok = a.smooth and b.smooth
        if e.op == "+":
            return _JetNode(a.v + b.v, a.g + b.g, a.h + b.h, ok)
        if e.op == "-":
            return _JetNode(a.v - b.v, a.g - b.g, a.h - b.h, ok)
        if e.op == "*":
            cross = np.outer(a.g, b.g)
            h = a.v * b.h + b.v * a.h + cross + cross.T
            return _JetNode(a.v * b.v, a.v * b.g + b.v * a.g, h, ok)
        if b.v == 0.0:
            raise DomainError("division by zero")
        w = a.v / b.v
        g = (a.g - w * b.g) / b.v
        cross = np.outer(g, b.g)
        h = (a.h - cross - cross.T - w * b.h) / b.v
        return _JetNode(w, g, 0.5 * (h + h.T), ok)
    return _jet_call(e.fn, _jet_eval(e.arg, x, n), n)


def _jet_pow(a, b, n):
    if np.any(b.g != 0.0) or np.any(b.h != 0.0):
        # genuinely variable exponent: u^v = exp(v*log(u)), needs u > 0
        if a.v <= 0.0:
            raise DomainError("variable exponent needs positive base")
        lg = _jet_chain(a, math.log(a.v), 1.0 / a.v, -1.0 / a.v**2)
        cross = np.outer(b.g, lg.g)
        prod = _JetNode(
            b.v * lg.v,
            b.v * lg.g + lg.v * b.g,
            b.v * lg.h + lg.v * b.h + cross + cross.T,
            a.smooth and b.smooth,
        )
        val = _pow_value(a.v, b.v)  # keep the value bit-identical with eval_expr
        return _jet_chain(prod, val, val, val)
    c = b.v
    v = _pow_value(a.v, c)
    if a.v == 0.0 and c != 0.0:
        # derivative factors u^(c-1), u^(c-2) degenerate at 0
        if c == 1.0:
            return _JetNode(v, 1.0 * a.g, 1.0 * a.h, a.smooth)
        if c == 2.0:
            h = 2.0 * np.outer(a.g, a.g)
            return _JetNode(v, np.zeros(n), 0.5 * (h + h.T), a.smooth)
        if c > 2.0:
            return _JetNode(v, np.zeros(n), np.zeros((n, n)), a.smooth)
        return _jet_kink(v, n)  # 0 < c < 2, c not in {1, 2}: kink at 0
    d1 = c * _pow_value(a.v, c - 1.0) if c != 0.0 else 0.0
    d2 = c * (c - 1.0) * _pow_value(a.v, c - 2.0) if c not in (0.0, 1.0) else 0.0
    return _jet_chain(a, v, d1, d2)


def _jet_call(fn, u, n):
    if fn == "abs":
        if u.v == 0.0:
            return _jet_kink(0.0, n)
        s = math.copysign(1.0, u.v)
        return _JetNode(abs(u.v), s * u.g, s * u.h, u.smooth)
    if fn == "sgn":
        if u.v == 0.0:
            return _jet_kink(0.0, n)
        return _JetNode(
            math.copysign(1.0, u.v), np.zeros(n), np.zeros((n, n)), u.smooth
        )
    if fn == "sin":
        return _jet_chain(u, math.sin(u.v), math.cos(u.v), -math.sin(u.v))
    if fn == "cos":
        return _jet_chain(u, math.cos(u.v), -math.sin(u.v), -math.cos(u.v))
    if fn == "exp":
        v = _call_value("exp", u.v)
        return _jet_chain(u, v, v, v)
    if fn == "log":
        v = _call_value("log", u.v)
        return _jet_chain(u, v, 1.0 / u.v, -1.0 / u.v**2)
    v = _call_value("sqrt", u.v)
    if u.v == 0.0:
        return _jet_kink(0.0, n)
    return _jet_chain(u, v, 0.5 / v, -0.25 / (u.v * v))


def eval_jet(e: Expr, x) -> Jet2:
    """Value/gradient/Hessian at ``x`` by second-order forward propagation."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    node = _jet_eval(e, x, n)
    if not node.smooth:
        return Jet2(node.v, np.zeros(n), np.zeros((n, n)), smooth=False)
    return Jet2(node.v, node.g, 0.5 * (node.h + node.h.T), smooth=True)


# --------------------------------------------------------------------------
# Vectorized evaluation (used by the Monte Carlo engine)


def compile_array(e: Expr, n: int):
    """Compile to a function mapping an (n, m) state block to m values.

    Out-of-domain inputs produce NaN/inf under ``np.errstate`` suppression
    instead of raising; callers mark the affected paths as failed.
    """
    if max_var_index(e) > n:
        raise ValueError(f"expression references beyond dimension {n}")

    def build(node):
        if isinstance(node, Num):
            v = node.value
            return lambda X: v
        if isinstance(node, Var):
            i = node.index - 1
            return lambda X: X[i]
        if isinstance(node, Neg):
            f = build(node.arg)
            return lambda X: -f(X)
        if isinstance(node, Bin):
            fa, fb = build(node.lhs), build(node.rhs)
            op = node.op
            if op == "+":
                return lambda X: fa(X) + fb(X)
            if op == "-":
                return lambda X: fa(X) - fb(X)
            if op == "*":
                return lambda X: fa(X) * fb(X)
            if op == "/":
                return lambda X: fa(X) / fb(X)
            return lambda X: np.power(fa(X), fb(X))
        f = build(node.arg)
        ufunc = {
            "abs": np.abs,
            "sgn": np.sign,
            "sin": np.sin,
            "cos": np.cos,
            "exp": np.exp,
            "log": np.log,
            "sqrt": np.sqrt,
        }[node.fn]
        return lambda X: ufunc(f(X))

    f = build(e)

    def evaluate(X):
        out = f(X)
        if np.ndim(out) == 0:
            return np.full(X.shape[1], float(out))
        return out

    return evaluate
