"""Closed-form coefficient expressions.

A deliberately small language: real constants, the variables ``x`` and ``y``,
``pi``, the operators ``+ - * / ^`` and the functions
``sin cos exp log abs sqrt``.  Expressions parse into immutable trees that can
be printed, evaluated (on scalars or numpy arrays) and differentiated.

    >>> e = parse("(x-0.5)^2")
    >>> evaluate(differentiate(e, "x"), {"x": 0.7})
    0.3999999999999999
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Neg", "BinOp", "Call",
    "ExprError", "ExprLexError", "ExprSyntaxError", "ExprDomainError",
    "parse", "to_source", "evaluate", "differentiate",
    "variables", "is_constant", "walk", "abs_arguments", "as_polynomial",
    "from_polynomial", "const", "add", "sub", "mul", "div", "power", "neg", "call",
]

VARIABLES = ("x", "y")
FUNCTIONS = ("sin", "cos", "exp", "log", "abs", "sqrt")
OPERATORS = ("+", "-", "*", "/", "^")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprLexError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class ExprDomainError(ExprError, ArithmeticError):
    """Raised when evaluation leaves the real domain of a sub-expression."""

    def __init__(self, message: str, node: "Expr", index=None):
        where = "" if index is None else f" (sample {index})"
        super().__init__(f"{message} in '{to_source(node)}'{where}")
        self.node = node
        self.index = index


# --------------------------------------------------------------------------
# tree

@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            raise ValueError("Const holds a finite non-negative value; use neg() for signs")
        object.__setattr__(self, "value", v + 0.0)


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ValueError(f"unknown function {self.fn!r}")


Expr = Union[Const, Var, Neg, BinOp, Call]


def walk(e: Expr):
    """Yield every node of ``e`` in pre-order."""
    yield e
    if isinstance(e, (Neg, Call)):
        yield from walk(e.arg)
    elif isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)


def variables(e: Expr) -> frozenset:
    return frozenset(n.name for n in walk(e) if isinstance(n, Var))


def is_constant(e: Expr) -> bool:
    return not variables(e)


def abs_arguments(e: Expr) -> list:
    """Arguments of every ``abs`` call, outermost first (kink candidates)."""
    return [n.arg for n in walk(e) if isinstance(n, Call) and n.fn == "abs"]


# --------------------------------------------------------------------------
# lexer / parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprLexError(f"unexpected character {source[pos]!r}", pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "name" and text not in VARIABLES and text not in FUNCTIONS and text != "pi":
            raise ExprLexError(f"unknown identifier {text!r}", start)
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    # expr  := term (('+'|'-') term)*
    # term  := unary (('*'|'/') unary)*
    # unary := '-' unary | power
    # power := atom ('^' unary)?
    # atom  := number | x | y | pi | fn '(' expr ')' | '(' expr ')'

    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, t, pos = self.take()
        if t != text:
            raise ExprSyntaxError(f"expected {text!r}, found {t or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, t, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {t!r}", pos)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            pos = self.take()[2]
            exponent = self.unary()
            if not is_constant(exponent):
                raise ExprSyntaxError("non-constant exponent", pos)
            return BinOp("^", base, exponent)
        return base

    def atom(self):
        kind, t, pos = self.take()
        if kind == "num":
            return Const(float(t))
        if kind == "name":
            if t == "pi":
                return Const(math.pi)
            if t in VARIABLES:
                return Var(t)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(t, arg)
        if t == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {t or 'end of input'!r}", pos)


def parse(source: str) -> Expr:
    """Parse an expression string; errors carry the character offset."""
    return _Parser(source).parse()


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return 4 if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def to_source(e: Expr) -> str:
    """Print with minimal parentheses; ``parse(to_source(e)) == e``."""

    def wrap(child, need):
        s = to_source(child)
        return f"({s})" if _prec(child) < need else s

    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    if isinstance(e, Neg):
        return "-" + wrap(e.arg, 3)
    if e.op == "^":
        return f"{wrap(e.left, 5)}^{wrap(e.right, 3)}"
    p = _PREC[e.op]
    return f"{wrap(e.left, p)} {e.op} {wrap(e.right, p + 1)}"


# --------------------------------------------------------------------------
# evaluation

Point = Union[Mapping[str, object], tuple, list, float]


def _bind(point: Point) -> dict:
    if isinstance(point, Mapping):
        return dict(point)
    if isinstance(point, (tuple, list)):
        return dict(zip(VARIABLES, point))
    return {"x": point}


def _check(bad, message, node):
    if np.ndim(bad) == 0:
        if bad:
            raise ExprDomainError(message, node)
    elif np.any(bad):
        raise ExprDomainError(message, node, int(np.flatnonzero(bad)[0]))


def _eval(e: Expr, env: dict):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise ExprError(f"no value supplied for variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Call):
        u = _eval(e.arg, env)
        if e.fn == "log":
            _check(u <= 0, "log of non-positive value", e)
            return np.log(u)
        if e.fn == "sqrt":
            _check(u < 0, "sqrt of negative value", e)
            return np.sqrt(u)
        return getattr(np, e.fn)(u)
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        _check(np.asarray(b) == 0, "division by zero", e)
        return a / b
    bad_neg = np.logical_and(np.asarray(a) < 0, np.asarray(b) != np.round(b))
    _check(bad_neg, "fractional power of negative value", e)
    _check(np.logical_and(np.asarray(a) == 0, np.asarray(b) < 0), "zero to a negative power", e)
    return np.power(a, b)


def evaluate(e: Expr, point: Point):
    """Evaluate ``e``; scalar coordinates give a float, arrays give an array."""
    env = {k: (np.asarray(v, dtype=float) if np.ndim(v) else float(v)) for k, v in _bind(point).items()}
    shape = None
    for v in env.values():
        if np.ndim(v):
            shape = np.shape(v)
    with np.errstate(over="ignore"):
        out = _eval(e, env)
    if shape is None:
        return float(out)
    return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()


# --------------------------------------------------------------------------
# folding constructors

def const(c: float) -> Expr:
    c = float(c)
    return Neg(Const(-c)) if c < 0 else Const(c)


def _value(e: Expr):
    """Numeric value of a variable-free tree built from folded constants, else None."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Neg) and isinstance(e.arg, Const):
        return -e.arg.value
    return None


def _fold(value) -> Expr | None:
    return const(value) if math.isfinite(value) else None


def neg(a: Expr) -> Expr:
    va = _value(a)
    if va is not None:
        return const(-va)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _fold(va + vb) or BinOp("+", a, b)
    if va == 0:
        return b
    if vb == 0:
        return a
    if vb is not None and vb < 0:
        return BinOp("-", a, Const(-vb))
    if isinstance(b, Neg):
        return BinOp("-", a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _fold(va - vb) or BinOp("-", a, b)
    if vb == 0:
        return a
    if va == 0:
        return neg(b)
    if vb is not None and vb < 0:
        return BinOp("+", a, Const(-vb))
    if isinstance(b, Neg):
        return BinOp("+", a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _fold(va * vb) or BinOp("*", a, b)
    if va == 0 or vb == 0:
        return Const(0.0)
    if va == 1:
        return b
    if vb == 1:
        return a
    if va == -1:
        return neg(b)
    if vb == -1:
        return neg(a)
    if vb is not None:
        a, b, va, vb = b, a, vb, va
    if va is not None and va < 0:
        return neg(mul(Const(-va), b))
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None and vb != 0:
        return _fold(va / vb) or BinOp("/", a, b)
    if va == 0 and vb != 0:
        return Const(0.0)
    if vb == 1:
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    vb = _value(b)
    if vb == 1:
        return a
    if vb == 0:
        return Const(1.0)
    va = _value(a)
    if va is not None and vb is not None:
        try:
            folded = _fold(math.pow(va, vb))
        except (ValueError, OverflowError, ZeroDivisionError):
            folded = None
        if folded is not None:
            return folded
    return BinOp("^", a, b)


def call(fn: str, a: Expr) -> Expr:
    va = _value(a)
    if va is not None:
        try:
            return _fold(float(evaluate(Call(fn, a), {}))) or Call(fn, a)
        except ExprDomainError:
            pass
    return Call(fn, a)


# --------------------------------------------------------------------------
# differentiation

def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic derivative with constant folding.

    ``abs'(u)`` is written ``u/abs(u)``, so evaluating the derivative exactly
    at a kink raises :class:`ExprDomainError`.
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.name == var else 0.0)
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u, var)
        if _value(du) == 0:
            return Const(0.0)
        if e.fn == "sin":
            outer = call("cos", u)
        elif e.fn == "cos":
            outer = neg(call("sin", u))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "log":
            return div(du, u)
        elif e.fn == "sqrt":
            return div(du, mul(Const(2.0), e))
        else:  # abs
            outer = div(u, e)
        return mul(outer, du)
    a, b = e.left, e.right
    if e.op == "+":
        return add(differentiate(a, var), differentiate(b, var))
    if e.op == "-":
        return sub(differentiate(a, var), differentiate(b, var))
    if e.op == "*":
        return add(mul(differentiate(a, var), b), mul(a, differentiate(b, var)))
    if e.op == "/":
        da, db = differentiate(a, var), differentiate(b, var)
        if _value(db) == 0:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # a ^ c with c variable-free
    da = differentiate(a, var)
    if _value(da) == 0:
        return Const(0.0)
    vb = _value(b)
    reduced = const(vb - 1.0) if vb is not None else sub(b, Const(1.0))
    return mul(mul(b, power(a, reduced)), da)


# --------------------------------------------------------------------------
# polynomials (used for symbolic antiderivatives of flow profiles)

def as_polynomial(e: Expr, var: str = "x"):
    """Coefficients (lowest degree first) if ``e`` is a polynomial in ``var``, else None."""
    P = np.polynomial.polynomial
    if isinstance(e, Const):
        return np.array([e.value])
    if isinstance(e, Var):
        return np.array([0.0, 1.0]) if e.name == var else None
    if isinstance(e, Neg):
        c = as_polynomial(e.arg, var)
        return None if c is None else -c
    if isinstance(e, Call):
        if is_constant(e):
            return np.array([float(evaluate(e, {}))])
        return None
    left = as_polynomial(e.left, var)
    right = as_polynomial(e.right, var)
    if left is None or right is None:
        return None
    if e.op == "+":
        return P.polyadd(left, right)
    if e.op == "-":
        return P.polysub(left, right)
    if e.op == "*":
        return P.polymul(left, right)
    if e.op == "/":
        right = P.polytrim(right)
        if len(right) == 1 and right[0] != 0:
            return left / right[0]
        return None
    right = P.polytrim(right)
    if len(right) != 1:
        return None
    k = right[0]
    if k < 0 or k != round(k) or k > 32:
        return None
    return P.polypow(left, int(k))


def from_polynomial(coeffs, var: str = "x") -> Expr:
    """Build ``sum c_k var^k`` with folding (zero terms dropped)."""
    out: Expr = Const(0.0)
    v = Var(var)
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        out = add(out, mul(const(c), power(v, Const(float(k)))))
    return out
