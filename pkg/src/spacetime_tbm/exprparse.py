"""Scalar expressions of chart coordinates.

Metric components and weights are written as infix strings such as
``"-exp(2*x0)"``; :func:`parse` turns them into immutable trees that can be
evaluated at a single point (``math`` scalar path) or over stacked points
(numpy path, coordinates along the last axis).

Precedence, highest first: ``^`` (right associative), unary ``-``, ``* /``,
``+ -``.  Thus ``-x1^2`` is ``-(x1^2)`` and ``2^-1`` is ``2^(-1)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownSymbol

UNARY_OPS = ("neg", "sin", "cos", "sinh", "cosh", "exp", "log", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "^")
FUNCTIONS = UNARY_OPS[1:]


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Coord:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Coord, Unary, Binary]


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while True:
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            rest = source[pos:]
            if rest.strip() == "":
                break
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", len(source[:bad].encode()))
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source.encode())))
    return tokens


# ---------------------------------------------------------------------------
# Pratt parser

_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_NEG_BP = 30


class _Parser:
    def __init__(self, source: str, n: int | None):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.n = n

    def _offset(self, tok: _Token) -> int:
        # byte offset, not character offset
        return len(self.source[: tok.offset].encode()) if tok.kind != "end" else tok.offset

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.advance()
        if tok.text != text or tok.kind == "end":
            raise ExprSyntaxError(f"expected {text!r}", self._offset(tok))

    def expression(self, rbp: int = 0) -> Expr:
        left = self.nud(self.advance())
        while True:
            tok = self.peek()
            lbp = _LBP.get(tok.text, 0) if tok.kind == "op" else 0
            if rbp >= lbp:
                return left
            self.advance()
            left = self.led(tok, left)

    def nud(self, tok: _Token) -> Expr:
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            return self._name(tok)
        if tok.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if tok.text == "-":
            nxt = self.peek()
            after = self.tokens[self.i + 1]
            # "-2.5" is a literal unless it is the base of a power
            if nxt.kind == "num" and after.text != "^":
                self.advance()
                return Const(-float(nxt.text))
            return Unary("neg", self.expression(_NEG_BP))
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", self._offset(tok))
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", self._offset(tok))

    def led(self, tok: _Token, left: Expr) -> Expr:
        if tok.text == "^":
            return Binary("^", left, self.expression(_LBP["^"] - 1))
        return Binary(tok.text, left, self.expression(_LBP[tok.text]))

    def _name(self, tok: _Token) -> Expr:
        name = tok.text
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            idx = int(m.group(1))
            if self.n is not None and idx >= self.n:
                raise UnknownSymbol(f"coordinate {name} undeclared for n={self.n}")
            return Coord(idx)
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.expression(0)
            self.expect(")")
            return Unary(name, arg)
        raise UnknownSymbol(f"unknown identifier {name!r} at offset {self._offset(tok)}")


def parse(source: str, n: int | None = None) -> Expr:
    """Parse an infix expression; ``n`` bounds the admissible coordinate indices."""
    p = _Parser(source, n)
    expr = p.expression(0)
    tok = p.peek()
    if tok.kind != "end":
        raise ExprSyntaxError(f"trailing input {tok.text!r}", p._offset(tok))
    return expr


def to_string(e: Expr) -> str:
    """Fully parenthesised rendering; ``parse(to_string(e)) == e``."""
    if isinstance(e, Const):
        text = repr(float(e.value))
        return f"({text})" if e.value < 0 or text.startswith("-") else text
    if isinstance(e, Coord):
        return f"x{e.index}"
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"-({to_string(e.arg)})"
        return f"{e.op}({to_string(e.arg)})"
    return f"({to_string(e.left)} {e.op} {to_string(e.right)})"


def max_coord(e: Expr) -> int:
    """Largest coordinate index referenced, or -1."""
    if isinstance(e, Coord):
        return e.index
    if isinstance(e, Unary):
        return max_coord(e.arg)
    if isinstance(e, Binary):
        return max(max_coord(e.left), max_coord(e.right))
    return -1


def is_constant(e: Expr) -> bool:
    return max_coord(e) < 0


# ---------------------------------------------------------------------------
# evaluation

def _scalar_unary(op: str, a: float) -> float:
    if op == "neg":
        return -a
    if op == "log":
        if a <= 0.0:
            raise DomainError(f"log of non-positive value {a!r}")
        return math.log(a)
    if op == "sqrt":
        if a < 0.0:
            raise DomainError(f"sqrt of negative value {a!r}")
        return math.sqrt(a)
    if op == "abs":
        return abs(a)
    try:
        return getattr(math, op)(a)
    except OverflowError as exc:
        raise DomainError(f"{op} overflow at {a!r}") from exc


def _scalar_binary(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    try:
        return math.pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"invalid power {a!r}^{b!r}") from exc


def _eval_scalar(e: Expr, point) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Coord):
        return float(point[e.index])
    if isinstance(e, Unary):
        return _scalar_unary(e.op, _eval_scalar(e.arg, point))
    return _scalar_binary(e.op, _eval_scalar(e.left, point), _eval_scalar(e.right, point))


_NP_UNARY = {
    "neg": np.negative, "sin": np.sin, "cos": np.cos, "sinh": np.sinh,
    "cosh": np.cosh, "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
}


def _eval_array(e: Expr, x: np.ndarray):
    if isinstance(e, Const):
        return np.full(x.shape[:-1], e.value)
    if isinstance(e, Coord):
        return x[..., e.index]
    if isinstance(e, Unary):
        a = _eval_array(e.arg, x)
        if e.op == "log" and np.any(a <= 0.0):
            raise DomainError("log of non-positive value")
        if e.op == "sqrt" and np.any(a < 0.0):
            raise DomainError("sqrt of negative value")
        with np.errstate(over="ignore"):
            out = _NP_UNARY[e.op](a)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{e.op} produced a non-finite value")
        return out
    a = _eval_array(e.left, x)
    b = _eval_array(e.right, x)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if np.any(b == 0.0):
            raise DomainError("division by zero")
        return a / b
    with np.errstate(all="ignore"):
        out = np.power(a, b)
    if not np.all(np.isfinite(out)):
        raise DomainError("invalid power")
    return out


def _checked_unary(op: str):
    fn = _NP_UNARY[op]

    def apply(a):
        if op == "log" and np.any(a <= 0.0):
            raise DomainError("log of non-positive value")
        if op == "sqrt" and np.any(a < 0.0):
            raise DomainError("sqrt of negative value")
        with np.errstate(over="ignore"):
            out = fn(a)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{op} produced a non-finite value")
        return out
    return apply


def _safe_div(a, b):
    if np.any(b == 0.0):
        raise DomainError("division by zero")
    return a / b


def _safe_pow(a, b):
    with np.errstate(all="ignore"):
        out = np.power(a, b)
    if not np.all(np.isfinite(out)):
        raise DomainError("invalid power")
    return out


_NP_BINARY = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": _safe_div, "^": _safe_pow}


def compile_array(e: Expr):
    """Closure ``f(x)`` equivalent to ``evaluate(e, x)`` for stacked points.

    Constants come back as Python floats so callers can broadcast them.
    """
    if isinstance(e, Const):
        v = e.value
        return lambda x: v
    if isinstance(e, Coord):
        k = e.index
        return lambda x: x[..., k]
    if isinstance(e, Unary):
        f = compile_array(e.arg)
        if e.op == "neg":
            return lambda x: -f(x)
        g = _checked_unary(e.op)
        return lambda x: g(f(x))
    left, right = compile_array(e.left), compile_array(e.right)
    op = _NP_BINARY[e.op]
    return lambda x: op(left(x), right(x))


def evaluate(e: Expr, point) -> float | np.ndarray:
    """Evaluate ``e`` at ``point``.

    A 1-D point gives a Python float computed with :mod:`math`; an array of
    shape ``(..., n)`` gives an array of shape ``(...)``.
    """
    arr = np.asarray(point, dtype=float)
    if arr.ndim <= 1:
        out = _eval_scalar(e, arr)
        if not math.isfinite(out):
            raise DomainError("non-finite result")
        return out
    out = _eval_array(e, arr)
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite result")
    return out
