"""Scalar expression language for user-supplied drift and diffusion fields.

Grammar (whitespace insignificant)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | "+" unary | power
    power  := atom ("^" unary)?            # right associative, binds tighter than "-"
    atom   := number | "x<k>" | param | func "(" expr ")" | "(" expr ")"

Parameters are bound into literals at parse time. Derivatives are exact:
the tree is lowered to sympy, differentiated symbolically and compiled with
``lambdify``. Domain violations (log of a nonpositive number, a non-integer
power of a nonpositive base, division by zero, a derivative requested at the
kink of ``abs``) raise :class:`DomainError`.
"""

from __future__ import annotations

import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy

from quasipot.errors import DomainError, ParseError, UnknownIdentifier

FUNCTIONS: dict[str, Callable[[sympy.Expr], sympy.Expr]] = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
    "tanh": sympy.tanh,
    "abs": sympy.Abs,
}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)
_VAR = re.compile(r"x([1-9][0-9]*)")


# ---------------------------------------------------------------------------
# Syntax tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    arg: Node


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call:
    func: str
    arg: Node


Node = Num | Var | Neg | BinOp | Call


def symbols_for(n: int) -> tuple[sympy.Symbol, ...]:
    """The real sympy symbols ``x1 .. xn``."""
    return tuple(sympy.Symbol(f"x{i + 1}", real=True) for i in range(n))


def _integer_value(exponent: sympy.Expr) -> int | None:
    e = sympy.simplify(exponent)
    if not e.is_number or not e.is_real:
        return None
    value = float(e)
    if value.is_integer() and abs(value) < 2**53:
        return int(value)
    return None


def _literal(value: float) -> sympy.Expr:
    if float(value).is_integer() and abs(value) < 2**53:
        return sympy.Integer(int(value))
    return sympy.Float(value)


@dataclass(frozen=True)
class Guard:
    """A pointwise domain condition: ``kink`` args must be nonzero when
    derivatives are requested, ``positive`` args must always be > 0."""

    kind: str
    arg: sympy.Expr


def _lower(node: Node, xs: Sequence[sympy.Symbol], guards: list[Guard]) -> sympy.Expr:
    if isinstance(node, Num):
        return _literal(node.value)
    if isinstance(node, Var):
        return xs[node.index]
    if isinstance(node, Neg):
        return -_lower(node.arg, xs, guards)
    if isinstance(node, Call):
        arg = _lower(node.arg, xs, guards)
        if node.func == "abs":
            guards.append(Guard("kink", arg))
        return FUNCTIONS[node.func](arg)
    left = _lower(node.left, xs, guards)
    if node.op == "^":
        inner: list[Guard] = []
        right = _lower(node.right, xs, inner)
        k = _integer_value(right)
        if k is not None:
            return sympy.Pow(left, sympy.Integer(k))
        guards.extend(inner)
        guards.append(Guard("positive", left))
        return sympy.Pow(left, right)
    right = _lower(node.right, xs, guards)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return left / right


def _drop_deltas(e: sympy.Expr) -> sympy.Expr:
    # second derivative of abs away from its kink
    return e.replace(sympy.DiracDelta, lambda *args: sympy.S.Zero)


def compile_fn(xs: Sequence[sympy.Symbol], exprs) -> Callable:
    """lambdify with common-subexpression elimination over numpy."""
    return sympy.lambdify(list(xs), exprs, modules="numpy", cse=True)


class GuardSet:
    """Compiled domain guards for a group of expressions."""

    def __init__(self, xs: Sequence[sympy.Symbol], guards: Sequence[Guard]):
        self._kinks = [g.arg for g in guards if g.kind == "kink"]
        self._positive = [g.arg for g in guards if g.kind == "positive"]
        self._kink_fn = compile_fn(xs, self._kinks) if self._kinks else None
        self._positive_fn = compile_fn(xs, self._positive) if self._positive else None

    def check(self, cols: Sequence, *, derivatives: bool) -> None:
        if self._positive_fn is not None:
            for value in self._positive_fn(*cols):
                if np.any(np.asarray(value) <= 0.0):
                    raise DomainError("non-integer power of a nonpositive base")
        if derivatives and self._kink_fn is not None:
            for value in self._kink_fn(*cols):
                if np.any(np.asarray(value) == 0.0):
                    raise DomainError("derivative of abs requested at its kink")


def guarded_call(fn: Callable, cols: Sequence):
    """Call a compiled function, turning floating-point faults into DomainError."""
    try:
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            return fn(*cols)
    except (FloatingPointError, ZeroDivisionError, ValueError) as e:
        raise DomainError(f"evaluation outside the domain: {e}") from e


# ---------------------------------------------------------------------------
# Expression object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


@dataclass(frozen=True, eq=False)
class Expr:
    """A parsed scalar expression over ``x1 .. xn``."""

    root: Node
    n: int

    @cached_property
    def _lowered(self) -> tuple[sympy.Expr, tuple[Guard, ...]]:
        guards: list[Guard] = []
        e = _lower(self.root, symbols_for(self.n), guards)
        return e, tuple(guards)

    def to_sympy(self) -> sympy.Expr:
        return self._lowered[0]

    @property
    def guards(self) -> tuple[Guard, ...]:
        return self._lowered[1]

    @cached_property
    def _compiled(self):
        xs = symbols_for(self.n)
        e = self.to_sympy()
        grad = [_drop_deltas(sympy.diff(e, x)) for x in xs]
        hess = [
            [_drop_deltas(sympy.diff(grad[i], xs[j])) for j in range(self.n)]
            for i in range(self.n)
        ]
        for i in range(self.n):
            for j in range(i):
                hess[i][j] = hess[j][i]
        return compile_fn(xs, [e, grad, hess]), GuardSet(xs, self.guards)

    def evaluate(self, x) -> EvalResult:
        cols = [np.float64(v) for v in np.atleast_1d(np.asarray(x, dtype=float))]
        if len(cols) != self.n:
            raise ValueError(f"expected a point of length {self.n}, got {len(cols)}")
        fn, guards = self._compiled
        guards.check(cols, derivatives=True)
        value, grad, hess = guarded_call(fn, cols)
        g = np.array(grad, dtype=float).reshape(self.n)
        h = np.array(hess, dtype=float).reshape(self.n, self.n)
        if not (np.isfinite(value) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise DomainError("non-finite value or derivative")
        return EvalResult(value=float(value), gradient=g, hessian=h)

    def __str__(self) -> str:
        return to_source(self)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


class _Parser:
    def __init__(self, source: str, n: int, params: Mapping[str, float]):
        self.source = source
        self.n = n
        self.params = params
        self.tokens = self._tokenize()
        self.pos = 0

    def _byte_offset(self, index: int) -> int:
        return len(self.source[:index].encode("utf-8"))

    def _tokenize(self) -> list[_Token]:
        tokens: list[_Token] = []
        i = 0
        while i < len(self.source):
            m = _TOKEN.match(self.source, i)
            if m is None:
                raise ParseError(
                    self._byte_offset(i), f"unexpected character {self.source[i]!r}"
                )
            if m.lastgroup != "ws":
                tokens.append(_Token(m.lastgroup, m.group(), self._byte_offset(i)))
            i = m.end()
        tokens.append(_Token("eof", "", self._byte_offset(len(self.source))))
        return tokens

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def _fail(self, expected: str) -> ParseError:
        t = self.tok
        if t.kind == "eof":
            return ParseError(t.offset, f"unexpected end of input, expected {expected}")
        return ParseError(t.offset, f"unexpected {t.text!r}, expected {expected}")

    def _expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            raise self._fail(repr(text))
        self._advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise self._fail("operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self._advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Num(float(t.text))
        if t.kind == "ident":
            self._advance()
            if t.text in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Call(t.text, arg)
            m = _VAR.fullmatch(t.text)
            if m is not None and int(m.group(1)) <= self.n:
                return Var(int(m.group(1)) - 1)
            if t.text in self.params:
                return Num(float(self.params[t.text]))
            raise UnknownIdentifier(t.text, t.offset)
        if t.kind == "op" and t.text == "(":
            self._advance()
            node = self.expr()
            self._expect(")")
            return node
        raise self._fail("a number, variable, function or '('")


def parse(source: str, n: int, params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``source`` into an :class:`Expr` over ``x1 .. xn``."""
    if not source or not source.strip():
        raise ParseError(0, "empty expression")
    params = dict(params or {})
    for name, value in params.items():
        if not np.isfinite(value):
            raise ValueError(f"parameter {name!r} is not finite")
    return Expr(root=_Parser(source, n, params).parse(), n=n)


def evaluate(e: Expr, x) -> EvalResult:
    """Value, gradient and Hessian of ``e`` at ``x`` (exact derivatives)."""
    return e.evaluate(x)


def _print(node: Node) -> str:
    if isinstance(node, Num):
        text = repr(float(node.value))
        return text if node.value >= 0 else f"({text})"
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{_print(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({_print(node.arg)})"
    return f"({_print(node.left)} {node.op} {_print(node.right)})"


def to_source(e: Expr | Node) -> str:
    """Canonical, fully parenthesised serialisation that parses back to ``e``."""
    return _print(e.root if isinstance(e, Expr) else e)
