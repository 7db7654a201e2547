"""Expression tree IR: construction, evaluation, simplification, infix I/O.

Trees are immutable; they can be shared and evaluated concurrently. The node
vocabulary is fixed: real constants, 0-based variables, six unary operators
(sin, cos, exp, ln, sqrt, square) and four binary operators (plus, minus,
times, divide). Tuning slots for free coefficients are represented by `Param`
leaves and must be substituted (or bound at evaluation time) before an
expression is reported.

Out-of-domain arithmetic (ln of a non-positive number, sqrt of a negative
number, division by a near-zero denominator) does not raise: evaluation
returns a poisoned validity flag so that fitness scoring can penalize the
candidate uniformly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError, ParseError

UNARY_OPS = ("sin", "cos", "exp", "ln", "sqrt", "square")
BINARY_OPS = ("plus", "minus", "times", "divide")

#: denominators with magnitude below this count as division by zero
DIV_EPS = 1e-300


class Expr:
    """Base class for expression nodes. Instances are immutable."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_infix(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    index: int  # 0-based


@dataclass(frozen=True, slots=True)
class Param(Expr):
    """Free coefficient slot (0 or 1); bound via eval params or substitution."""

    slot: int


@dataclass(frozen=True, slots=True)
class Unary(Expr):
    op: str
    child: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise InputError(f"unknown unary operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise InputError(f"unknown binary operator {self.op!r}")


class EvalOutcome(NamedTuple):
    value: float
    valid: bool


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Unary):
        return (e.child,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    return ()


def node_count(e: Expr) -> int:
    return 1 + sum(node_count(c) for c in children(e))


def max_var_index(e: Expr) -> int:
    """Largest variable index referenced, or -1 for a closed expression."""
    if isinstance(e, Var):
        return e.index
    ks = [max_var_index(c) for c in children(e)]
    return max(ks) if ks else -1


def params_used(e: Expr) -> frozenset[int]:
    if isinstance(e, Param):
        return frozenset((e.slot,))
    out: frozenset[int] = frozenset()
    for c in children(e):
        out |= params_used(c)
    return out


def substitute_params(e: Expr, values) -> Expr:
    """Replace Param leaves with Const nodes taken from `values`."""
    if isinstance(e, Param):
        return Const(float(values[e.slot]))
    if isinstance(e, Unary):
        return Unary(e.op, substitute_params(e.child, values))
    if isinstance(e, Binary):
        return Binary(e.op, substitute_params(e.left, values),
                      substitute_params(e.right, values))
    return e


def remap_variables(e: Expr, mapping: dict[int, int]) -> Expr:
    """Renumber variable indices (e.g. block-local back to full-model)."""
    if isinstance(e, Var):
        return Var(mapping[e.index])
    if isinstance(e, Unary):
        return Unary(e.op, remap_variables(e.child, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, remap_variables(e.left, mapping),
                      remap_variables(e.right, mapping))
    return e


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

_UNARY_FN = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "square": np.square,
}


def eval_batch(e: Expr, points: np.ndarray, params=None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate `e` on an (N, n) point matrix.

    Returns (values, valid): a float64 vector and a boolean mask that is False
    wherever a domain violation occurred anywhere in the tree. Values at
    invalid positions are unspecified (typically nan/inf) and must not be
    consumed. Shared subtrees are evaluated once per call.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InputError("points must be a 2-D (N, n) matrix")
    n = points.shape[1]
    k = max_var_index(e)
    if k >= n:
        raise InputError(f"expression references x{k + 1} but points have {n} columns")
    if params is None and params_used(e):
        raise InputError("expression has unbound coefficient slots; pass params")
    N = points.shape[0]
    memo: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def rec(node: Expr) -> tuple[np.ndarray, np.ndarray]:
        got = memo.get(id(node))
        if got is not None:
            return got
        if isinstance(node, Const):
            out = (np.full(N, node.value), np.ones(N, dtype=bool))
        elif isinstance(node, Var):
            out = (points[:, node.index].copy(), np.ones(N, dtype=bool))
        elif isinstance(node, Param):
            out = (np.full(N, float(params[node.slot])), np.ones(N, dtype=bool))
        elif isinstance(node, Unary):
            v, ok = rec(node.child)
            with np.errstate(all="ignore"):
                if node.op == "ln":
                    out = (np.log(v), ok & (v > 0.0))
                elif node.op == "sqrt":
                    out = (np.sqrt(v), ok & (v >= 0.0))
                else:
                    out = (_UNARY_FN[node.op](v), ok)
        else:
            lv, lok = rec(node.left)
            rv, rok = rec(node.right)
            ok = lok & rok
            with np.errstate(all="ignore"):
                if node.op == "plus":
                    out = (lv + rv, ok)
                elif node.op == "minus":
                    out = (lv - rv, ok)
                elif node.op == "times":
                    out = (lv * rv, ok)
                else:
                    out = (lv / rv, ok & (np.abs(rv) >= DIV_EPS))
        memo[id(node)] = out
        return out

    return rec(e)


def evaluate(e: Expr, point, params=None) -> EvalOutcome:
    """Evaluate `e` at a single point (sequence of length n)."""
    pt = np.asarray(point, dtype=np.float64)
    if pt.ndim != 1:
        raise InputError("point must be a 1-D vector")
    values, valid = eval_batch(e, pt.reshape(1, -1), params=params)
    return EvalOutcome(float(values[0]), bool(valid[0]))


# ---------------------------------------------------------------------------
# simplification
# ---------------------------------------------------------------------------


def always_valid(e: Expr) -> bool:
    """True when no point can poison the validity flag (no ln/sqrt/divide)."""
    if isinstance(e, Unary) and e.op in ("ln", "sqrt"):
        return False
    if isinstance(e, Binary) and e.op == "divide":
        return False
    return all(always_valid(c) for c in children(e))


def _fold_unary(op: str, v: float) -> float | None:
    if op == "ln":
        return float(np.log(v)) if v > 0.0 else None
    if op == "sqrt":
        return float(np.sqrt(v)) if v >= 0.0 else None
    return float(_UNARY_FN[op](v))


def _fold_binary(op: str, a: float, b: float) -> float | None:
    if op == "plus":
        return a + b
    if op == "minus":
        return a - b
    if op == "times":
        return a * b
    return a / b if abs(b) >= DIV_EPS else None


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def simplify(e: Expr) -> Expr:
    """Constant folding and identity-element elimination.

    The result is value-equivalent to the input on every point where the
    input is valid, and never has more nodes.
    """
    if isinstance(e, Unary):
        c = simplify(e.child)
        if isinstance(c, Const):
            v = _fold_unary(e.op, c.value)
            if v is not None and np.isfinite(v):
                return Const(v)
        return Unary(e.op, c)
    if not isinstance(e, Binary):
        return e
    a, b = simplify(e.left), simplify(e.right)
    if isinstance(a, Const) and isinstance(b, Const):
        v = _fold_binary(e.op, a.value, b.value)
        if v is not None and np.isfinite(v):
            return Const(v)
    if e.op == "plus":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
    elif e.op == "minus":
        if _is_const(b, 0.0):
            return a
        # -(-x) written as 0 - (0 - x)
        if _is_const(a, 0.0) and isinstance(b, Binary) and b.op == "minus" \
                and _is_const(b.left, 0.0):
            return b.right
    elif e.op == "times":
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
        # annihilation is only safe when the other side cannot poison validity
        if _is_const(a, 0.0) and always_valid(b):
            return Const(0.0)
        if _is_const(b, 0.0) and always_valid(a):
            return Const(0.0)
    elif e.op == "divide":
        if _is_const(b, 1.0):
            return a
    return Binary(e.op, a, b)


# ---------------------------------------------------------------------------
# infix printing
# ---------------------------------------------------------------------------

# precedence levels: plus/minus = 1, times/divide = 2, ^2 and atoms above
_PREC = {"plus": 1, "minus": 1, "times": 2, "divide": 2}


def _render(e: Expr, parent_prec: int, right_side: bool) -> str:
    if isinstance(e, Const):
        s = repr(float(e.value))
        if e.value < 0 and parent_prec > 0:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Param):
        return f"lam{e.slot + 1}"
    if isinstance(e, Unary):
        if e.op == "square":
            inner = _render(e.child, 3, False)
            if not isinstance(e.child, (Var, Unary)) or \
                    (isinstance(e.child, Unary) and e.child.op == "square"):
                inner = f"({_render(e.child, 0, False)})"
            return f"{inner}^2"
        return f"{e.op}({_render(e.child, 0, False)})"
    prec = _PREC[e.op]
    sym = {"plus": " + ", "minus": " - ", "times": "*", "divide": "/"}[e.op]
    left = _render(e.left, prec, False)
    right = _render(e.right, prec, True)
    # minus and divide are left-associative: parenthesize equal-precedence
    # right operands ("a - (b - c)", "a/(b*c)")
    if isinstance(e.right, Binary) and _PREC[e.right.op] == prec and prec in (1, 2) \
            and e.op in ("minus", "divide"):
        right = f"({_render(e.right, 0, False)})"
    s = f"{left}{sym}{right}"
    if prec < parent_prec or (prec == parent_prec and right_side):
        return f"({s})"
    return s


def to_infix(e: Expr) -> str:
    """Render as an infix string; `parse_infix` restores an identical tree."""
    return _render(e, 0, False)


# ---------------------------------------------------------------------------
# infix parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<pow2>\^2)"
    r"|(?P<op>[()+\-*/]))"
)

_FUNCS = {"sin", "cos", "exp", "ln", "sqrt"}


class _Parser:
    """Recursive-descent parser for the documented infix grammar.

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^2')*
    atom   := NUMBER | 'x'k | FUNC '(' expr ')' | '(' expr ')'
    """

    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        i = 0
        while i < len(text):
            m = _TOKEN_RE.match(text, i)
            if m is None:
                if text[i:].strip() == "":
                    break
                raise ParseError(f"unexpected character {text[i]!r}", i)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            i = m.end()
        self.tokens.append(("end", "", len(text)))

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, at = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", at)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, at = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {val!r}", at)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Binary("plus" if op == "+" else "minus", e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = Binary("times" if op == "*" else "divide", e, self.factor())
        return e

    def factor(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            # fold a directly-negated literal into the constant
            kind, val, _ = self.peek()
            if kind == "num" and self.tokens[self.pos + 1][0] != "pow2":
                self.take()
                return Const(-float(val))
            return Binary("minus", Const(0.0), self.factor())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.peek()[0] == "pow2":
            self.take()
            e = Unary("square", e)
        return e

    def atom(self) -> Expr:
        kind, val, at = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _FUNCS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return Unary("ln" if val == "ln" else val, inner)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= self.n:
                    raise ParseError(f"variable {val} out of range 1..{self.n}", at)
                return Var(k - 1)
            if val in ("lam1", "lam2"):
                return Param(0 if val == "lam1" else 1)
            raise ParseError(f"unknown name {val!r}", at)
        if val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {val or 'end of input'!r}", at)


def parse_infix(text: str, n: int) -> Expr:
    """Parse an infix string over variables x1..xn into an expression tree."""
    if n < 0:
        raise InputError("dimension must be non-negative")
    return _Parser(text, n).parse()
