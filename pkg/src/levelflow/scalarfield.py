"""Scalar expressions over R^n with exact first derivatives.

Expressions are parsed into a small AST.  Point-wise evaluation walks the
tree; gradients use forward-mode dual numbers, one pass per coordinate.
For batches of points the tree is flattened into a :class:`Tape` that the
compiled (or numpy) kernels in :mod:`levelflow.kernels` execute.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?
    unary  := '-'? atom
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Note that unary minus binds tighter than ``^``: ``-x^2`` is ``(-x)^2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, ParseError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
CONSTANTS = {"pi": math.pi, "e": math.e}
ALIASES = {"x": 1, "y": 2, "z": 3}


# --------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str

    @property
    def value(self) -> float:
        return CONSTANTS[self.name]


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: "Expr"
    # set when the exponent is variable-free and integral
    int_exponent: Union[int, None] = None


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expr"


Expr = Union[Num, Const, Var, Neg, BinOp, Pow, Call]


def has_variables(node: Expr) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, (Num, Const)):
        return False
    if isinstance(node, Neg):
        return has_variables(node.operand)
    if isinstance(node, BinOp):
        return has_variables(node.left) or has_variables(node.right)
    if isinstance(node, Pow):
        return has_variables(node.base) or has_variables(node.exponent)
    return has_variables(node.arg)


def max_variable(node: Expr) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, (Num, Const)):
        return 0
    if isinstance(node, Neg):
        return max_variable(node.operand)
    if isinstance(node, BinOp):
        return max(max_variable(node.left), max_variable(node.right))
    if isinstance(node, Pow):
        return max(max_variable(node.base), max_variable(node.exponent))
    return max_variable(node.arg)


def to_source(node: Expr) -> str:
    """Print ``node`` fully parenthesized; re-parsing gives the same tree."""
    if isinstance(node, Num):
        text = repr(float(node.value))
        return f"(-{text[1:]})" if node.value < 0 else text
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-({to_source(node.operand)}))"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Pow):
        return f"(({to_source(node.base)})^({to_source(node.exponent)}))"
    return f"{node.name}({to_source(node.arg)})"


# ------------------------------------------------------------------ parser

_TOKEN = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(("end", "", len(source) + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, dim: int):
        self.tokens = _tokenize(source)
        self.i = 0
        self.dim = dim

    @property
    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, value, pos = self.take()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ParseError(f"expected {text!r}, found {found}", pos)

    def parse(self) -> Expr:
        node = self.expr()
        kind, value, pos = self.peek
        if kind != "end":
            raise ParseError(f"unexpected {value!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek[1] in ("+", "-") and self.peek[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek[1] in ("*", "/") and self.peek[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        base = self.unary()
        if self.peek == ("op", "^", self.peek[2]):
            self.take()
            exponent = self.factor()
            return make_pow(base, exponent)
        return base

    def unary(self) -> Expr:
        if self.peek[0] == "op" and self.peek[1] == "-":
            self.take()
            return Neg(self.atom())
        return self.atom()

    def atom(self) -> Expr:
        kind, value, pos = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            is_call = self.peek[0] == "op" and self.peek[1] == "("
            if value in FUNCTIONS:
                if not is_call:
                    raise ParseError(f"function {value!r} needs an argument", self.peek[2])
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if is_call:
                raise ParseError(f"unknown function {value!r}", pos)
            if value in CONSTANTS:
                return Const(value)
            return Var(self.variable_index(value, pos))
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected {value!r}", pos)

    def variable_index(self, name, pos) -> int:
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if m:
            index = int(m.group(1))
        elif name in ALIASES and self.dim <= 3:
            index = ALIASES[name]
        else:
            raise ParseError(f"unknown identifier {name!r}", pos)
        if index > self.dim:
            raise ParseError(
                f"variable {name!r} exceeds dimension {self.dim}", pos
            )
        return index


def make_pow(base: Expr, exponent: Expr) -> Pow:
    int_exponent = None
    if not has_variables(exponent):
        k = _eval_node(exponent, ())
        if float(k).is_integer():
            int_exponent = int(k)
    return Pow(base, exponent, int_exponent)


# -------------------------------------------------------------- dual numbers


class Dual:
    """Number ``value + deriv*eps`` with eps^2 = 0."""

    __slots__ = ("value", "deriv")

    def __init__(self, value, deriv=0.0):
        self.value = value
        self.deriv = deriv

    def __repr__(self):
        return f"Dual({self.value!r}, {self.deriv!r})"

    @staticmethod
    def lift(other):
        return other if isinstance(other, Dual) else Dual(float(other))

    def __add__(self, other):
        other = Dual.lift(other)
        return Dual(self.value + other.value, self.deriv + other.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        other = Dual.lift(other)
        return Dual(self.value - other.value, self.deriv - other.deriv)

    def __rsub__(self, other):
        return Dual.lift(other) - self

    def __mul__(self, other):
        other = Dual.lift(other)
        return Dual(
            self.value * other.value,
            self.deriv * other.value + self.value * other.deriv,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Dual.lift(other)
        q = self.value / other.value
        return Dual(q, (self.deriv - q * other.deriv) / other.value)

    def __rtruediv__(self, other):
        return Dual.lift(other) / self

    def __neg__(self):
        return Dual(-self.value, -self.deriv)


def _value(x) -> float:
    return x.value if isinstance(x, Dual) else x


def _int_power(base, k: int):
    """base**k by binary exponentiation (exact product rule for duals)."""
    if k < 0:
        return 1.0 / _int_power(base, -k)
    result = None
    while k:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if k:
            base = base * base
    return 1.0 if result is None else result


def _apply(name: str, x):
    if isinstance(x, Dual):
        a = x.value
        if name == "sin":
            return Dual(math.sin(a), math.cos(a) * x.deriv)
        if name == "cos":
            return Dual(math.cos(a), -math.sin(a) * x.deriv)
        if name == "exp":
            v = math.exp(a)
            return Dual(v, v * x.deriv)
        if name == "log":
            return Dual(math.log(a), x.deriv / a)
        if name == "sqrt":
            v = math.sqrt(a)
            return Dual(v, x.deriv / (2.0 * v))
        v = math.tanh(a)
        return Dual(v, (1.0 - v * v) * x.deriv)
    return getattr(math, name)(x)


def _eval_node(node: Expr, x, dual: bool = False):
    """Evaluate ``node`` at point ``x`` (floats or Duals)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return x[node.index - 1]
    if isinstance(node, Neg):
        return -_eval_node(node.operand, x, dual)
    if isinstance(node, BinOp):
        left = _eval_node(node.left, x, dual)
        right = _eval_node(node.right, x, dual)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if _value(right) == 0.0:
            raise DomainError("division by zero", to_source(node))
        return left / right
    if isinstance(node, Pow):
        base = _eval_node(node.base, x, dual)
        if node.int_exponent is not None:
            if node.int_exponent < 0 and _value(base) == 0.0:
                raise DomainError("division by zero", to_source(node))
            return _int_power(base, node.int_exponent)
        exponent = _eval_node(node.exponent, x, dual)
        if _value(base) <= 0.0:
            raise DomainError("non-integer power of non-positive base", to_source(node))
        try:
            return _apply("exp", exponent * _apply("log", base))
        except OverflowError:
            raise DomainError("overflow", to_source(node)) from None
    arg = _eval_node(node.arg, x, dual)
    a = _value(arg)
    if node.name == "log" and a <= 0.0:
        raise DomainError("log of non-positive value", to_source(node))
    if node.name == "sqrt" and (a < 0.0 or (dual and a == 0.0)):
        what = "sqrt of negative value" if a < 0.0 else "sqrt not differentiable at 0"
        raise DomainError(what, to_source(node))
    try:
        return _apply(node.name, arg)
    except OverflowError:
        raise DomainError("overflow", to_source(node)) from None


# -------------------------------------------------------------------- tape

# opcodes shared with the kernels
CONST, VAR, ADD, SUB, MUL, DIV, NEG, POWI, POW = range(9)
SIN, COS, EXP, LOG, SQRT, TANH = range(9, 15)
_FUNC_OPS = {"sin": SIN, "cos": COS, "exp": EXP, "log": LOG, "sqrt": SQRT, "tanh": TANH}
_BIN_OPS = {"+": ADD, "-": SUB, "*": MUL, "/": DIV}


@dataclass(frozen=True)
class Tape:
    """Straight-line program: instruction i writes slot i.

    ``arg0``/``arg1`` are operand slots (for VAR, ``arg0`` is the 0-based
    coordinate); ``const`` holds CONST values and POWI exponents.  The
    final slot is the result.
    """

    op: np.ndarray
    arg0: np.ndarray
    arg1: np.ndarray
    const: np.ndarray
    labels: tuple
    dim: int

    def __len__(self):
        return len(self.op)


def compile_tape(node: Expr, dim: int) -> Tape:
    rows = []
    labels = []
    memo = {}

    def emit(op, a=0, b=0, c=0.0, label=""):
        key = (op, a, b, c)
        if key in memo:
            return memo[key]
        rows.append(key)
        labels.append(label)
        memo[key] = len(rows) - 1
        return len(rows) - 1

    def walk(n):
        label = to_source(n)
        if isinstance(n, (Num, Const)):
            return emit(CONST, c=float(n.value), label=label)
        if isinstance(n, Var):
            return emit(VAR, a=n.index - 1, label=label)
        if isinstance(n, Neg):
            return emit(NEG, walk(n.operand), label=label)
        if isinstance(n, BinOp):
            return emit(_BIN_OPS[n.op], walk(n.left), walk(n.right), label=label)
        if isinstance(n, Pow):
            if n.int_exponent is not None:
                return emit(POWI, walk(n.base), c=float(n.int_exponent), label=label)
            return emit(POW, walk(n.base), walk(n.exponent), label=label)
        return emit(_FUNC_OPS[n.name], walk(n.arg), label=label)

    walk(node)
    op, a, b, c = zip(*rows)
    return Tape(
        np.array(op, dtype=np.int32),
        np.array(a, dtype=np.int32),
        np.array(b, dtype=np.int32),
        np.array(c, dtype=np.float64),
        tuple(labels),
        dim,
    )


# ------------------------------------------------------------ ScalarField


class ScalarField:
    """Parsed scalar expression over R^dim.  Immutable."""

    def __init__(self, expr: Expr, dim: int, source: str = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if max_variable(expr) > dim:
            raise ValueError("expression references a variable beyond dim")
        self._expr = expr
        self._dim = dim
        self._source = source if source is not None else to_source(expr)
        self._tape = compile_tape(expr, dim)

    expr = property(lambda self: self._expr)
    dim = property(lambda self: self._dim)
    source = property(lambda self: self._source)
    tape = property(lambda self: self._tape)

    def __repr__(self):
        return f"ScalarField({self._source!r}, dim={self._dim})"

    def _check_point(self, x) -> tuple:
        x = tuple(float(v) for v in x)
        if len(x) != self._dim:
            raise ValueError(f"expected a point in R^{self._dim}, got {len(x)} coordinates")
        return x

    def eval(self, x: Sequence[float]) -> float:
        x = self._check_point(x)
        try:
            return float(_eval_node(self._expr, x))
        except DomainError as err:
            raise DomainError(err.reason, err.subexpression, x) from None

    __call__ = eval

    def grad(self, x: Sequence[float]) -> np.ndarray:
        """Gradient at ``x``: one dual pass per coordinate."""
        x = self._check_point(x)
        out = np.empty(self._dim)
        for i in range(self._dim):
            seeded = [Dual(v, 1.0 if j == i else 0.0) for j, v in enumerate(x)]
            try:
                r = _eval_node(self._expr, seeded, dual=True)
            except DomainError as err:
                raise DomainError(err.reason, err.subexpression, x) from None
            out[i] = r.deriv if isinstance(r, Dual) else 0.0
        return out

    def value_and_grad(self, x: Sequence[float]):
        return self.eval(x), self.grad(x)

    # batched paths; see levelflow.kernels
    def eval_many(self, points) -> np.ndarray:
        from . import kernels

        return kernels.eval_values(self._tape, points)

    def grad_many(self, points):
        """Return ``(values, gradients)`` for an ``(m, dim)`` array."""
        from . import kernels

        return kernels.eval_with_grad(self._tape, points)


def parse(source: str, dim: int) -> ScalarField:
    """Parse ``source`` into a field over R^dim."""
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 1)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    expr = _Parser(source, dim).parse()
    return ScalarField(expr, dim, source)


def central_difference_gradient(field: ScalarField, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty(field.dim)
    for i in range(field.dim):
        step = np.zeros(field.dim)
        step[i] = h
        out[i] = (field.eval(x + step) - field.eval(x - step)) / (2 * h)
    return out


def gradient_check(field: ScalarField, points, h=1e-5, rtol=1e-6):
    """Compare dual-number gradients with central differences.

    Returns ``(worst, checked, skipped)`` where ``worst`` is the largest
    ``|grad - fd|_inf / (1 + |grad|_inf)``; points outside the expression's
    domain are skipped.
    """
    worst, checked, skipped = 0.0, 0, 0
    for x in np.asarray(points, dtype=float):
        try:
            g = field.grad(x)
            fd = central_difference_gradient(field, x, h)
        except DomainError:
            skipped += 1
            continue
        worst = max(worst, float(np.max(np.abs(g - fd)) / (1 + np.max(np.abs(g)))))
        checked += 1
    return worst, checked, skipped
