"""A small recursive-descent parser for rate and offspring expressions.

Grammar::

    expr   := term (("+"|"-") term)* ;
    term   := factor (("*"|"/") factor)* ;
    factor := unary ("^" unary)? ;
    unary  := "-" unary | atom ;
    atom   := NUMBER | "t" | "n" | IDENT "(" expr ("," expr)? ")" | "(" expr ")" ;

Expressions evaluate element-wise on numpy arrays, so a whole time grid can
be pushed through one call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EvaluationError, ExprSyntaxError, UnknownIdentifier

VARIABLES = ("t", "n")
FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "sin": 1, "cos": 1, "min": 2, "max": 2}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


def Pow(a, b):
    return BinOp("^", a, b)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text, char_index):
    return len(text[:char_index].encode("utf-8"))


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def expect(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            found = tok[1] or "end of input"
            raise self.error(f"expected {op!r}, found {found!r}")
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise self.error(f"unexpected token {tok[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        node = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            node = BinOp("^", node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        tok = self.peek()
        kind, value, _ = tok
        if kind == "num":
            self.advance()
            number = float(value)
            if not math.isfinite(number):
                raise self.error(f"number {value!r} overflows", tok)
            return Num(number)
        if kind == "name":
            self.advance()
            if value in VARIABLES:
                return Var(value)
            if value not in FUNCTIONS:
                raise UnknownIdentifier(f"unknown identifier {value!r}", _byte_offset(self.text, tok[2]))
            self.expect("(")
            args = [self.expr()]
            if self.peek()[0] == "op" and self.peek()[1] == ",":
                self.advance()
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNCTIONS[value]:
                raise self.error(f"{value} takes {FUNCTIONS[value]} argument(s), got {len(args)}", tok)
            return Call(value, tuple(args))
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected token {value or 'end of input'!r}")


def _format_number(x):
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def to_text(node):
    """Canonical, fully parenthesised rendering; parse(to_text(a)) == a."""
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(node)


def _variables(node, acc):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _variables(node.operand, acc)
    elif isinstance(node, BinOp):
        _variables(node.left, acc)
        _variables(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _variables(a, acc)
    return acc


def _fail(node, message):
    raise EvaluationError(f"{message} in {to_text(node)}")


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(np.asarray(b) == 0):
                _fail(node, "division by zero")
            return a / b
        out = np.power(np.asarray(a, dtype=float), b)
        if not np.all(np.isfinite(out)):
            _fail(node, "power is not finite")
        return out
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        f = node.func
        if f == "log":
            if np.any(np.asarray(args[0]) <= 0):
                _fail(node, "log of non-positive value")
            return np.log(args[0])
        if f == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                _fail(node, "sqrt of negative value")
            return np.sqrt(args[0])
        if f == "exp":
            return np.exp(args[0])
        if f == "sin":
            return np.sin(args[0])
        if f == "cos":
            return np.cos(args[0])
        if f == "min":
            return np.minimum(args[0], args[1])
        if f == "max":
            return np.maximum(args[0], args[1])
    raise TypeError(node)


@dataclass(frozen=True)
class RateExpression:
    """A parsed expression together with its source text."""

    ast: Node
    source: str = ""

    @property
    def variables(self):
        return frozenset(_variables(self.ast, set()))

    def __str__(self):
        return to_text(self.ast)

    def __call__(self, x, var=None):
        """Evaluate at ``x`` (scalar or array), bound to ``var`` or to both t and n."""
        x = np.asarray(x, dtype=float)
        env = {var: x} if var else {"t": x, "n": x}
        missing = self.variables - env.keys()
        if missing:
            raise EvaluationError(f"unbound variable(s) {sorted(missing)} in {self}")
        with np.errstate(all="ignore"):
            out = np.asarray(_eval(self.ast, env), dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value from {self}")
        return np.broadcast_to(out, x.shape).copy() if out.shape != x.shape else out


def parse_rate_expression(text):
    """Parse ``text`` into a :class:`RateExpression`."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return RateExpression(_Parser(text).parse(), text)


def as_expression(value):
    """Coerce a number, string or expression into a RateExpression."""
    if isinstance(value, RateExpression):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if not math.isfinite(value):
            raise EvaluationError(f"non-finite constant {value!r}")
        return RateExpression(Num(float(value)), repr(value))
    if isinstance(value, str):
        return parse_rate_expression(value)
    raise TypeError(f"cannot interpret {value!r} as an expression")
