"""Small math expression language for kernels, sources, and exact solutions.

Grammar (standard precedence, '^' binds tightest and is right-associative):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := atom ['^' factor]
    atom    := number | name | name '(' expr ')' | '(' expr ')'

Names are either bound variables, the constants ``pi`` and ``e``, or one of
the functions sin cos tan sinh cosh tanh exp log sqrt abs gamma.  Expressions
evaluate over autodiff tensors (so anything fed network outputs stays
differentiable) and over plain floats via an independent reference evaluator
used to cross-check the tensor path.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import autodiff as ad

FUNCTIONS = {
    "sin": (ad.sin, math.sin),
    "cos": (ad.cos, math.cos),
    "tan": (ad.tan, math.tan),
    "sinh": (ad.sinh, math.sinh),
    "cosh": (ad.cosh, math.cosh),
    "tanh": (ad.tanh, math.tanh),
    "exp": (ad.exp, math.exp),
    "log": (ad.log, math.log),
    "sqrt": (ad.sqrt, math.sqrt),
    "abs": (ad.absolute, abs),
    "gamma": (ad.gamma_fn, math.gamma),
}

CONSTANTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # 'neg' or a function name
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Const | Var | Unary | Binary

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            bad = len(text) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, allowed_vars: set[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.allowed = set(allowed_vars)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None, len(self.text))

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, offset = self.next()
        if kind != "op" or value != op:
            raise ExpressionError(f"expected {op!r}", offset)

    def parse(self) -> Expr:
        node = self.expr()
        kind, value, offset = self.peek()
        if kind is not None:
            raise ExpressionError(f"unexpected trailing {value!r}", offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                node = Binary(value, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.next()
                node = Binary(value, node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.next()
            return Unary("neg", self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.next()
            return Binary("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        kind, value, offset = self.next()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            nkind, nvalue, _ = self.peek()
            if nkind == "op" and nvalue == "(":
                if value not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {value!r}", offset)
                self.next()
                arg = self.expr()
                self.expect_op(")")
                return Unary(value, arg)
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            if value in self.allowed:
                return Var(value)
            raise ExpressionError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        what = "end of input" if kind is None else repr(value)
        raise ExpressionError(f"expected a value, found {what}", offset)


def parse_expression(text: str, allowed_vars: set[str] | None = None) -> Expr:
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text, allowed_vars or set()).parse()


def eval_expression(node: Expr, bindings: dict):
    """Evaluate over autodiff values (Tensor/Dual/ndarray/float)."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return bindings[node.name]
        except KeyError:
            raise ExpressionError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Unary):
        arg = eval_expression(node.arg, bindings)
        if node.op == "neg":
            return ad.neg(arg)
        try:
            return FUNCTIONS[node.op][0](arg)
        except ad.AutodiffDomainError as exc:
            raise ExpressionError(f"{exc} in sub-expression {to_string(node)!r}") from exc
    if isinstance(node, Binary):
        left = eval_expression(node.left, bindings)
        right = eval_expression(node.right, bindings)
        try:
            if node.op == "+":
                return ad.add(left, right)
            if node.op == "-":
                return ad.sub(left, right)
            if node.op == "*":
                return ad.mul(left, right)
            if node.op == "/":
                return ad.div(left, right)
            if node.op == "^":
                if free_variables(node.right):
                    raise ExpressionError(
                        f"exponent must be constant in {to_string(node)!r}"
                    )
                return ad.pow_const(left, eval_scalar(node.right, {}))
        except ad.AutodiffDomainError as exc:
            raise ExpressionError(f"{exc} in sub-expression {to_string(node)!r}") from exc
    raise ExpressionError(f"cannot evaluate node {node!r}")


def eval_scalar(node: Expr, bindings: dict[str, float]) -> float:
    """Independent float-only evaluator (reference for the tensor path)."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return float(bindings[node.name])
    if isinstance(node, Unary):
        arg = eval_scalar(node.arg, bindings)
        if node.op == "neg":
            return -arg
        return float(FUNCTIONS[node.op][1](arg))
    if isinstance(node, Binary):
        left = eval_scalar(node.left, bindings)
        right = eval_scalar(node.right, bindings)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return left / right
        if node.op == "^":
            return left ** right
    raise ExpressionError(f"cannot evaluate node {node!r}")


def free_variables(node: Expr) -> set[str]:
    if isinstance(node, Const):
        return set()
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Unary):
        return free_variables(node.arg)
    return free_variables(node.left) | free_variables(node.right)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(node: Expr, parent_prec: int = 0) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = to_string(node.arg, _PRECEDENCE["neg"])
            text = f"-{inner}"
            return f"({text})" if parent_prec > _PRECEDENCE["neg"] else text
        return f"{node.op}({to_string(node.arg)})"
    prec = _PRECEDENCE[node.op]
    # Left-assoc operators need tighter right operands; '^' is the reverse.
    if node.op == "^":
        text = f"{to_string(node.left, prec + 1)} ^ {to_string(node.right, prec)}"
    else:
        text = f"{to_string(node.left, prec)} {node.op} {to_string(node.right, prec + 1)}"
    return f"({text})" if parent_prec > prec else text
