"""A small arithmetic-expression language in one variable ``x``.

Expressions are parsed once into a tree and evaluated on Taylor jets, so the
derivative of a parsed surface is exact rather than finite-differenced.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x' | 'pi' | 'e' | FUNC '(' expr ')' | '(' expr ')'
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import taylor

FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt", "log")
CONSTANTS = {"pi": math.pi, "e": math.e}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


class ExpressionError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    value: float = 0.0

    def is_constant(self) -> bool:
        return self.op == "num" or (self.op != "x" and all(a.is_constant() for a in self.args))


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        if m.group(1) is not None:
            tokens.append(("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            tokens.append(("name", m.group(2), m.start(2)))
        elif m.group(3) is not None:
            tokens.append(("sym", m.group(3), m.start(3)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, sym: str):
        kind, val, pos = self.take()
        if kind != "sym" or val != sym:
            raise ExpressionError(f"expected '{sym}', found '{val or 'end of input'}'", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected '{val}'", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "sym" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Node(op, (node, self.term()))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "sym" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Node(op, (node, self.unary()))
        return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "sym" and val in "+-":
            self.take()
            inner = self.unary()
            return inner if val == "+" else Node("neg", (inner,))
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "sym" and self.peek()[1] == "^":
            self.take()
            return Node("^", (base, self.unary()))
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Node("num", value=float(val))
        if kind == "name":
            if val == "x":
                return Node("x")
            if val in CONSTANTS:
                return Node("num", value=CONSTANTS[val])
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Node(val, (arg,))
            raise ExpressionError(f"unknown name '{val}'", pos)
        if kind == "sym" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected '{val or 'end of input'}'", pos)


def parse(text: str) -> Node:
    return _Parser(text).parse()


def _const_value(node: Node) -> float:
    return float(evaluate_jet(node, np.zeros((1, 1)))[0, 0])


def evaluate_jet(node: Node, xjet: np.ndarray) -> np.ndarray:
    """Evaluate the tree on a jet of ``x``; returns a jet of the same order."""
    op = node.op
    if op == "num":
        out = np.zeros_like(xjet)
        out[0] = node.value
        return out
    if op == "x":
        return xjet.copy()
    if op == "neg":
        return -evaluate_jet(node.args[0], xjet)
    if op in ("+", "-", "*", "/"):
        a = evaluate_jet(node.args[0], xjet)
        b = evaluate_jet(node.args[1], xjet)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return taylor.mul(a, b)
        return taylor.div(a, b)
    if op == "^":
        base = evaluate_jet(node.args[0], xjet)
        if node.args[1].is_constant():
            return taylor.power(base, _const_value(node.args[1]))
        expo = evaluate_jet(node.args[1], xjet)
        return taylor.exp(taylor.mul(expo, taylor.log(base)))
    a = evaluate_jet(node.args[0], xjet)
    if op == "sin":
        return taylor.sin_cos(a)[0]
    if op == "cos":
        return taylor.sin_cos(a)[1]
    if op == "exp":
        return taylor.exp(a)
    if op == "tanh":
        return taylor.tanh(a)
    if op == "sqrt":
        return taylor.sqrt(a)
    if op == "log":
        return taylor.log(a)
    raise ExpressionError(f"unsupported node '{op}'", 0)
