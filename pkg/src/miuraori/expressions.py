"""Small arithmetic expression language for user-defined surfaces.

Grammar, in order of increasing precedence::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?            # right-associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

The only variables are ``r`` and ``s``; the function set is fixed.
Parsing is deterministic and reports character positions on failure.
Compiled expressions evaluate with numpy, so scalar and array inputs
both work.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import ExpressionError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "abs": np.abs,
}

VARIABLES = ("r", "s")

_TOKEN_RE = re.compile(
    r"""
    (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup == "number":
            tokens.append(("number", float(m.group()), pos))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group(), pos))
        elif m.lastgroup == "op":
            tokens.append(("op", m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.idx = 0

    def peek(self):
        return self.tokens[self.idx]

    def advance(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, op):
        kind, value, pos = self.peek()
        if kind != "op" or value != op:
            raise ExpressionError(f"expected {op!r}", pos)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing input {value!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = (value, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = (value, node, self.unary())
            else:
                return node

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, value, pos = self.advance()
        if kind == "number":
            return ("const", value)
        if kind == "name":
            nxt_kind, nxt_value, _ = self.peek()
            if nxt_kind == "op" and nxt_value == "(":
                if value not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {value!r}", pos)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return ("call", value, arg)
            if value not in VARIABLES:
                raise ExpressionError(f"unknown identifier {value!r}", pos)
            return ("var", value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token {value!r}" if value else "unexpected end of input", pos)


def parse(text):
    """Parse ``text`` into an AST; raises ExpressionError on bad input."""
    return _Parser(text).parse()


def evaluate(node, r, s):
    """Evaluate an AST at parameter values (scalars or numpy arrays)."""
    op = node[0]
    if op == "const":
        return node[1]
    if op == "var":
        return r if node[1] == "r" else s
    if op == "neg":
        return -evaluate(node[1], r, s)
    if op == "call":
        return FUNCTIONS[node[1]](evaluate(node[2], r, s))
    a = evaluate(node[1], r, s)
    b = evaluate(node[2], r, s)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if op == "^":
        return a ** b
    raise AssertionError(f"unhandled node {op!r}")


def compile_expr(text):
    """Parse once and return a callable (r, s) -> value."""
    ast = parse(text)

    def fn(r, s):
        return evaluate(ast, r, s)

    return fn
