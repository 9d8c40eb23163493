"""Expression grammar: precedence climbing over a small token stream.

Grammar: ``+ - * / ^`` with the usual precedences, ``^`` right-associative
and binding tighter than unary minus, parentheses, function calls
(sqrt, sin, cos, tan, exp, log), identifiers, decimal and rational
literals.  Errors carry the byte offset and the set of expected tokens.
"""

from __future__ import annotations

import re
from decimal import Decimal
from fractions import Fraction

from . import expr as ex
from .errors import ParseError, UnknownFunctionError

_TOKEN_RE = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?|"
                       r"([A-Za-z][A-Za-z0-9_]*)|([+\-*/^(),]))")

FUNCTIONS = {"sqrt": ex.sqrt, "sin": ex.sin, "cos": ex.cos,
             "tan": ex.tan, "exp": ex.exp, "log": ex.log}

_ATOM_EXPECTED = ("number", "identifier", "(", "-")


class _Token:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[bad]!r}", bad,
                             _ATOM_EXPECTED)
        if m.group(1) is not None:
            num = m.group(1) + (m.group(2) or "")
            tokens.append(_Token("number", num, m.start(1)))
        elif m.group(3) is not None:
            tokens.append(_Token("ident", m.group(3), m.start(3)))
        else:
            tokens.append(_Token(m.group(4), m.group(4), m.start(4)))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, kind):
        t = self.peek()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text or 'end of input'!r}",
                             t.offset, (kind,))
        return self.advance()

    # binding powers: additive 10, multiplicative 20, unary minus 25,
    # power 30 (right-associative)
    def expression(self, min_bp=0):
        t = self.peek()
        if t.kind == "-":
            self.advance()
            left = ex.neg(self.expression(25))
        else:
            left = self.atom()
        while True:
            op = self.peek()
            if op.kind in ("+", "-") and 10 >= min_bp:
                self.advance()
                right = self.expression(11)
                left = ex.add(left, right) if op.kind == "+" else ex.sub(left, right)
            elif op.kind in ("*", "/") and 20 >= min_bp:
                self.advance()
                right = self.expression(21)
                left = ex.mul(left, right) if op.kind == "*" else ex.div(left, right)
            elif op.kind == "^" and 30 >= min_bp:
                self.advance()
                right = self.expression(30)  # right-associative
                if right.kind == "num":
                    left = ex.pow_(left, right.payload)
                elif right.kind == "neg" and right.args[0].kind == "num":
                    left = ex.pow_(left, -right.args[0].payload)
                else:
                    raise ParseError("exponent must be a rational literal",
                                     op.offset, ("number",))
            else:
                return left

    def atom(self):
        t = self.peek()
        if t.kind == "number":
            self.advance()
            return ex.num(Fraction(Decimal(t.text)))
        if t.kind == "ident":
            self.advance()
            if self.peek().kind == "(":
                fn = FUNCTIONS.get(t.text)
                if fn is None:
                    raise UnknownFunctionError(
                        f"unknown function {t.text!r}", t.offset,
                        tuple(sorted(FUNCTIONS)))
                self.advance()
                arg = self.expression(0)
                self.expect(")")
                return fn(arg)
            return ex.var(t.text)
        if t.kind == "(":
            self.advance()
            inner = self.expression(0)
            self.expect(")")
            return inner
        raise ParseError(f"expected a value, found {t.text or 'end of input'!r}",
                         t.offset, _ATOM_EXPECTED)


def parse_expression(text: str) -> ex.Expr:
    """Parse ``text`` into a canonical expression node."""
    p = _Parser(text)
    node = p.expression(0)
    tail = p.peek()
    if tail.kind != "end":
        raise ParseError(f"trailing input {tail.text!r}", tail.offset, ("end",))
    return node
