"""Concrete syntax for terms, formulas, and hybrid programs.

Whitespace-insensitive; ``#`` starts a line comment.  Formulas use
``& | -> <-> !``, quantifiers ``\\forall x``/``\\exists x`` (optional ``.``
before the body), and modalities ``[prog]phi`` / ``<prog>phi``.  Programs use
``;`` (sequence), ``++`` (choice), ``{...}*`` (loop), ``x:=e``, ``x:=*``,
``?F`` and ``{x'=e, y'=e & Q}``.  The post-state of ``x`` is written
``x_post``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    Assign, AssignAny, Choice, Cmp, Const, Diamond, Divide, Exists, FALSE,
    Forall, Formula, Func, HybridProgram, Implies, Loop, Max, Min, Minus,
    Neg, Not, ODE, Or, Plus, Power, Seq, TRUE, Term, Test, Times, Var,
    And, Box, Equiv,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<quant>\\forall|\\exists)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><->|<=|>=|\+\+|:=|->|[-+*/^(),;?{}<>=!&|.'\[\]])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


_REL_OPS = {"<", "<=", "=", ">=", ">"}


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token plumbing -----------------------------------------------------

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.peek().text == text and self.peek().kind != "eof":
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            raise ParseError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.column)
        return self.next()

    def fail(self, message: str):
        tok = self.peek()
        raise ParseError(message, tok.line, tok.column)

    # -- terms --------------------------------------------------------------

    def term(self) -> Term:
        left = self.product()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            right = self.product()
            left = Plus(left, right) if op == "+" else Minus(left, right)
        return left

    def product(self) -> Term:
        left = self.factor()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            right = self.factor()
            left = Times(left, right) if op == "*" else Divide(left, right)
        return left

    def factor(self) -> Term:
        if self.accept("-"):
            return Neg(self.factor())
        return self.postfix()

    def postfix(self) -> Term:
        base = self.primary_term()
        while self.peek().text == "^":
            self.next()
            tok = self.peek()
            if tok.kind != "num" or "." in tok.text or "e" in tok.text.lower():
                self.fail("exponent must be an integer literal")
            self.next()
            base = Power(base, int(tok.text))
        return base

    def primary_term(self) -> Term:
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self.next()
            if self.peek().text == "(":
                return self.call(tok.text)
            return Var(tok.text)
        if self.accept("("):
            t = self.term()
            self.expect(")")
            return t
        self.fail(f"expected a term, found {tok.text!r}")

    def call(self, name: str) -> Term:
        self.expect("(")
        args = []
        if self.peek().text != ")":
            args.append(self.term())
            while self.accept(","):
                args.append(self.term())
        self.expect(")")
        if name == "min":
            if len(args) != 2:
                self.fail("min takes exactly two arguments")
            return Min(args[0], args[1])
        if name == "max":
            if len(args) != 2:
                self.fail("max takes exactly two arguments")
            return Max(args[0], args[1])
        return Func(name, tuple(args))

    # -- formulas -----------------------------------------------------------

    def formula(self) -> Formula:
        left = self.implies()
        while self.accept("<->"):
            right = self.implies()
            left = Equiv(left, right)
        return left

    def implies(self) -> Formula:
        left = self.disjunction()
        if self.accept("->"):
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> Formula:
        left = self.conjunction()
        while self.accept("|"):
            left = Or(left, self.conjunction())
        return left

    def conjunction(self) -> Formula:
        left = self.unary_formula()
        while self.accept("&"):
            left = And(left, self.unary_formula())
        return left

    def unary_formula(self) -> Formula:
        tok = self.peek()
        if tok.text == "!":
            self.next()
            return Not(self.unary_formula())
        if tok.kind == "quant":
            self.next()
            var = self.peek()
            if var.kind != "ident":
                self.fail("expected a quantified variable name")
            self.next()
            self.accept(".")
            body = self.unary_formula()
            return Forall(var.text, body) if tok.text == "\\forall" else Exists(var.text, body)
        if tok.text == "[":
            self.next()
            prog = self.program()
            self.expect("]")
            return Box(prog, self.unary_formula())
        if tok.text == "<":
            self.next()
            prog = self.program()
            self.expect(">")
            return Diamond(prog, self.unary_formula())
        return self.atom()

    def atom(self) -> Formula:
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "true":
            self.next()
            return TRUE
        if tok.kind == "ident" and tok.text == "false":
            self.next()
            return FALSE
        if tok.text == "(":
            # Could be a parenthesized formula or a parenthesized term that
            # starts a comparison; try the formula reading first.
            saved = self.pos
            try:
                self.next()
                f = self.formula()
                self.expect(")")
                return f
            except ParseError:
                self.pos = saved
        return self.comparison()

    def comparison(self) -> Formula:
        left = self.term()
        tok = self.peek()
        if tok.text not in _REL_OPS or tok.kind == "eof":
            self.fail(f"expected a comparison operator, found {tok.text!r}")
        self.next()
        right = self.term()
        return Cmp(tok.text, left, right)

    # -- hybrid programs ----------------------------------------------------

    def program(self) -> HybridProgram:
        left = self.sequence()
        if self.accept("++"):
            return Choice(left, self.program())
        return left

    def sequence(self) -> HybridProgram:
        left = self.statement()
        if self.accept(";"):
            return Seq(left, self.sequence())
        return left

    def statement(self) -> HybridProgram:
        tok = self.peek()
        if tok.text == "?":
            self.next()
            return Test(self.formula())
        if tok.text == "{":
            return self.braced()
        if tok.kind == "ident":
            name = self.next().text
            self.expect(":=")
            if self.accept("*"):
                return AssignAny(name)
            return Assign(name, self.term())
        self.fail(f"expected a program statement, found {tok.text!r}")

    def braced(self) -> HybridProgram:
        self.expect("{")
        if self.peek().kind == "ident" and self.peek(1).text == "'":
            inner: HybridProgram = self.ode()
        else:
            inner = self.program()
        self.expect("}")
        if self.accept("*"):
            return Loop(inner)
        return inner

    def ode(self) -> ODE:
        equations = [self.ode_equation()]
        while self.accept(","):
            equations.append(self.ode_equation())
        domain: Formula = TRUE
        if self.accept("&"):
            domain = self.formula()
        return ODE(tuple(equations), domain)

    def ode_equation(self) -> tuple[str, Term]:
        tok = self.peek()
        if tok.kind != "ident":
            self.fail("expected a differential equation variable")
        self.next()
        self.expect("'")
        self.expect("=")
        return tok.text, self.term()

    def finish(self):
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"unexpected trailing input {tok.text!r}", tok.line, tok.column)


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    p.finish()
    return t


def parse_formula(text: str) -> Formula:
    p = _Parser(text)
    f = p.formula()
    p.finish()
    return f


def parse_program(text: str) -> HybridProgram:
    p = _Parser(text)
    prog = p.program()
    p.finish()
    return prog
