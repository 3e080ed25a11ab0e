"""Tiny arithmetic expression language for reward functions.

Numeric-only semantics: comparisons yield 1.0/0.0, `if(cond, a, b)` treats
nonzero as true and evaluates only the taken branch. Division by exact 0.0
and overflow to Inf/NaN are typed errors, never silent non-finite values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import (
    DivisionByZero,
    ExprSyntaxError,
    NonFiniteResult,
    UnboundVariable,
)

FUNCTIONS = {"min": 2, "max": 2, "abs": 1, "clamp": 3, "if": 3}

_CMP_OPS = ("<=", ">=", "==", "!=", "<", ">")
_BIN_PREC = {
    "<": 1, "<=": 1, ">": 1, ">=": 1, "==": 1, "!=": 1,
    "+": 2, "-": 2,
    "*": 3, "/": 3,
}


class Expr:
    """Base class for AST nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str  # full dotted name, e.g. "cur.price"


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | lparen | rparen | comma | end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            start = i
            while i < n and text[i].isdigit():
                i += 1
            if i < n and text[i] == ".":
                i += 1
                while i < n and text[i].isdigit():
                    i += 1
            if i < n and text[i] in "eE":
                j = i + 1
                if j < n and text[j] in "+-":
                    j += 1
                if j < n and text[j].isdigit():
                    i = j
                    while i < n and text[i].isdigit():
                        i += 1
            tokens.append(_Token("num", text[start:i], start))
            continue
        if c.isalpha() or c == "_":
            start = i
            while i < n and (text[i].isalnum() or text[i] in "._"):
                i += 1
            name = text[start:i]
            if name.endswith(".") or ".." in name:
                raise ExprSyntaxError(start, f"malformed identifier {name!r}")
            tokens.append(_Token("ident", name, start))
            continue
        two = text[i : i + 2]
        if two in ("<=", ">=", "==", "!="):
            tokens.append(_Token("op", two, i))
            i += 2
            continue
        if c in "+-*/<>":
            tokens.append(_Token("op", c, i))
            i += 1
            continue
        if c == "(":
            tokens.append(_Token("lparen", c, i))
            i += 1
            continue
        if c == ")":
            tokens.append(_Token("rparen", c, i))
            i += 1
            continue
        if c == ",":
            tokens.append(_Token("comma", c, i))
            i += 1
            continue
        raise ExprSyntaxError(i, f"unexpected character {c!r}")
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    """Precedence-climbing parser over the token list."""

    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ExprSyntaxError(tok.pos, f"expected {what}")
        return self.advance()

    def parse(self) -> Expr:
        expr = self.binary(1)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(tok.pos, f"unexpected token {tok.text!r}")
        return expr

    def binary(self, min_prec: int) -> Expr:
        left = self.unary()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _BIN_PREC:
                return left
            prec = _BIN_PREC[tok.text]
            if prec < min_prec:
                return left
            self.advance()
            right = self.binary(prec + 1)  # left-associative
            left = BinOp(tok.text, left, right)

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "ident":
            if self.peek().kind == "lparen":
                if tok.text not in FUNCTIONS:
                    raise ExprSyntaxError(tok.pos, f"unknown function {tok.text!r}")
                self.advance()
                args = [self.binary(1)]
                while self.peek().kind == "comma":
                    self.advance()
                    args.append(self.binary(1))
                self.expect("rparen", "')'")
                arity = FUNCTIONS[tok.text]
                if len(args) != arity:
                    raise ExprSyntaxError(
                        tok.pos, f"{tok.text}() takes {arity} arguments, got {len(args)}"
                    )
                return Call(tok.text, tuple(args))
            return Var(tok.text)
        if tok.kind == "lparen":
            inner = self.binary(1)
            self.expect("rparen", "')'")
            return inner
        raise ExprSyntaxError(tok.pos, "expected a number, variable, or '('")


def parse_expr(text: str) -> Expr:
    """Parse `text` into an AST, consuming the whole input."""
    if not text.strip():
        raise ExprSyntaxError(0, "empty expression")
    return _Parser(_tokenize(text)).parse()


def free_vars(expr: Expr) -> set[str]:
    """Dotted names of every variable appearing in the tree."""
    out: set[str] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Call):
            stack.extend(node.args)
    return out


Bindings = Mapping[str, float]
_Compiled = Callable[[Bindings], float]


def compile_expr(expr: Expr) -> _Compiled:
    """Compile the AST into a closure; the hot path for per-window rewards."""
    if isinstance(expr, Num):
        value = expr.value
        return lambda env: value
    if isinstance(expr, Var):
        name = expr.name
        def var_fn(env: Bindings) -> float:
            try:
                return env[name]
            except KeyError:
                raise UnboundVariable(name) from None
        return var_fn
    if isinstance(expr, Neg):
        inner = compile_expr(expr.operand)
        return lambda env: -inner(env)
    if isinstance(expr, BinOp):
        lf, rf = compile_expr(expr.left), compile_expr(expr.right)
        op = expr.op
        if op in _CMP_OPS:
            cmp = {
                "<": lambda a, b: a < b,
                "<=": lambda a, b: a <= b,
                ">": lambda a, b: a > b,
                ">=": lambda a, b: a >= b,
                "==": lambda a, b: a == b,
                "!=": lambda a, b: a != b,
            }[op]
            return lambda env: 1.0 if cmp(lf(env), rf(env)) else 0.0
        if op == "/":
            def div_fn(env: Bindings) -> float:
                divisor = rf(env)
                if divisor == 0.0:
                    raise DivisionByZero("division by zero")
                return _finite(lf(env) / divisor)
            return div_fn
        arith = {
            "+": lambda a, b: a + b,
            "-": lambda a, b: a - b,
            "*": lambda a, b: a * b,
        }[op]
        return lambda env: _finite(arith(lf(env), rf(env)))
    if isinstance(expr, Call):
        fns = [compile_expr(a) for a in expr.args]
        if expr.func == "abs":
            f0 = fns[0]
            return lambda env: abs(f0(env))
        if expr.func == "min":
            f0, f1 = fns
            return lambda env: min(f0(env), f1(env))
        if expr.func == "max":
            f0, f1 = fns
            return lambda env: max(f0(env), f1(env))
        if expr.func == "clamp":
            f0, f1, f2 = fns
            return lambda env: min(max(f0(env), f1(env)), f2(env))
        if expr.func == "if":
            fc, fa, fb = fns
            return lambda env: fa(env) if fc(env) != 0.0 else fb(env)
    raise TypeError(f"unknown expression node {expr!r}")


def _finite(x: float) -> float:
    if not math.isfinite(x):
        raise NonFiniteResult("expression result is not finite")
    return x


def eval_expr(expr: Expr, env: Bindings) -> float:
    """Evaluate `expr` under `env`; pure, always finite or a typed error."""
    return compile_expr(expr)(env)


def print_expr(expr: Expr) -> str:
    """Render the fully parenthesized form; reparsing yields an equal tree."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        return f"(-{print_expr(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({print_expr(expr.left)} {expr.op} {print_expr(expr.right)})"
    if isinstance(expr, Call):
        args = ", ".join(print_expr(a) for a in expr.args)
        return f"{expr.func}({args})"
    raise TypeError(f"unknown expression node {expr!r}")
