"""Concrete syntax for ``.tcml`` files.

Grammar, loosest binding first::

    expr   ::= simple [';' expr]
    simple ::= 'let' x '=' expr 'in' expr
             | 'fun' f '(' [x] ')' '->' expr
             | 'if' expr 'then' expr 'else' simple
             | cmp
    cmp    ::= arith ['<=' arith]
    arith  ::= app {('+' | '-' | '*') app}         (one level, left associative)
    app    ::= prefix | head {atom}
    prefix ::= ('send' atom atom) | (('recv' | 'spawn' | 'fst' | 'snd' | 'add' | 'sub'
               | 'mul' | 'leq' | 'flip' | 'tick') atom)
    head   ::= '-' INT | atom
    atom   ::= INT | 'true' | 'false' | x | '(' ')' | '(' expr ')' | '(' expr ',' expr ')'
             | 'newchan' '[' type ']' | 'commit' k
             | 'atomic' k '{' expr '}' 'else' '{' expr '}'
    type   ::= prod ['->' type]
    prod   ::= chan {'*' chan}
    chan   ::= ('unit' | 'bool' | 'int' | '(' type ')') {'chan'}

``e1; e2`` is sugar for ``let _ = e1 in e2`` and ``a + b`` for ``add (a, b)``.
Comments run from ``--`` to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    App,
    Atomic,
    BoolV,
    ChanV,
    Commit,
    Expr,
    Fun,
    If,
    INT_MAX,
    INT_MIN,
    IntV,
    Let,
    NewChan,
    Op,
    Pair,
    PrimOp,
    Recv,
    Send,
    SourcePos,
    Spawn,
    TArrow,
    TBool,
    TChan,
    TCMLError,
    TInt,
    TProd,
    TUnit,
    TypeExpr,
    UnitV,
    Var,
)


class ParseError(TCMLError):
    def __init__(self, pos: SourcePos, message: str) -> None:
        super().__init__(f"{pos}: {message}")
        self.pos = pos
        self.message = message


KEYWORDS = frozenset(
    "let in if then else fun spawn atomic commit send recv newchan true false "
    "fst snd add sub mul leq flip tick".split()
)

_PREFIX_OPS = {
    "fst": PrimOp.FST,
    "snd": PrimOp.SND,
    "add": PrimOp.ADD,
    "sub": PrimOp.SUB,
    "mul": PrimOp.MUL,
    "leq": PrimOp.LEQ,
    "flip": PrimOp.FLIP,
    "tick": PrimOp.TICK,
}
_BINOPS = {"+": PrimOp.ADD, "-": PrimOp.SUB, "*": PrimOp.MUL}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|--[^\n]*)
  | (?P<int>[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym>->|<=|[-+*(){}\[\],;=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "ident", "kw", "sym", "eof"
    text: str
    pos: SourcePos


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start = 1, 0
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        pos = SourcePos(line, i - line_start + 1, i)
        if m is None:
            raise ParseError(pos, f"unexpected character {text[i]!r}")
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            for j, ch in enumerate(chunk):
                if ch == "\n":
                    line += 1
                    line_start = i + j + 1
        elif kind == "ident" and chunk in KEYWORDS:
            tokens.append(Token("kw", chunk, pos))
        else:
            tokens.append(Token(kind, chunk, pos))
        i = m.end()
    tokens.append(Token("eof", "", SourcePos(line, len(text) - line_start + 1, len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("kw", "sym") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            self.fail(f"expected {what}")
        return self.advance()

    def fail(self, message: str) -> None:
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(t.pos, f"{message}, found {found}")

    # -- expressions -------------------------------------------------------

    def expr(self) -> Expr:
        first = self.simple()
        if self.at(";"):
            semi = self.advance()
            rest = self.expr()
            return Let("_", first, rest, pos=first.pos or semi.pos)
        return first

    def simple(self) -> Expr:
        t = self.tok
        if self.at("let"):
            self.advance()
            name = self.ident("variable name").text
            self.expect("=")
            bound = self.expr()
            self.expect("in")
            return Let(name, bound, self.expr(), pos=t.pos)
        if self.at("fun"):
            self.advance()
            name = self.ident("function name").text
            self.expect("(")
            param = None
            if not self.at(")"):
                param = self.ident("parameter name").text
            self.expect(")")
            self.expect("->")
            return Fun(name, param, self.expr(), pos=t.pos)
        if self.at("if"):
            self.advance()
            cond = self.expr()
            self.expect("then")
            then = self.expr()
            self.expect("else")
            return If(cond, then, self.simple(), pos=t.pos)
        return self.cmp()

    def cmp(self) -> Expr:
        left = self.arith()
        if self.at("<="):
            t = self.advance()
            right = self.arith()
            return Op(PrimOp.LEQ, Pair(left, right, pos=left.pos), pos=left.pos or t.pos)
        return left

    def arith(self) -> Expr:
        left = self.app()
        while self.tok.kind == "sym" and self.tok.text in _BINOPS:
            op = _BINOPS[self.advance().text]
            right = self.app()
            left = Op(op, Pair(left, right, pos=left.pos), pos=left.pos)
        return left

    def app(self) -> Expr:
        t = self.tok
        if t.kind == "kw":
            if t.text == "send":
                self.advance()
                chan = self.atom()
                return Send(chan, self.atom(), pos=t.pos)
            if t.text == "recv":
                self.advance()
                return Recv(self.atom(), pos=t.pos)
            if t.text == "spawn":
                self.advance()
                return Spawn(self.atom(), pos=t.pos)
            if t.text in _PREFIX_OPS:
                self.advance()
                return Op(_PREFIX_OPS[t.text], self.atom(), pos=t.pos)
        if self.at("-") and self.peek().kind == "int":
            self.advance()
            head: Expr = self.integer(self.advance(), negate=True, pos=t.pos)
        else:
            head = self.atom()
        while self.starts_atom():
            head = App(head, self.atom(), pos=head.pos)
        return head

    def starts_atom(self) -> bool:
        t = self.tok
        if t.kind in ("int", "ident"):
            return True
        if t.kind == "kw":
            return t.text in ("true", "false", "newchan", "commit", "atomic")
        return t.kind == "sym" and t.text == "("

    def integer(self, t: Token, negate: bool = False, pos: SourcePos | None = None) -> IntV:
        n = -int(t.text) if negate else int(t.text)
        if not INT_MIN <= n <= INT_MAX:
            raise ParseError(pos or t.pos, f"integer literal {n} out of 64-bit range")
        return IntV(n, pos=pos or t.pos)

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "int":
            return self.integer(self.advance())
        if t.kind == "ident":
            self.advance()
            return Var(t.text, pos=t.pos)
        if self.at("true") or self.at("false"):
            self.advance()
            return BoolV(t.text == "true", pos=t.pos)
        if self.at("newchan"):
            self.advance()
            self.expect("[")
            ty = self.type_()
            self.expect("]")
            return NewChan(ty, pos=t.pos)
        if self.at("commit"):
            self.advance()
            return Commit(self.ident("transaction name").text, pos=t.pos)
        if self.at("atomic"):
            self.advance()
            name = self.ident("transaction name").text
            self.expect("{")
            default = self.expr()
            self.expect("}")
            self.expect("else")
            self.expect("{")
            alternative = self.expr()
            self.expect("}")
            return Atomic(name, default, alternative, pos=t.pos)
        if self.at("("):
            self.advance()
            if self.at(")"):
                self.advance()
                return UnitV(pos=t.pos)
            inner = self.expr()
            if self.at(","):
                self.advance()
                right = self.expr()
                self.expect(")")
                return Pair(inner, right, pos=t.pos)
            self.expect(")")
            return inner
        self.fail("expected an expression")
        raise AssertionError  # unreachable

    # -- types -------------------------------------------------------------

    def type_(self) -> TypeExpr:
        left = self.prod_type()
        if self.at("->"):
            self.advance()
            return TArrow(left, self.type_())
        return left

    def prod_type(self) -> TypeExpr:
        left = self.chan_type()
        while self.at("*"):
            self.advance()
            left = TProd(left, self.chan_type())
        return left

    def chan_type(self) -> TypeExpr:
        t = self.tok
        if self.at("("):
            self.advance()
            ty = self.type_()
            self.expect(")")
        elif t.kind == "ident" and t.text in ("unit", "bool", "int"):
            self.advance()
            ty = {"unit": TUnit(), "bool": TBool(), "int": TInt()}[t.text]
        else:
            self.fail("expected a type")
            raise AssertionError  # unreachable
        while self.tok.kind == "ident" and self.tok.text == "chan":
            self.advance()
            ty = TChan(ty)
        return ty


def parse_expr(text: str) -> Expr:
    """Parse one top-level expression."""
    p = _Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        p.fail("expected end of input")
    return e


def parse_type(text: str) -> TypeExpr:
    p = _Parser(text)
    ty = p.type_()
    if p.tok.kind != "eof":
        p.fail("expected end of input")
    return ty


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

_EXPR, _SIMPLE, _CMP, _ARITH, _APP, _ATOM = range(6)

_BINOP_SYMBOL = {PrimOp.ADD: "+", PrimOp.SUB: "-", PrimOp.MUL: "*"}


def pretty_print(e: Expr) -> str:
    return _pp(e, _EXPR)


def _paren(s: str, needed: bool) -> str:
    return f"({s})" if needed else s


def _pp(e: Expr, ctx: int) -> str:
    if isinstance(e, UnitV):
        return "()"
    if isinstance(e, BoolV):
        return "true" if e.value else "false"
    if isinstance(e, IntV):
        return f"(-{-e.value})" if e.value < 0 else str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, ChanV):
        # channels have no source syntax; render for diagnostics only
        return f"chan#{e.id}"
    if isinstance(e, Pair):
        return f"({_pp(e.left, _EXPR)}, {_pp(e.right, _EXPR)})"
    if isinstance(e, NewChan):
        return f"newchan[{e.type}]"
    if isinstance(e, Commit):
        return f"commit {_txn(e.txn)}"
    if isinstance(e, Atomic):
        return (
            f"atomic {_txn(e.txn)} {{ {_pp(e.default, _EXPR)} }} "
            f"else {{ {_pp(e.alternative, _EXPR)} }}"
        )
    if isinstance(e, Let):
        if e.name == "_":
            first = _pp(e.bound, _CMP)
            return _paren(f"{first}; {_pp(e.body, _EXPR)}", ctx > _EXPR)
        s = f"let {e.name} = {_pp(e.bound, _EXPR)} in {_pp(e.body, _EXPR)}"
        return _paren(s, ctx > _EXPR)
    if isinstance(e, Fun):
        s = f"fun {e.name}({e.param or ''}) -> {_pp(e.body, _EXPR)}"
        return _paren(s, ctx > _EXPR)
    if isinstance(e, If):
        s = f"if {_pp(e.cond, _EXPR)} then {_pp(e.then, _EXPR)} else {_pp(e.else_, _CMP)}"
        return _paren(s, ctx > _SIMPLE)
    if isinstance(e, Op):
        if isinstance(e.arg, Pair) and e.op is PrimOp.LEQ:
            s = f"{_pp(e.arg.left, _ARITH)} <= {_pp(e.arg.right, _ARITH)}"
            return _paren(s, ctx > _CMP)
        if isinstance(e.arg, Pair) and e.op in _BINOP_SYMBOL:
            s = f"{_pp(e.arg.left, _ARITH)} {_BINOP_SYMBOL[e.op]} {_pp(e.arg.right, _APP)}"
            return _paren(s, ctx > _ARITH)
        return _paren(f"{e.op.value} {_pp(e.arg, _ATOM)}", ctx > _APP)
    if isinstance(e, Send):
        return _paren(f"send {_pp(e.chan, _ATOM)} {_pp(e.value, _ATOM)}", ctx > _APP)
    if isinstance(e, Recv):
        return _paren(f"recv {_pp(e.chan, _ATOM)}", ctx > _APP)
    if isinstance(e, Spawn):
        return _paren(f"spawn {_pp(e.thunk, _ATOM)}", ctx > _APP)
    if isinstance(e, App):
        fn = e.fn
        head = _pp(fn, _APP) if isinstance(fn, App) else _pp(fn, _ATOM)
        return _paren(f"{head} {_pp(e.arg, _ATOM)}", ctx > _APP)
    raise TypeError(f"not an expression: {e!r}")


def _txn(k) -> str:
    return k if isinstance(k, str) else f"txn#{k}"
