"""Abstract syntax of TCML.

Types, expressions and process terms, together with the machinery every
other module leans on: evaluation contexts (``decompose``/``plug``),
capture-avoiding substitution, the primitive operators and free-name
computations.

Values are ordinary expression nodes; ``is_value`` decides whether a node
is one.  A pair is a value exactly when both components are.  Channel ids
are integers, variables are strings, and transaction names are strings in
source programs and integers once a transaction has been started.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Union

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

TxnName = Union[str, int]


class TCMLError(Exception):
    """Base class for all errors raised by this package."""


class StuckExpr(TCMLError):
    """A closed expression that is neither a value nor a valid redex."""


class DeltaUndefined(TCMLError):
    """A primitive operator was applied to a value of the wrong shape."""


@dataclass(frozen=True)
class SourcePos:
    line: int
    column: int
    offset: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


def wrap64(n: int) -> int:
    return (n + 2**63) % 2**64 - 2**63


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class TypeExpr:
    __slots__ = ()


@dataclass(frozen=True)
class TUnit(TypeExpr):
    def __str__(self) -> str:
        return "unit"


@dataclass(frozen=True)
class TBool(TypeExpr):
    def __str__(self) -> str:
        return "bool"


@dataclass(frozen=True)
class TInt(TypeExpr):
    def __str__(self) -> str:
        return "int"


@dataclass(frozen=True)
class TProd(TypeExpr):
    left: TypeExpr
    right: TypeExpr

    def __str__(self) -> str:
        return f"{_type_atom(self.left)} * {_type_atom(self.right)}"


@dataclass(frozen=True)
class TArrow(TypeExpr):
    arg: TypeExpr
    result: TypeExpr

    def __str__(self) -> str:
        arg = f"({self.arg})" if isinstance(self.arg, TArrow) else str(self.arg)
        return f"{arg} -> {self.result}"


@dataclass(frozen=True)
class TChan(TypeExpr):
    payload: TypeExpr

    def __str__(self) -> str:
        return f"{_type_atom(self.payload)} chan"


def _type_atom(t: TypeExpr) -> str:
    if isinstance(t, (TArrow, TProd)):
        return f"({t})"
    return str(t)


UNIT_T = TUnit()
BOOL_T = TBool()
INT_T = TInt()


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


class PrimOp(Enum):
    FST = "fst"
    SND = "snd"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    LEQ = "leq"
    # runtime extensions: an internal coin and a benchmark instrumentation hook
    FLIP = "flip"
    TICK = "tick"


@dataclass(frozen=True)
class Expr:
    pos: SourcePos | None = field(default=None, compare=False, repr=False, kw_only=True)


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class UnitV(Expr):
    pass


@dataclass(frozen=True)
class BoolV(Expr):
    value: bool


@dataclass(frozen=True)
class IntV(Expr):
    value: int


@dataclass(frozen=True)
class ChanV(Expr):
    id: int


@dataclass(frozen=True)
class Fun(Expr):
    """Recursive function ``fun name(param) -> body``; ``param`` is None for thunks."""

    name: str
    param: str | None
    body: Expr


@dataclass(frozen=True)
class Pair(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class App(Expr):
    fn: Expr
    arg: Expr


@dataclass(frozen=True)
class Op(Expr):
    op: PrimOp
    arg: Expr


@dataclass(frozen=True)
class Let(Expr):
    name: str
    bound: Expr
    body: Expr


@dataclass(frozen=True)
class If(Expr):
    cond: Expr
    then: Expr
    else_: Expr


@dataclass(frozen=True)
class Send(Expr):
    chan: Expr
    value: Expr


@dataclass(frozen=True)
class Recv(Expr):
    chan: Expr


@dataclass(frozen=True)
class NewChan(Expr):
    type: TypeExpr


@dataclass(frozen=True)
class Spawn(Expr):
    thunk: Expr


@dataclass(frozen=True)
class Atomic(Expr):
    """``atomic k { default } else { alternative }``; k scopes over the default only."""

    txn: TxnName
    default: Expr
    alternative: Expr


@dataclass(frozen=True)
class Commit(Expr):
    txn: TxnName


UNIT = UnitV()
TRUE = BoolV(True)
FALSE = BoolV(False)


def is_value(e: Expr) -> bool:
    if isinstance(e, (UnitV, BoolV, IntV, ChanV, Fun, Var)):
        return True
    if isinstance(e, Pair):
        return is_value(e.left) and is_value(e.right)
    return False


def seq(first: Expr, then: Expr) -> Expr:
    """``first; then`` sugar."""
    return Let("_", first, then)


# ---------------------------------------------------------------------------
# Processes
# ---------------------------------------------------------------------------


class ProcessTerm:
    __slots__ = ()


@dataclass(frozen=True)
class ExprP(ProcessTerm):
    expr: Expr


@dataclass(frozen=True)
class Par(ProcessTerm):
    left: ProcessTerm
    right: ProcessTerm


@dataclass(frozen=True)
class Nu(ProcessTerm):
    chan: int
    body: ProcessTerm
    # payload type, when known; only the type checker looks at it
    type: TypeExpr | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Trans(ProcessTerm):
    txn: TxnName
    default: ProcessTerm
    alternative: ProcessTerm


@dataclass(frozen=True)
class Co(ProcessTerm):
    txn: TxnName


def par(*procs: ProcessTerm) -> ProcessTerm:
    """Right-nested parallel composition of one or more processes."""
    if not procs:
        raise ValueError("par needs at least one process")
    result = procs[-1]
    for p in reversed(procs[:-1]):
        result = Par(p, result)
    return result


# ---------------------------------------------------------------------------
# Evaluation contexts
# ---------------------------------------------------------------------------


class Frame:
    __slots__ = ()


@dataclass(frozen=True)
class PairL(Frame):
    right: Expr


@dataclass(frozen=True)
class PairR(Frame):
    left: Expr


@dataclass(frozen=True)
class AppL(Frame):
    arg: Expr


@dataclass(frozen=True)
class AppR(Frame):
    fn: Expr


@dataclass(frozen=True)
class OpF(Frame):
    op: PrimOp


@dataclass(frozen=True)
class LetF(Frame):
    name: str
    body: Expr


@dataclass(frozen=True)
class IfF(Frame):
    then: Expr
    else_: Expr


@dataclass(frozen=True)
class SendL(Frame):
    value: Expr


@dataclass(frozen=True)
class SendR(Frame):
    chan: Expr


@dataclass(frozen=True)
class RecvF(Frame):
    pass


@dataclass(frozen=True)
class SpawnF(Frame):
    pass


# Frames are stored outermost first; the empty tuple is the hole.
EvalContext = tuple
HOLE: tuple[Frame, ...] = ()


@dataclass(frozen=True)
class ValueResult:
    value: Expr


@dataclass(frozen=True)
class Split:
    context: tuple[Frame, ...]
    redex: Expr


def plug(ctx: tuple[Frame, ...], e: Expr) -> Expr:
    for frame in reversed(ctx):
        e = _plug_frame(frame, e)
    return e


def _plug_frame(f: Frame, e: Expr) -> Expr:
    if isinstance(f, LetF):
        return Let(f.name, e, f.body)
    if isinstance(f, AppR):
        return App(f.fn, e)
    if isinstance(f, AppL):
        return App(e, f.arg)
    if isinstance(f, OpF):
        return Op(f.op, e)
    if isinstance(f, PairL):
        return Pair(e, f.right)
    if isinstance(f, PairR):
        return Pair(f.left, e)
    if isinstance(f, IfF):
        return If(e, f.then, f.else_)
    if isinstance(f, SendL):
        return Send(e, f.value)
    if isinstance(f, SendR):
        return Send(f.chan, e)
    if isinstance(f, RecvF):
        return Recv(e)
    if isinstance(f, SpawnF):
        return Spawn(e)
    raise TypeError(f"not a frame: {f!r}")


def decompose(e: Expr) -> ValueResult | Split:
    """Split a closed expression into its unique evaluation context and redex."""
    frames: list[Frame] = []
    cur = e
    while True:
        if isinstance(cur, Var):
            raise StuckExpr(f"free variable {cur.name!r}")
        if isinstance(cur, Pair):
            if not is_value(cur.left):
                frames.append(PairL(cur.right))
                cur = cur.left
                continue
            if not is_value(cur.right):
                frames.append(PairR(cur.left))
                cur = cur.right
                continue
            if frames:  # pragma: no cover - we only descend into non-values
                raise AssertionError("descended into a value")
            return ValueResult(cur)
        if is_value(cur):
            return ValueResult(cur)
        if isinstance(cur, App):
            if not is_value(cur.fn):
                frames.append(AppL(cur.arg))
                cur = cur.fn
                continue
            if not is_value(cur.arg):
                frames.append(AppR(cur.fn))
                cur = cur.arg
                continue
            if not isinstance(cur.fn, Fun):
                raise StuckExpr(f"application of non-function {cur.fn!r}")
            _check_closed_value(cur.arg)
            break
        if isinstance(cur, Let):
            if not is_value(cur.bound):
                frames.append(LetF(cur.name, cur.body))
                cur = cur.bound
                continue
            _check_closed_value(cur.bound)
            break
        if isinstance(cur, Op):
            if not is_value(cur.arg):
                frames.append(OpF(cur.op))
                cur = cur.arg
                continue
            _check_op_shape(cur.op, cur.arg)
            break
        if isinstance(cur, If):
            if not is_value(cur.cond):
                frames.append(IfF(cur.then, cur.else_))
                cur = cur.cond
                continue
            if not isinstance(cur.cond, BoolV):
                raise StuckExpr(f"if on non-boolean {cur.cond!r}")
            break
        if isinstance(cur, Send):
            if not is_value(cur.chan):
                frames.append(SendL(cur.value))
                cur = cur.chan
                continue
            if not is_value(cur.value):
                frames.append(SendR(cur.chan))
                cur = cur.value
                continue
            if not isinstance(cur.chan, ChanV):
                raise StuckExpr(f"send on non-channel {cur.chan!r}")
            _check_closed_value(cur.value)
            break
        if isinstance(cur, Recv):
            if not is_value(cur.chan):
                frames.append(RecvF())
                cur = cur.chan
                continue
            if not isinstance(cur.chan, ChanV):
                raise StuckExpr(f"recv on non-channel {cur.chan!r}")
            break
        if isinstance(cur, Spawn):
            if not is_value(cur.thunk):
                frames.append(SpawnF())
                cur = cur.thunk
                continue
            if not isinstance(cur.thunk, Fun):
                raise StuckExpr(f"spawn of non-function {cur.thunk!r}")
            break
        if isinstance(cur, (NewChan, Atomic, Commit)):
            break
        raise StuckExpr(f"unknown expression {cur!r}")
    return Split(tuple(frames), cur)


def _check_closed_value(v: Expr) -> None:
    if isinstance(v, Var):
        raise StuckExpr(f"free variable {v.name!r}")
    if isinstance(v, Pair):
        _check_closed_value(v.left)
        _check_closed_value(v.right)


def _check_op_shape(op: PrimOp, v: Expr) -> None:
    _check_closed_value(v)
    try:
        if op not in (PrimOp.FLIP, PrimOp.TICK):
            delta(op, v)
        elif not isinstance(v, UnitV):
            raise DeltaUndefined(f"{op.value} expects unit")
    except DeltaUndefined as exc:
        raise StuckExpr(str(exc)) from exc


def delta(op: PrimOp, v: Expr) -> Expr:
    """Result of a deterministic primitive operator applied to a value."""
    if op is PrimOp.FST or op is PrimOp.SND:
        if not isinstance(v, Pair):
            raise DeltaUndefined(f"{op.value} of non-pair {v!r}")
        return v.left if op is PrimOp.FST else v.right
    if op is PrimOp.TICK:
        if not isinstance(v, UnitV):
            raise DeltaUndefined("tick expects unit")
        return UNIT
    if op is PrimOp.FLIP:
        raise DeltaUndefined("flip is non-deterministic and has no delta")
    if not (isinstance(v, Pair) and isinstance(v.left, IntV) and isinstance(v.right, IntV)):
        raise DeltaUndefined(f"{op.value} expects a pair of ints, got {v!r}")
    a, b = v.left.value, v.right.value
    if op is PrimOp.ADD:
        return IntV(wrap64(a + b))
    if op is PrimOp.SUB:
        return IntV(wrap64(a - b))
    if op is PrimOp.MUL:
        return IntV(wrap64(a * b))
    if op is PrimOp.LEQ:
        return BoolV(a <= b)
    raise DeltaUndefined(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# Substitution and free names
# ---------------------------------------------------------------------------

_fresh_var_counter = itertools.count(1)


def fresh_var(base: str) -> str:
    return f"{base.split(chr(39))[0]}'{next(_fresh_var_counter)}"


def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    _free_vars(e, frozenset(), out)
    return out


def _free_vars(e: Expr, bound: frozenset[str], out: set[str]) -> None:
    if isinstance(e, Var):
        if e.name not in bound:
            out.add(e.name)
    elif isinstance(e, Fun):
        inner = bound | {e.name}
        if e.param is not None:
            inner = inner | {e.param}
        _free_vars(e.body, inner, out)
    elif isinstance(e, Let):
        _free_vars(e.bound, bound, out)
        _free_vars(e.body, bound | {e.name}, out)
    else:
        for child in children(e):
            _free_vars(child, bound, out)


def children(e: Expr) -> tuple[Expr, ...]:
    """Immediate subexpressions, left to right."""
    if isinstance(e, Pair):
        return (e.left, e.right)
    if isinstance(e, App):
        return (e.fn, e.arg)
    if isinstance(e, Op):
        return (e.arg,)
    if isinstance(e, Let):
        return (e.bound, e.body)
    if isinstance(e, If):
        return (e.cond, e.then, e.else_)
    if isinstance(e, Send):
        return (e.chan, e.value)
    if isinstance(e, (Recv,)):
        return (e.chan,)
    if isinstance(e, Spawn):
        return (e.thunk,)
    if isinstance(e, Atomic):
        return (e.default, e.alternative)
    if isinstance(e, Fun):
        return (e.body,)
    return ()


def substitute(e: Expr, x: str, v: Expr) -> Expr:
    """Capture-avoiding substitution ``e[v/x]``."""
    fv = free_vars(v)
    return _subst(e, x, v, fv)


def _subst(e: Expr, x: str, v: Expr, fv: set[str]) -> Expr:
    if isinstance(e, Var):
        return v if e.name == x else e
    if isinstance(e, (UnitV, BoolV, IntV, ChanV, NewChan, Commit)):
        return e
    if isinstance(e, Fun):
        if e.name == x or e.param == x:
            return e
        name, param, body = e.name, e.param, e.body
        if name in fv:
            new = fresh_var(name)
            body = _subst(body, name, Var(new), {new})
            name = new
        if param is not None and param in fv:
            new = fresh_var(param)
            body = _subst(body, param, Var(new), {new})
            param = new
        return Fun(name, param, _subst(body, x, v, fv), pos=e.pos)
    if isinstance(e, Let):
        bound = _subst(e.bound, x, v, fv)
        if e.name == x:
            return Let(e.name, bound, e.body, pos=e.pos)
        name, body = e.name, e.body
        if name in fv:
            new = fresh_var(name)
            body = _subst(body, name, Var(new), {new})
            name = new
        return Let(name, bound, _subst(body, x, v, fv), pos=e.pos)
    if isinstance(e, Pair):
        return Pair(_subst(e.left, x, v, fv), _subst(e.right, x, v, fv), pos=e.pos)
    if isinstance(e, App):
        return App(_subst(e.fn, x, v, fv), _subst(e.arg, x, v, fv), pos=e.pos)
    if isinstance(e, Op):
        return Op(e.op, _subst(e.arg, x, v, fv), pos=e.pos)
    if isinstance(e, If):
        return If(
            _subst(e.cond, x, v, fv), _subst(e.then, x, v, fv), _subst(e.else_, x, v, fv), pos=e.pos
        )
    if isinstance(e, Send):
        return Send(_subst(e.chan, x, v, fv), _subst(e.value, x, v, fv), pos=e.pos)
    if isinstance(e, Recv):
        return Recv(_subst(e.chan, x, v, fv), pos=e.pos)
    if isinstance(e, Spawn):
        return Spawn(_subst(e.thunk, x, v, fv), pos=e.pos)
    if isinstance(e, Atomic):
        return Atomic(e.txn, _subst(e.default, x, v, fv), _subst(e.alternative, x, v, fv), pos=e.pos)
    raise TypeError(f"not an expression: {e!r}")


def substitute_txn(e: Expr, k: TxnName, new: TxnName) -> Expr:
    """Rename free occurrences of transaction name ``k`` to ``new``."""
    if isinstance(e, Commit):
        return Commit(new, pos=e.pos) if e.txn == k else e
    if isinstance(e, Atomic):
        alt = substitute_txn(e.alternative, k, new)
        default = e.default if e.txn == k else substitute_txn(e.default, k, new)
        return Atomic(e.txn, default, alt, pos=e.pos)
    if isinstance(e, (Var, UnitV, BoolV, IntV, ChanV, NewChan)):
        return e
    if isinstance(e, Fun):
        return Fun(e.name, e.param, substitute_txn(e.body, k, new), pos=e.pos)
    if isinstance(e, Let):
        return Let(e.name, substitute_txn(e.bound, k, new), substitute_txn(e.body, k, new), pos=e.pos)
    if isinstance(e, Pair):
        return Pair(substitute_txn(e.left, k, new), substitute_txn(e.right, k, new), pos=e.pos)
    if isinstance(e, App):
        return App(substitute_txn(e.fn, k, new), substitute_txn(e.arg, k, new), pos=e.pos)
    if isinstance(e, Op):
        return Op(e.op, substitute_txn(e.arg, k, new), pos=e.pos)
    if isinstance(e, If):
        return If(
            substitute_txn(e.cond, k, new),
            substitute_txn(e.then, k, new),
            substitute_txn(e.else_, k, new),
            pos=e.pos,
        )
    if isinstance(e, Send):
        return Send(substitute_txn(e.chan, k, new), substitute_txn(e.value, k, new), pos=e.pos)
    if isinstance(e, Recv):
        return Recv(substitute_txn(e.chan, k, new), pos=e.pos)
    if isinstance(e, Spawn):
        return Spawn(substitute_txn(e.thunk, k, new), pos=e.pos)
    raise TypeError(f"not an expression: {e!r}")


def expr_channels(e: Expr) -> set[int]:
    out: set[int] = set()
    stack = [e]
    while stack:
        cur = stack.pop()
        if isinstance(cur, ChanV):
            out.add(cur.id)
        else:
            stack.extend(children(cur))
    return out


def expr_txn_names(e: Expr) -> set[TxnName]:
    """Free transaction names of an expression."""
    if isinstance(e, Commit):
        return {e.txn}
    if isinstance(e, Atomic):
        return (expr_txn_names(e.default) - {e.txn}) | expr_txn_names(e.alternative)
    out: set[TxnName] = set()
    for child in children(e):
        out |= expr_txn_names(child)
    return out


def free_channels(p: ProcessTerm | Expr) -> set[int]:
    if isinstance(p, Expr):
        return expr_channels(p)
    if isinstance(p, ExprP):
        return expr_channels(p.expr)
    if isinstance(p, Par):
        return free_channels(p.left) | free_channels(p.right)
    if isinstance(p, Nu):
        return free_channels(p.body) - {p.chan}
    if isinstance(p, Trans):
        return free_channels(p.default) | free_channels(p.alternative)
    if isinstance(p, Co):
        return set()
    raise TypeError(f"not a process: {p!r}")


def free_txn_names(p: ProcessTerm | Expr) -> set[TxnName]:
    if isinstance(p, Expr):
        return expr_txn_names(p)
    if isinstance(p, ExprP):
        return expr_txn_names(p.expr)
    if isinstance(p, Par):
        return free_txn_names(p.left) | free_txn_names(p.right)
    if isinstance(p, Nu):
        return free_txn_names(p.body)
    if isinstance(p, Trans):
        return (free_txn_names(p.default) - {p.txn}) | free_txn_names(p.alternative)
    if isinstance(p, Co):
        return {p.txn}
    raise TypeError(f"not a process: {p!r}")


def subterms(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        cur = stack.pop()
        yield cur
        stack.extend(children(cur))


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------


def term_key(e: Expr) -> str:
    """Compact, injective rendering used for ordering and hashing terms.

    Cached on the node; nodes are immutable so the cache never goes stale.
    """
    try:
        return e.__dict__["_key"]
    except KeyError:
        pass
    k = _render_key(e)
    object.__setattr__(e, "_key", k)
    return k


def _render_key(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, UnitV):
        return "()"
    if isinstance(e, BoolV):
        return "T" if e.value else "F"
    if isinstance(e, IntV):
        return f"#{e.value}"
    if isinstance(e, ChanV):
        return f"@{e.id}"
    if isinstance(e, Fun):
        return f"(fun {e.name} {e.param or '()'} {term_key(e.body)})"
    if isinstance(e, Pair):
        return f"({term_key(e.left)},{term_key(e.right)})"
    if isinstance(e, App):
        return f"(ap {term_key(e.fn)} {term_key(e.arg)})"
    if isinstance(e, Op):
        return f"({e.op.value} {term_key(e.arg)})"
    if isinstance(e, Let):
        return f"(let {e.name} {term_key(e.bound)} {term_key(e.body)})"
    if isinstance(e, If):
        return f"(if {term_key(e.cond)} {term_key(e.then)} {term_key(e.else_)})"
    if isinstance(e, Send):
        return f"(send {term_key(e.chan)} {term_key(e.value)})"
    if isinstance(e, Recv):
        return f"(recv {term_key(e.chan)})"
    if isinstance(e, NewChan):
        return f"(newchan {e.type})"
    if isinstance(e, Spawn):
        return f"(spawn {term_key(e.thunk)})"
    if isinstance(e, Atomic):
        return f"(atomic {_txn_key(e.txn)} {term_key(e.default)} {term_key(e.alternative)})"
    if isinstance(e, Commit):
        return f"(commit {_txn_key(e.txn)})"
    raise TypeError(f"not an expression: {e!r}")


def _txn_key(k: TxnName) -> str:
    return f"%{k}" if isinstance(k, int) else k


def rename_ids(e: Expr, chans: dict[int, int], txns: dict[int, int]) -> Expr:
    """Rename channel ids and integer transaction ids by the given maps."""
    if not chans and not txns:
        return e
    return _rename(e, chans, txns)


def _ids(e: Expr) -> tuple[frozenset[int], frozenset[int]]:
    # channel ids and integer txn ids occurring in e, cached like term_key
    try:
        return e.__dict__["_ids"]
    except KeyError:
        pass
    if isinstance(e, ChanV):
        out = (frozenset({e.id}), frozenset())
    elif isinstance(e, Commit):
        out = (frozenset(), frozenset({e.txn}) if isinstance(e.txn, int) else frozenset())
    else:
        cs: set[int] = set()
        ts: set[int] = set()
        if isinstance(e, Atomic) and isinstance(e.txn, int):
            ts.add(e.txn)
        for c in children(e):
            a, b = _ids(c)
            cs |= a
            ts |= b
        out = (frozenset(cs), frozenset(ts))
    object.__setattr__(e, "_ids", out)
    return out


def _untouched(e: Expr, chans: dict[int, int], txns: dict[int, int]) -> bool:
    cs, ts = _ids(e)
    return all(chans.get(c, c) == c for c in cs) and all(txns.get(t, t) == t for t in ts)


def _rename(e: Expr, chans: dict[int, int], txns: dict[int, int]) -> Expr:
    if _untouched(e, chans, txns):
        return e
    if isinstance(e, ChanV):
        new = chans.get(e.id)
        return e if new is None or new == e.id else ChanV(new)
    if isinstance(e, Commit):
        new = txns.get(e.txn) if isinstance(e.txn, int) else None
        return e if new is None or new == e.txn else Commit(new)
    if isinstance(e, (Var, UnitV, BoolV, IntV, NewChan)):
        return e
    if isinstance(e, Fun):
        body = _rename(e.body, chans, txns)
        return e if body is e.body else Fun(e.name, e.param, body)
    if isinstance(e, Atomic):
        txn = txns.get(e.txn, e.txn) if isinstance(e.txn, int) else e.txn
        d = _rename(e.default, chans, txns)
        a = _rename(e.alternative, chans, txns)
        if d is e.default and a is e.alternative and txn == e.txn:
            return e
        return Atomic(txn, d, a)
    kids = children(e)
    new_kids = tuple(_rename(c, chans, txns) for c in kids)
    if all(a is b for a, b in zip(kids, new_kids)):
        return e
    return rebuild(e, new_kids)


def rebuild(e: Expr, kids: tuple[Expr, ...]) -> Expr:
    """Same node as ``e`` with its immediate subexpressions replaced."""
    if isinstance(e, Pair):
        return Pair(kids[0], kids[1], pos=e.pos)
    if isinstance(e, App):
        return App(kids[0], kids[1], pos=e.pos)
    if isinstance(e, Op):
        return Op(e.op, kids[0], pos=e.pos)
    if isinstance(e, Let):
        return Let(e.name, kids[0], kids[1], pos=e.pos)
    if isinstance(e, If):
        return If(kids[0], kids[1], kids[2], pos=e.pos)
    if isinstance(e, Send):
        return Send(kids[0], kids[1], pos=e.pos)
    if isinstance(e, Recv):
        return Recv(kids[0], pos=e.pos)
    if isinstance(e, Spawn):
        return Spawn(kids[0], pos=e.pos)
    if isinstance(e, Atomic):
        return Atomic(e.txn, kids[0], kids[1], pos=e.pos)
    if isinstance(e, Fun):
        return Fun(e.name, e.param, kids[0], pos=e.pos)
    return e


def alpha_normalize(e: Expr) -> Expr:
    """Rename bound variables and source transaction binders canonically."""
    return _alpha(e, {}, {}, itertools.count())


def _alpha(e: Expr, env: dict[str, str], tenv: dict[str, str], counter) -> Expr:
    if isinstance(e, Var):
        return Var(env.get(e.name, e.name))
    if isinstance(e, Commit):
        if isinstance(e.txn, str):
            return Commit(tenv.get(e.txn, e.txn))
        return e
    if isinstance(e, Fun):
        name = f"f{next(counter)}"
        inner = {**env, e.name: name}
        param = None
        if e.param is not None:
            param = f"x{next(counter)}"
            inner[e.param] = param
        return Fun(name, param, _alpha(e.body, inner, tenv, counter))
    if isinstance(e, Let):
        bound = _alpha(e.bound, env, tenv, counter)
        name = f"x{next(counter)}"
        return Let(name, bound, _alpha(e.body, {**env, e.name: name}, tenv, counter))
    if isinstance(e, Atomic):
        if isinstance(e.txn, str):
            name = f"k{next(counter)}"
            default = _alpha(e.default, env, {**tenv, e.txn: name}, counter)
            return Atomic(name, default, _alpha(e.alternative, env, tenv, counter))
        return Atomic(
            e.txn, _alpha(e.default, env, tenv, counter), _alpha(e.alternative, env, tenv, counter)
        )
    kids = children(e)
    if not kids:
        return e
    return rebuild(e, tuple(_alpha(c, env, tenv, counter) for c in kids))


_channel_counter = itertools.count(1)


def fresh_channel_id() -> int:
    """Globally fresh positive channel id (for hand-built free channels)."""
    return next(_channel_counter)
