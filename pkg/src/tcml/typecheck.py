"""Simple type checking for TCML expressions and processes.

Function parameters carry no annotations, so types are found by
first-order unification over type variables, without let-polymorphism.
Variables still unconstrained when checking finishes default to ``unit``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .syntax import (
    App,
    Atomic,
    BOOL_T,
    BoolV,
    ChanV,
    Co,
    Commit,
    Expr,
    ExprP,
    Fun,
    If,
    INT_T,
    IntV,
    Let,
    NewChan,
    Nu,
    Op,
    Pair,
    Par,
    PrimOp,
    ProcessTerm,
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
    Trans,
    TUnit,
    TxnName,
    TypeExpr,
    UNIT_T,
    UnitV,
    Var,
)


class TypeError_(TCMLError):
    def __init__(self, pos: SourcePos | None, message: str) -> None:
        where = f"{pos}: " if pos is not None else ""
        super().__init__(f"{where}{message}")
        self.pos = pos


class TypeMismatch(TypeError_):
    def __init__(self, pos: SourcePos | None, expected: TypeExpr, found: TypeExpr) -> None:
        super().__init__(pos, f"type mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class UnboundVariable(TypeError_):
    pass


class UnboundTransaction(TypeError_):
    pass


class UnboundChannel(TypeError_):
    pass


@dataclass(frozen=True)
class TVar(TypeExpr):
    id: int

    def __str__(self) -> str:
        return f"'t{self.id}"


@dataclass
class TypeEnv:
    vars: dict[str, TypeExpr] = field(default_factory=dict)
    channels: dict[int, TypeExpr] = field(default_factory=dict)
    txns: frozenset[TxnName] = frozenset()

    def bind(self, name: str, ty: TypeExpr) -> TypeEnv:
        return TypeEnv({**self.vars, name: ty}, self.channels, self.txns)

    def with_txn(self, k: TxnName) -> TypeEnv:
        return TypeEnv(self.vars, self.channels, self.txns | {k})

    def without_txn(self, k: TxnName) -> TypeEnv:
        return TypeEnv(self.vars, self.channels, self.txns - {k})

    def with_channel(self, c: int, payload: TypeExpr) -> TypeEnv:
        return TypeEnv(self.vars, {**self.channels, c: payload}, self.txns)


class _Checker:
    def __init__(self) -> None:
        self.subst: dict[int, TypeExpr] = {}
        self.counter = itertools.count()

    def fresh(self) -> TVar:
        return TVar(next(self.counter))

    def resolve(self, t: TypeExpr) -> TypeExpr:
        while isinstance(t, TVar) and t.id in self.subst:
            t = self.subst[t.id]
        return t

    def zonk(self, t: TypeExpr, default: bool = False) -> TypeExpr:
        t = self.resolve(t)
        if isinstance(t, TVar):
            return UNIT_T if default else t
        if isinstance(t, TProd):
            return TProd(self.zonk(t.left, default), self.zonk(t.right, default))
        if isinstance(t, TArrow):
            return TArrow(self.zonk(t.arg, default), self.zonk(t.result, default))
        if isinstance(t, TChan):
            return TChan(self.zonk(t.payload, default))
        return t

    def occurs(self, v: TVar, t: TypeExpr) -> bool:
        t = self.resolve(t)
        if isinstance(t, TVar):
            return t.id == v.id
        if isinstance(t, TProd):
            return self.occurs(v, t.left) or self.occurs(v, t.right)
        if isinstance(t, TArrow):
            return self.occurs(v, t.arg) or self.occurs(v, t.result)
        if isinstance(t, TChan):
            return self.occurs(v, t.payload)
        return False

    def unify(self, expected: TypeExpr, found: TypeExpr, pos: SourcePos | None) -> None:
        if not self._unify(expected, found):
            raise TypeMismatch(pos, self.zonk(expected), self.zonk(found))

    def _unify(self, a: TypeExpr, b: TypeExpr) -> bool:
        a, b = self.resolve(a), self.resolve(b)
        if isinstance(a, TVar):
            if isinstance(b, TVar) and b.id == a.id:
                return True
            if self.occurs(a, b):
                return False
            self.subst[a.id] = b
            return True
        if isinstance(b, TVar):
            return self._unify(b, a)
        if type(a) is not type(b):
            return False
        if isinstance(a, TProd):
            return self._unify(a.left, b.left) and self._unify(a.right, b.right)
        if isinstance(a, TArrow):
            return self._unify(a.arg, b.arg) and self._unify(a.result, b.result)
        if isinstance(a, TChan):
            return self._unify(a.payload, b.payload)
        return True

    def infer(self, env: TypeEnv, e: Expr) -> TypeExpr:
        if isinstance(e, UnitV):
            return UNIT_T
        if isinstance(e, BoolV):
            return BOOL_T
        if isinstance(e, IntV):
            return INT_T
        if isinstance(e, Var):
            try:
                return env.vars[e.name]
            except KeyError:
                raise UnboundVariable(e.pos, f"unbound variable {e.name!r}") from None
        if isinstance(e, ChanV):
            try:
                return TChan(env.channels[e.id])
            except KeyError:
                raise UnboundChannel(e.pos, f"channel {e.id} has no known type") from None
        if isinstance(e, Pair):
            return TProd(self.infer(env, e.left), self.infer(env, e.right))
        if isinstance(e, Fun):
            arg = UNIT_T if e.param is None else self.fresh()
            result = self.fresh()
            inner = env.bind(e.name, TArrow(arg, result))
            if e.param is not None:
                inner = inner.bind(e.param, arg)
            self.unify(result, self.infer(inner, e.body), e.body.pos or e.pos)
            return TArrow(arg, result)
        if isinstance(e, App):
            fn = self.infer(env, e.fn)
            arg = self.infer(env, e.arg)
            result = self.fresh()
            self.unify(TArrow(arg, result), fn, e.fn.pos or e.pos)
            return result
        if isinstance(e, Op):
            return self.infer_op(env, e)
        if isinstance(e, Let):
            bound = self.infer(env, e.bound)
            return self.infer(env.bind(e.name, bound), e.body)
        if isinstance(e, If):
            self.unify(BOOL_T, self.infer(env, e.cond), e.cond.pos or e.pos)
            then = self.infer(env, e.then)
            self.unify(then, self.infer(env, e.else_), e.else_.pos or e.pos)
            return then
        if isinstance(e, Send):
            payload = self.fresh()
            self.unify(TChan(payload), self.infer(env, e.chan), e.chan.pos or e.pos)
            self.unify(payload, self.infer(env, e.value), e.value.pos or e.pos)
            return UNIT_T
        if isinstance(e, Recv):
            payload = self.fresh()
            self.unify(TChan(payload), self.infer(env, e.chan), e.chan.pos or e.pos)
            return payload
        if isinstance(e, NewChan):
            return TChan(e.type)
        if isinstance(e, Spawn):
            self.unify(TArrow(UNIT_T, self.fresh()), self.infer(env, e.thunk), e.thunk.pos or e.pos)
            return UNIT_T
        if isinstance(e, Atomic):
            default = self.infer(env.with_txn(e.txn), e.default)
            alternative = self.infer(env.without_txn(e.txn), e.alternative)
            self.unify(default, alternative, e.alternative.pos or e.pos)
            return default
        if isinstance(e, Commit):
            if e.txn not in env.txns:
                raise UnboundTransaction(e.pos, f"commit of transaction {e.txn!r} outside its scope")
            return UNIT_T
        raise TypeError(f"not an expression: {e!r}")

    def infer_op(self, env: TypeEnv, e: Op) -> TypeExpr:
        arg = self.infer(env, e.arg)
        pos = e.arg.pos or e.pos
        if e.op in (PrimOp.FST, PrimOp.SND):
            left, right = self.fresh(), self.fresh()
            self.unify(TProd(left, right), arg, pos)
            return left if e.op is PrimOp.FST else right
        if e.op in (PrimOp.ADD, PrimOp.SUB, PrimOp.MUL):
            self.unify(TProd(INT_T, INT_T), arg, pos)
            return INT_T
        if e.op is PrimOp.LEQ:
            self.unify(TProd(INT_T, INT_T), arg, pos)
            return BOOL_T
        if e.op is PrimOp.FLIP:
            self.unify(UNIT_T, arg, pos)
            return BOOL_T
        if e.op is PrimOp.TICK:
            self.unify(UNIT_T, arg, pos)
            return UNIT_T
        raise TypeError(f"unknown operator {e.op!r}")


def typecheck_expr(env: TypeEnv | None, e: Expr) -> TypeExpr:
    """Type of ``e`` under ``env``; raises a ``TypeError_`` subclass on failure."""
    checker = _Checker()
    ty = checker.infer(env or TypeEnv(), e)
    return checker.zonk(ty, default=True)


def typecheck_process(env: TypeEnv | None, p: ProcessTerm) -> None:
    """Check every expression leaf of ``p``; leaves may have different types."""
    env = env or TypeEnv()
    if isinstance(p, ExprP):
        typecheck_expr(env, p.expr)
    elif isinstance(p, Par):
        typecheck_process(env, p.left)
        typecheck_process(env, p.right)
    elif isinstance(p, Nu):
        typecheck_process(env if p.type is None else env.with_channel(p.chan, p.type), p.body)
    elif isinstance(p, Trans):
        typecheck_process(env.with_txn(p.txn), p.default)
        typecheck_process(env.without_txn(p.txn), p.alternative)
    elif isinstance(p, Co):
        if p.txn not in env.txns:
            raise UnboundTransaction(None, f"co-token for transaction {p.txn!r} outside its scope")
    else:
        raise TypeError(f"not a process: {p!r}")


__all__ = [
    "TypeEnv",
    "TypeError_",
    "TypeMismatch",
    "UnboundVariable",
    "UnboundTransaction",
    "UnboundChannel",
    "typecheck_expr",
    "typecheck_process",
    "TBool",
    "TInt",
    "TUnit",
]
