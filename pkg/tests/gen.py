"""Term generators for property tests."""

import itertools

from hypothesis import strategies as st

from tcml.syntax import (
    BOOL_T,
    INT_T,
    UNIT,
    UNIT_T,
    App,
    Atomic,
    BoolV,
    ChanV,
    Commit,
    Fun,
    If,
    IntV,
    Let,
    NewChan,
    Op,
    Pair,
    PrimOp,
    Recv,
    Send,
    Spawn,
    TArrow,
    TChan,
    TProd,
    Var,
)

NAMES = ("x", "y", "f", "g")
ARITH = (PrimOp.ADD, PrimOp.SUB, PrimOp.MUL)

# ---------------------------------------------------------------- untyped, closed

_atoms = st.one_of(
    st.just(UNIT),
    st.builds(BoolV, st.booleans()),
    st.builds(IntV, st.integers(-(2**63), 2**63 - 1)),
    st.builds(ChanV, st.integers(1, 4)),
    st.builds(NewChan, st.sampled_from([UNIT_T, INT_T, TChan(BOOL_T), TProd(INT_T, TArrow(UNIT_T, BOOL_T))])),
    st.builds(Commit, st.sampled_from(["k", "l"])),
)


def _closed(depth: int, bound: frozenset):
    leaves = [_atoms]
    if bound:
        leaves.append(st.sampled_from(sorted(bound)).map(Var))
    leaf = st.one_of(*leaves)
    if depth == 0:
        return leaf
    sub = st.deferred(lambda: _closed(depth - 1, bound))
    name = st.sampled_from(NAMES)

    def fun(f, x, thunk):
        inner = bound | {f} | (set() if thunk else {x})
        return _closed(depth - 1, frozenset(inner)).map(lambda b: Fun(f, None if thunk else x, b))

    def let(x, e1):
        return _closed(depth - 1, bound | {x}).map(lambda body: Let(x, e1, body))

    return st.one_of(
        leaf,
        st.builds(Pair, sub, sub),
        st.builds(App, sub, sub),
        st.builds(Op, st.sampled_from(list(PrimOp)), sub),
        st.tuples(name, sub).flatmap(lambda t: let(*t)),
        st.builds(If, sub, sub, sub),
        st.builds(Send, sub, sub),
        st.builds(Recv, sub),
        st.builds(Spawn, sub),
        st.builds(Atomic, st.sampled_from(["k", "l"]), sub, sub),
        st.tuples(name, name, st.booleans()).flatmap(lambda t: fun(*t)),
    )


_CLOSED = _closed(4, frozenset())


@st.composite
def _closed_exprs(draw):
    return draw(_CLOSED)


closed_exprs = _closed_exprs()


# ---------------------------------------------------------------- well typed

_TYPES = [INT_T, BOOL_T, UNIT_T, TProd(INT_T, BOOL_T)]


@st.composite
def typed(draw, ty=INT_T, depth=4, env=()):
    """A closed expression of type ``ty``; ``env`` lists (name, type) in scope."""
    env = tuple(env)
    in_scope = [n for n, t in dict(env).items() if t == ty]
    if depth <= 0 or draw(st.integers(0, 5)) == 0:
        if in_scope and draw(st.booleans()):
            return Var(draw(st.sampled_from(in_scope)))
        return _literal(draw, ty)
    d = depth - 1
    choice = draw(st.integers(0, 5))
    if choice == 0:
        x = draw(st.sampled_from(NAMES))
        bt = draw(st.sampled_from(_TYPES))
        bound = draw(typed(bt, d, env))
        return Let(x, bound, draw(typed(ty, d, env + ((x, bt),))))
    if choice == 1:
        return If(draw(typed(BOOL_T, d, env)), draw(typed(ty, d, env)), draw(typed(ty, d, env)))
    if choice == 2:
        x = draw(st.sampled_from(NAMES))
        at = draw(st.sampled_from(_TYPES))
        f = draw(st.sampled_from([n for n in NAMES if n != x]))
        inner = tuple((n, t) for n, t in env if n not in (f, x)) + ((x, at),)
        fn = Fun(f, x, draw(typed(ty, d, inner)))
        return App(fn, draw(typed(at, d, env)))
    if choice == 3:
        other = draw(st.sampled_from([INT_T, BOOL_T]))
        pt = TProd(ty, other)
        which = PrimOp.FST
        if draw(st.booleans()):
            pt, which = TProd(other, ty), PrimOp.SND
        return Op(which, draw(typed(pt, d, env)))
    if ty == INT_T and choice == 4:
        return Op(draw(st.sampled_from(ARITH)), Pair(draw(typed(INT_T, d, env)), draw(typed(INT_T, d, env))))
    if ty == BOOL_T and choice == 4:
        return Op(PrimOp.LEQ, Pair(draw(typed(INT_T, d, env)), draw(typed(INT_T, d, env))))
    if isinstance(ty, TProd):
        return Pair(draw(typed(ty.left, d, env)), draw(typed(ty.right, d, env)))
    return _literal(draw, ty)


def _literal(draw, ty):
    if ty == INT_T:
        return IntV(draw(st.integers(-50, 50)))
    if ty == BOOL_T:
        return BoolV(draw(st.booleans()))
    if ty == UNIT_T:
        return UNIT
    return Pair(_literal(draw, ty.left), _literal(draw, ty.right))


typed_programs = st.sampled_from(_TYPES).flatmap(lambda t: st.tuples(st.just(t), typed(t)))


# ---------------------------------------------------------------- exhaustive

SMALL_ATOMS = (IntV(1), UNIT, ChanV(1), Fun("f", None, UNIT), NewChan(INT_T))
SMALL_UNARY = (Recv, Spawn, lambda e: Op(PrimOp.FST, e))
SMALL_BINARY = (Pair, App, Send, lambda a, b: Let("x", a, b))


def all_terms(size: int):
    """Every closed term built from the small vocabulary with exactly ``size`` nodes."""
    if size == 1:
        yield from SMALL_ATOMS
        return
    for mk in SMALL_UNARY:
        for e in all_terms(size - 1):
            yield mk(e)
    for left in range(1, size - 1):
        for a, b in itertools.product(list(all_terms(left)), list(all_terms(size - 1 - left))):
            for mk in SMALL_BINARY:
                yield mk(a, b)
    for i in range(1, size - 2):
        for j in range(1, size - 1 - i):
            k = size - 1 - i - j
            for a, b, c in itertools.product(all_terms(i), all_terms(j), all_terms(k)):
                yield If(a, b, c)
