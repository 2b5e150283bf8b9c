"""Exhaustive reference semantics.

States are kept in a canonical form: parallel composition is flattened into
multisets, every restriction is hoisted to the top level, and all restricted
channels and transaction instances are renamed in order of first occurrence
in a sorted rendering.  Two alpha-variants of a process therefore share one
``CanonicalState.key`` and memoisation over keys implements structural
congruence.

Naming conventions inside canonical states: free channels keep their
(positive) ids, restricted channels are ``-1, -2, ...`` and transaction
instances are ``0, 1, ...``.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

from .syntax import (
    App,
    Atomic,
    ChanV,
    Co,
    Commit,
    Expr,
    ExprP,
    FALSE,
    If,
    Let,
    NewChan,
    Nu,
    Op,
    Par,
    PrimOp,
    ProcessTerm,
    Recv,
    Send,
    Spawn,
    TRUE,
    Trans,
    UNIT,
    ValueResult,
    alpha_normalize,
    decompose,
    delta,
    expr_channels,
    is_value,
    plug,
    rename_ids,
    substitute,
    substitute_txn,
    term_key,
)

# ---------------------------------------------------------------------------
# Sequential steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Blocked:
    """A thread waiting at ``send``/``recv`` for a partner."""

    context: tuple
    redex: Expr


@dataclass(frozen=True)
class Effect:
    """A redex whose reduction needs the process level (spawn, atomic, ...)."""

    kind: str
    context: tuple
    redex: Expr


def reduce_pure(redex: Expr) -> tuple[str, Expr]:
    """Contract a functional redex; returns the rule kind and the contractum."""
    if isinstance(redex, If):
        return ("if_true", redex.then) if redex.cond.value else ("if_false", redex.else_)
    if isinstance(redex, Let):
        return "let", substitute(redex.body, redex.name, redex.bound)
    if isinstance(redex, Op):
        return ("tick" if redex.op is PrimOp.TICK else "op"), delta(redex.op, redex.arg)
    if isinstance(redex, App):
        fn = redex.fn
        body = substitute(fn.body, fn.name, fn)
        if fn.param is not None:
            body = substitute(body, fn.param, redex.arg)
        return "app", body
    raise ValueError(f"not a functional redex: {redex!r}")


_EFFECT_KINDS = {Spawn: "spawn", NewChan: "newchan", Atomic: "atomic", Commit: "commit"}


def classify(e: Expr) -> ValueResult | Blocked | Effect | tuple[str, Expr]:
    """Decompose ``e`` and say what kind of step its redex takes."""
    d = decompose(e)
    if isinstance(d, ValueResult):
        return d
    redex = d.redex
    if isinstance(redex, (Send, Recv)):
        return Blocked(d.context, redex)
    kind = _EFFECT_KINDS.get(type(redex))
    if kind is not None:
        return Effect(kind, d.context, redex)
    if isinstance(redex, Op) and redex.op is PrimOp.FLIP:
        return Effect("flip", d.context, redex)
    rule, contractum = reduce_pure(redex)
    return rule, plug(d.context, contractum)


def step_seq(e: Expr) -> Expr | Blocked | Effect | ValueResult:
    """One deterministic functional step of a closed expression.

    Returns the next expression, ``Blocked`` at a communication redex,
    ``Effect`` at a process-level redex, or ``ValueResult`` for a value.
    """
    c = classify(e)
    if isinstance(c, tuple):
        return c[1]
    return c


# ---------------------------------------------------------------------------
# Canonical states
# ---------------------------------------------------------------------------


class Node:
    """One parallel level: a multiset of threads, co-tokens and transactions."""

    __slots__ = ("threads", "cos", "txns", "key")

    def __init__(self, threads: tuple[Expr, ...], cos: tuple[int, ...], txns: tuple[TxnNode, ...]):
        self.threads = threads
        self.cos = cos
        self.txns = txns
        self.key = ""

    def __repr__(self) -> str:
        return f"Node({self.key or render_node(self)})"


class TxnNode:
    __slots__ = ("name", "default", "alternative", "key")

    def __init__(self, name: int, default: Node, alternative: Node):
        self.name = name
        self.default = default
        self.alternative = alternative
        self.key = ""


EMPTY = Node((), (), ())


class CanonicalState:
    """A closed process up to structural congruence and alpha-conversion."""

    __slots__ = ("root", "key", "n_chans", "n_txns")

    def __init__(self, root: Node, key: str, n_chans: int, n_txns: int):
        self.root = root
        self.key = key
        self.n_chans = n_chans
        self.n_txns = n_txns

    @property
    def restricted(self) -> tuple[int, ...]:
        return tuple(range(-1, -self.n_chans - 1, -1))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CanonicalState) and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"CanonicalState({self.key})"

    def has_transactions(self) -> bool:
        return bool(self.root.txns)


_NAME_RE = re.compile(r"@(-\d+)|%(\d+)")


def _abstract(key: str) -> str:
    return _NAME_RE.sub(lambda m: "@-" if m.group(1) else "%", key)


def _abstract_key(e: Expr) -> str:
    try:
        return e.__dict__["_akey"]
    except KeyError:
        k = _abstract(term_key(e))
        object.__setattr__(e, "_akey", k)
        return k


def _names_in(e: Expr) -> tuple[tuple[bool, int], ...]:
    # (is_channel, id) in order of first appearance in the key
    try:
        return e.__dict__["_names"]
    except KeyError:
        out = tuple(
            (True, int(m.group(1))) if m.group(1) else (False, int(m.group(2)))
            for m in _NAME_RE.finditer(term_key(e))
        )
        object.__setattr__(e, "_names", out)
        return out


def _node_key(node: Node, ekey, memo: dict[int, str]) -> str:
    k = memo.get(id(node))
    if k is None:
        threads = sorted(ekey(t) for t in node.threads)
        txns = sorted(_txn_key(t, ekey, memo) for t in node.txns)
        cos = sorted(ekey(Commit(c)) for c in node.cos)
        k = "[" + " ".join(threads) + "|" + " ".join(cos) + "|" + " ".join(txns) + "]"
        memo[id(node)] = k
    return k


def _txn_key(t: TxnNode, ekey, memo: dict[int, str]) -> str:
    k = memo.get(id(t))
    if k is None:
        k = "<" + ekey(Commit(t.name)) + _node_key(t.default, ekey, memo) + _node_key(
            t.alternative, ekey, memo
        ) + ">"
        memo[id(t)] = k
    return k


def _collect_names(node: Node, ekey, memo, chans: dict[int, int], txns: dict[int, int]) -> None:
    def note_names(e: Expr) -> None:
        for is_chan, n in _names_in(e):
            if is_chan:
                if n not in chans:
                    chans[n] = -(len(chans) + 1)
            elif n not in txns:
                txns[n] = len(txns)

    for t in sorted(node.txns, key=lambda t: _txn_key(t, ekey, memo)):
        if t.name not in txns:
            txns[t.name] = len(txns)
        _collect_names(t.default, ekey, memo, chans, txns)
        _collect_names(t.alternative, ekey, memo, chans, txns)
    for th in sorted(node.threads, key=ekey):
        note_names(th)
    for c in node.cos:
        if c not in txns:
            txns[c] = len(txns)


def _rename_node(node: Node, chans: dict[int, int], txns: dict[int, int]) -> Node:
    threads = tuple(sorted((rename_ids(t, chans, txns) for t in node.threads), key=term_key))
    cos = tuple(sorted(txns[c] for c in node.cos))
    txs = [
        TxnNode(
            txns[t.name],
            _rename_node(t.default, chans, txns),
            _rename_node(t.alternative, chans, txns),
        )
        for t in node.txns
    ]
    new = Node(threads, cos, ())
    memo: dict[int, str] = {}
    txs.sort(key=lambda t: _txn_key(t, term_key, memo))
    new.txns = tuple(txs)
    return new


def _set_keys(node: Node, memo: dict[int, str]) -> str:
    for t in node.txns:
        _set_keys(t.default, memo)
        _set_keys(t.alternative, memo)
        t.key = _txn_key(t, term_key, memo)
    node.key = _node_key(node, term_key, memo)
    return node.key


def normalize(root: Node) -> CanonicalState:
    """Canonical renaming and ordering of a raw state tree."""
    ekey = _abstract_key
    prev = None
    for _ in range(4):
        memo: dict[int, str] = {}
        chans: dict[int, int] = {}
        txns: dict[int, int] = {}
        _collect_names(root, ekey, memo, chans, txns)
        root = _rename_node(root, chans, txns)
        key = _set_keys(root, {})
        if key == prev:
            break
        prev = key
        ekey = term_key
    return CanonicalState(root, key, len(chans), len(txns))


def canonicalize(p: ProcessTerm | Expr) -> CanonicalState:
    """Canonical state of a closed process (or of a single-thread program)."""
    if isinstance(p, Expr):
        p = ExprP(p)
    counter = _Fresh()
    root = _flatten(p, {}, {}, counter)
    return normalize(root)


class _Fresh:
    def __init__(self) -> None:
        self.chan = -1_000_000
        self.txn = 1_000_000

    def next_chan(self) -> int:
        self.chan -= 1
        return self.chan

    def next_txn(self) -> int:
        self.txn += 1
        return self.txn


def _flatten(p: ProcessTerm, chans: dict[int, int], txns: dict, fresh: _Fresh) -> Node:
    threads: list[Expr] = []
    cos: list[int] = []
    txs: list[TxnNode] = []

    def go(q: ProcessTerm, chans: dict[int, int], txns: dict) -> None:
        if isinstance(q, ExprP):
            threads.append(_rename_with(q.expr, chans, txns))
        elif isinstance(q, Par):
            go(q.left, chans, txns)
            go(q.right, chans, txns)
        elif isinstance(q, Nu):
            go(q.body, {**chans, q.chan: fresh.next_chan()}, txns)
        elif isinstance(q, Co):
            if q.txn not in txns:
                txns[q.txn] = fresh.next_txn()
            cos.append(txns[q.txn])
        elif isinstance(q, Trans):
            k = fresh.next_txn()
            default = _flatten(q.default, chans, {**txns, q.txn: k}, fresh)
            alternative = _flatten(q.alternative, chans, txns, fresh)
            txs.append(TxnNode(k, default, alternative))
        else:
            raise TypeError(f"not a process: {q!r}")

    go(p, chans, txns)
    return Node(tuple(threads), tuple(cos), tuple(txs))


def _rename_with(e: Expr, chans: dict[int, int], txns: dict) -> Expr:
    for name, new in txns.items():
        if isinstance(name, str):
            e = substitute_txn(e, name, new)
    int_txns = {k: v for k, v in txns.items() if isinstance(k, int)}
    return rename_ids(e, chans, int_txns)


def render_node(node: Node) -> str:
    return _node_key(node, term_key, {})


# ---------------------------------------------------------------------------
# One-step successors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepLabel:
    """Which reduction fired and where.

    ``kind`` is one of: if_true, if_false, let, op, app, tick, flip, spawn,
    newchan, atomic, commit, sync, embed, co_commit, abort.  ``path`` lists
    the transactions enclosing the parallel level where it fired.
    """

    kind: str
    path: tuple[int, ...] = ()
    txn: int | None = None
    detail: str = field(default="", compare=False)


SEQ_KINDS = frozenset({"if_true", "if_false", "let", "op", "app", "tick", "flip"})


def _without(items: tuple, i: int) -> tuple:
    return items[:i] + items[i + 1 :]


def _replace(items: tuple, i: int, new) -> tuple:
    return items[:i] + (new,) + items[i + 1 :]


def _splice(node: Node, inner: Node, drop_co: int | None = None) -> Node:
    cos = inner.cos if drop_co is None else tuple(c for c in inner.cos if c != drop_co)
    return Node(node.threads + inner.threads, node.cos + cos, node.txns + inner.txns)


def _node_steps(node: Node, fresh_txn: int, fresh_chan: int, path: tuple[int, ...]):
    threads = node.threads
    blocked: list[tuple[int, Blocked]] = []
    for i, th in enumerate(threads):
        c = classify(th)
        if isinstance(c, ValueResult):
            continue
        if isinstance(c, tuple):
            rule, nxt = c
            yield StepLabel(rule, path, detail=term_key(th)), Node(
                _replace(threads, i, nxt), node.cos, node.txns
            )
            continue
        if isinstance(c, Blocked):
            blocked.append((i, c))
            continue
        ctx, redex = c.context, c.redex
        if c.kind == "flip":
            for b in (TRUE, FALSE):
                yield StepLabel("flip", path, detail=f"{b.value}"), Node(
                    _replace(threads, i, plug(ctx, b)), node.cos, node.txns
                )
        elif c.kind == "spawn":
            new_threads = _replace(threads, i, plug(ctx, UNIT)) + (App(redex.thunk, UNIT),)
            yield StepLabel("spawn", path), Node(new_threads, node.cos, node.txns)
        elif c.kind == "newchan":
            yield StepLabel("newchan", path), Node(
                _replace(threads, i, plug(ctx, ChanV(fresh_chan))), node.cos, node.txns
            )
        elif c.kind == "atomic":
            k = fresh_txn
            default = Node((plug(ctx, substitute_txn(redex.default, redex.txn, k)),), (), ())
            alternative = Node((plug(ctx, redex.alternative),), (), ())
            yield StepLabel("atomic", path, k), Node(
                _without(threads, i), node.cos, node.txns + (TxnNode(k, default, alternative),)
            )
        elif c.kind == "commit":
            yield StepLabel("commit", path, redex.txn), Node(
                _replace(threads, i, plug(ctx, UNIT)), node.cos + (redex.txn,), node.txns
            )
    # synchronisation between a receiver and a sender on the same channel
    for i, bi in blocked:
        if not isinstance(bi.redex, Recv):
            continue
        chan = bi.redex.chan.id
        for j, bj in blocked:
            if isinstance(bj.redex, Send) and bj.redex.chan.id == chan:
                new_threads = list(threads)
                new_threads[i] = plug(bi.context, bj.redex.value)
                new_threads[j] = plug(bj.context, UNIT)
                yield StepLabel("sync", path, detail=f"{chan}:{j}->{i}"), Node(
                    tuple(new_threads), node.cos, node.txns
                )
    for ti, t in enumerate(node.txns):
        # embedding a sibling process into t
        for i, th in enumerate(threads):
            moved = TxnNode(
                t.name,
                Node(t.default.threads + (th,), t.default.cos, t.default.txns),
                Node(t.alternative.threads + (th,), t.alternative.cos, t.alternative.txns),
            )
            yield StepLabel("embed", path, t.name, detail=f"thread:{i}"), Node(
                _without(threads, i), node.cos, _replace(node.txns, ti, moved)
            )
        for ci, co in enumerate(node.cos):
            moved = TxnNode(
                t.name,
                Node(t.default.threads, t.default.cos + (co,), t.default.txns),
                Node(t.alternative.threads, t.alternative.cos + (co,), t.alternative.txns),
            )
            yield StepLabel("embed", path, t.name, detail=f"co:{co}"), Node(
                threads, _without(node.cos, ci), _replace(node.txns, ti, moved)
            )
        for oi, other in enumerate(node.txns):
            if oi == ti:
                continue
            moved = TxnNode(
                t.name,
                Node(t.default.threads, t.default.cos, t.default.txns + (other,)),
                Node(t.alternative.threads, t.alternative.cos, t.alternative.txns + (other,)),
            )
            rest = tuple(x for j, x in enumerate(node.txns) if j != oi and j != ti)
            yield StepLabel("embed", path, t.name, detail=f"txn:{other.name}"), Node(
                threads, node.cos, rest + (moved,)
            )
        others = _without(node.txns, ti)
        if t.name in t.default.cos:
            base = Node(threads, node.cos, others)
            yield StepLabel("co_commit", path, t.name), _splice(base, t.default, drop_co=t.name)
        yield StepLabel("abort", path, t.name), _splice(Node(threads, node.cos, others), t.alternative)
        for label, new_default in _node_steps(t.default, fresh_txn, fresh_chan, path + (t.name,)):
            yield label, Node(
                threads, node.cos, _replace(node.txns, ti, TxnNode(t.name, new_default, t.alternative))
            )


def enumerate_steps(state: CanonicalState) -> list[tuple[StepLabel, CanonicalState]]:
    """Every one-step successor of ``state``, each with the rule that produced it."""
    fresh_txn = state.n_txns
    fresh_chan = -(state.n_chans + 1)
    return [
        (label, normalize(root))
        for label, root in _node_steps(state.root, fresh_txn, fresh_chan, ())
    ]


# ---------------------------------------------------------------------------
# Outcomes
# ---------------------------------------------------------------------------


class Outcome:
    """Observable result of a transaction-free, quiescent state.

    Terminated thread values plus pending sends and receives on free
    channels, compared as multisets after canonical renaming of restricted
    channels and bound names.
    """

    __slots__ = ("values", "sends", "recvs", "key")

    def __init__(
        self,
        values: Iterable[Expr],
        sends: Iterable[tuple[int, Expr]] = (),
        recvs: Iterable[int] = (),
    ):
        values = [alpha_normalize(v) for v in values]
        sends = [(c, alpha_normalize(v)) for c, v in sends]
        # rename restricted channels (anything negative or unknown) by first occurrence
        chans: dict[int, int] = {}
        for _ in range(2):
            ordered = sorted(values, key=lambda v: _abstract(term_key(v)) + term_key(v))
            ordered_sends = sorted(sends, key=lambda s: (s[0], _abstract(term_key(s[1]))))
            chans = {}
            for v in [*ordered, *(v for _, v in ordered_sends)]:
                for m in _NAME_RE.finditer(term_key(v)):
                    if m.group(1):
                        c = int(m.group(1))
                        chans.setdefault(c, -(len(chans) + 1))
            values = [rename_ids(v, chans, {}) for v in ordered]
            sends = [(c, rename_ids(v, chans, {})) for c, v in ordered_sends]
        self.values = tuple(sorted(values, key=term_key))
        self.sends = tuple(sorted(sends, key=lambda s: (s[0], term_key(s[1]))))
        self.recvs = tuple(sorted(recvs))
        self.key = (
            "values:" + " ".join(term_key(v) for v in self.values)
            + "|sends:" + " ".join(f"{c}<{term_key(v)}" for c, v in self.sends)
            + "|recvs:" + " ".join(str(c) for c in self.recvs)
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Outcome) and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"Outcome({self.key})"

    def to_json(self) -> dict:
        from .parser import pretty_print

        return {
            "values": [pretty_print(v) for v in self.values],
            "sends": [{"channel": c, "value": pretty_print(v)} for c, v in self.sends],
            "recvs": list(self.recvs),
        }


def outcome_of_threads(threads: Iterable[Expr], free: frozenset[int] | None = None) -> Outcome:
    """Outcome of a transaction-free collection of stuck or finished threads.

    A channel is free when it is in ``free``; without ``free``, positive ids
    are taken as free (the canonical-state convention).
    """
    values, sends, recvs = [], [], []

    def is_free(c: int) -> bool:
        return c in free if free is not None else c > 0

    for th in threads:
        if is_value(th):
            values.append(th)
            continue
        d = decompose(th)
        redex = d.redex
        if isinstance(redex, Send) and is_free(redex.chan.id):
            sends.append((redex.chan.id, redex.value))
        elif isinstance(redex, Recv) and is_free(redex.chan.id):
            recvs.append(redex.chan.id)
    if free is not None:
        # restricted channels from another allocator must not look free
        chans = {}
        for v in [*values, *(v for _, v in sends)]:
            for c in expr_channels(v):
                if c not in free and c > 0:
                    chans.setdefault(c, -(10**9) - len(chans))
        values = [rename_ids(v, chans, {}) for v in values]
        sends = [(c, rename_ids(v, chans, {})) for c, v in sends]
    return Outcome(values, sends, recvs)


def outcome_of(state: CanonicalState) -> Outcome:
    if state.root.txns:
        raise ValueError("outcomes are only defined for transaction-free states")
    return outcome_of_threads(state.root.threads)


@dataclass
class SearchResult:
    outcomes: set[Outcome]
    truncated: bool
    states: int
    depth: int

    def __iter__(self) -> Iterator[Outcome]:
        return iter(self.outcomes)

    def to_json(self) -> dict:
        ordered = sorted(self.outcomes, key=lambda o: o.key)
        return {
            "outcomes": [o.to_json() for o in ordered],
            "truncated": self.truncated,
            "states": self.states,
        }


def explore(
    start: ProcessTerm | Expr | CanonicalState,
    fuel: int,
    abort_free: bool = False,
    max_states: int | None = None,
    visit=None,
) -> SearchResult:
    """Breadth-first search over the reduction graph, memoised on canonical keys.

    States are expanded only while their depth is below ``fuel``; ``visit``
    is called with every newly discovered state and its depth.
    """
    state = start if isinstance(start, CanonicalState) else canonicalize(start)
    seen = {state.key}
    frontier = [state]
    if visit is not None:
        visit(state, 0)
    results: set[Outcome] = set()
    truncated = False
    depth = 0
    while frontier:
        nxt: list[CanonicalState] = []
        for s in frontier:
            succ = enumerate_steps(s)
            if abort_free:
                succ = [(lab, t) for lab, t in succ if lab.kind != "abort"]
            if not succ:
                if not s.root.txns:
                    results.add(outcome_of(s))
                continue
            if depth >= fuel:
                truncated = True
                continue
            for _, t in succ:
                if t.key not in seen:
                    if max_states is not None and len(seen) >= max_states:
                        truncated = True
                        continue
                    seen.add(t.key)
                    nxt.append(t)
                    if visit is not None:
                        visit(t, depth + 1)
        frontier = nxt
        if frontier:
            depth += 1
    return SearchResult(results, truncated, len(seen), depth)


def outcomes(p: ProcessTerm | Expr, fuel: int, max_states: int | None = None) -> SearchResult:
    """Every outcome reachable within ``fuel`` steps."""
    return explore(p, fuel, abort_free=False, max_states=max_states)


def abortfree_outcomes(p: ProcessTerm | Expr, fuel: int, max_states: int | None = None) -> SearchResult:
    """Outcomes reachable without ever aborting a transaction."""
    return explore(p, fuel, abort_free=True, max_states=max_states)


def reachable(p: ProcessTerm | Expr, fuel: int, max_states: int | None = None) -> dict[str, CanonicalState]:
    """All canonical states reachable within ``fuel`` steps, keyed by canonical key."""
    found: dict[str, CanonicalState] = {}
    explore(p, fuel, max_states=max_states, visit=lambda s, d: found.setdefault(s.key, s))
    return found
