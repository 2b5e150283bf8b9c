"""Transactional scheduling policies.

A policy looks at an immutable ``PolicySnapshot`` of the transaction trie and
returns at most one ``Directive``.  Four policies are provided:

``random``   uniform over every enabled directive
``staged``   syncs first, then per transaction commit > embed > run/abort
``cd``       staged, but only embeds that pair a blocked thread with a partner
``da``       cd, and a transaction may only abort after an inactivity timeout
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

SEND = "send"
RECV = "recv"


# ---------------------------------------------------------------------------
# Directives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Directive:
    id: int = field(default=0, kw_only=True, compare=False)
    version: int = field(default=0, kw_only=True, compare=False)


@dataclass(frozen=True)
class SyncPair(Directive):
    sender: int
    receiver: int
    channel: int


@dataclass(frozen=True)
class CommitTxn(Directive):
    txn: int


@dataclass(frozen=True)
class AbortTxn(Directive):
    txn: int


@dataclass(frozen=True)
class Justification:
    """A blocked thread inside the embedded item and its partner inside the target."""

    thread: int
    channel: int
    direction: str
    partner: int


@dataclass(frozen=True)
class Embed(Directive):
    """Move a thread or a whole transaction node into the sibling transaction ``txn``."""

    txn: int
    thread: int | None = None
    node: int | None = None
    justification: Justification | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if (self.thread is None) == (self.node is None):
            raise ValueError("embed needs exactly one of thread or node")


# ---------------------------------------------------------------------------
# Snapshot
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockedView:
    thread: int
    channel: int
    direction: str


@dataclass(frozen=True)
class NodeView:
    txn: int | None
    parent: int | None
    name: str | None
    threads: tuple[int, ...]
    blocked: tuple[BlockedView, ...]
    co_tokens: tuple[int, ...]
    children: tuple[int, ...]
    last_activity_ms: float


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only view of the trie.  ``nodes`` is keyed by txn id; the root is ``None``."""

    version: int
    now_ms: float
    nodes: Mapping[int | None, NodeView]

    @cached_property
    def txns(self) -> tuple[int, ...]:
        return tuple(k for k in self.nodes if k is not None)

    @cached_property
    def sync_pairs(self) -> tuple[SyncPair, ...]:
        out = []
        for node in self.nodes.values():
            senders = [b for b in node.blocked if b.direction == SEND]
            if not senders:
                continue
            for r in node.blocked:
                if r.direction != RECV:
                    continue
                for s in senders:
                    if s.channel == r.channel:
                        out.append(SyncPair(s.thread, r.thread, r.channel))
        return tuple(out)

    @cached_property
    def running(self) -> tuple[int, ...]:
        """Threads that are neither blocked nor finished."""
        out = []
        for node in self.nodes.values():
            parked = {b.thread for b in node.blocked}
            out.extend(t for t in node.threads if t not in parked)
        return tuple(sorted(out))

    @cached_property
    def commit_ready(self) -> frozenset[int]:
        return frozenset(k for k in self.txns if k in self.nodes[k].co_tokens)

    @cached_property
    def subtree_blocked(self) -> dict[int | None, tuple[BlockedView, ...]]:
        memo: dict[int | None, tuple[BlockedView, ...]] = {}

        def go(k: int | None) -> tuple[BlockedView, ...]:
            if k not in memo:
                node = self.nodes[k]
                acc = list(node.blocked)
                for c in node.children:
                    acc.extend(go(c))
                memo[k] = tuple(acc)
            return memo[k]

        for k in self.nodes:
            go(k)
        return memo

    def embeds_into(self, k: int) -> list[Embed]:
        """Every embed of a sibling thread or sibling transaction into ``k``."""
        parent = self.nodes[self.nodes[k].parent]
        out = [Embed(k, thread=t) for t in parent.threads]
        out.extend(Embed(k, node=j) for j in parent.children if j != k)
        return out

    def cd_embeds_into(self, k: int) -> list[Embed]:
        """Embeds into ``k`` that bring a blocked thread next to a complementary partner."""
        parent = self.nodes[self.nodes[k].parent]
        inside = self.subtree_blocked[k]
        if not inside:
            return []
        out = []
        blocked_here = {b.thread: b for b in parent.blocked}
        for t in parent.threads:
            b = blocked_here.get(t)
            if b is not None:
                j = _partner(b, inside)
                if j is not None:
                    out.append(Embed(k, thread=t, justification=j))
        for other in parent.children:
            if other == k:
                continue
            for b in self.subtree_blocked[other]:
                j = _partner(b, inside)
                if j is not None:
                    out.append(Embed(k, node=other, justification=j))
                    break
        return out

    @cached_property
    def all_candidates(self) -> tuple[Directive, ...]:
        out: list[Directive] = list(self.sync_pairs)
        out.extend(CommitTxn(k) for k in self.txns if k in self.commit_ready)
        for k in self.txns:
            out.extend(self.embeds_into(k))
        out.extend(AbortTxn(k) for k in self.txns)
        return tuple(out)


def _partner(b: BlockedView, inside: tuple[BlockedView, ...]) -> Justification | None:
    for p in inside:
        if p.channel == b.channel and p.direction != b.direction:
            return Justification(b.thread, b.channel, b.direction, p.thread)
    return None


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyConfig:
    run_probability: float = 0.95
    abort_probability: float = 0.05
    da_timeout_ms: float = 50.0
    seed: int = 0

    def __post_init__(self) -> None:
        if abs(self.run_probability + self.abort_probability - 1.0) > 1e-9:
            raise ValueError("run and abort probabilities must sum to 1")
        if not 0.0 <= self.abort_probability <= 1.0:
            raise ValueError("abort probability must lie in [0, 1]")
        if self.da_timeout_ms < 0:
            raise ValueError("DA timeout must be non-negative")


@dataclass
class DecisionStats:
    """Run-versus-abort coin outcomes of the staged family."""

    runs: int = 0
    aborts: int = 0

    @property
    def abort_fraction(self) -> float:
        n = self.runs + self.aborts
        return self.aborts / n if n else 0.0


def policy_random(snap: PolicySnapshot, rng: random.Random) -> Directive | None:
    # a running thread's next step is one more equally likely choice
    cands = snap.all_candidates
    if not cands:
        return None
    i = rng.randrange(len(cands) + len(snap.running))
    return cands[i] if i < len(cands) else None


def _staged(
    snap: PolicySnapshot,
    cfg: PolicyConfig,
    rng: random.Random,
    embeds: Callable[[PolicySnapshot, int], list[Embed]],
    may_abort: Callable[[int], bool],
    stats: DecisionStats | None,
) -> Directive | None:
    syncs = snap.sync_pairs
    if syncs:
        return rng.choice(syncs)
    decisions: list[Directive] = []
    for k in snap.txns:
        if k in snap.commit_ready:
            decisions.append(CommitTxn(k))
            continue
        options = embeds(snap, k)
        if options:
            decisions.append(rng.choice(options))
            continue
        if not may_abort(k):
            continue
        if rng.random() < cfg.abort_probability:
            decisions.append(AbortTxn(k))
            if stats is not None:
                stats.aborts += 1
        elif stats is not None:
            stats.runs += 1
    return rng.choice(decisions) if decisions else None


def policy_staged(
    snap: PolicySnapshot, cfg: PolicyConfig, rng: random.Random, stats: DecisionStats | None = None
) -> Directive | None:
    return _staged(snap, cfg, rng, PolicySnapshot.embeds_into, lambda k: True, stats)


def policy_cd(
    snap: PolicySnapshot, cfg: PolicyConfig, rng: random.Random, stats: DecisionStats | None = None
) -> Directive | None:
    return _staged(snap, cfg, rng, PolicySnapshot.cd_embeds_into, lambda k: True, stats)


def da_expired(snap: PolicySnapshot, cfg: PolicyConfig, k: int) -> bool:
    return snap.now_ms - snap.nodes[k].last_activity_ms >= cfg.da_timeout_ms


def policy_da(
    snap: PolicySnapshot, cfg: PolicyConfig, rng: random.Random, stats: DecisionStats | None = None
) -> Directive | None:
    return _staged(
        snap, cfg, rng, PolicySnapshot.cd_embeds_into, lambda k: da_expired(snap, cfg, k), stats
    )


class Policy:
    """A named policy bound to its config, RNG and decision counters."""

    NAMES = ("r", "s", "cd", "da")

    def __init__(self, name: str, config: PolicyConfig | None = None, rng: random.Random | None = None):
        name = name.lower()
        if name not in self.NAMES:
            raise ValueError(f"unknown scheduler {name!r}; expected one of {', '.join(self.NAMES)}")
        self.name = name
        self.config = config or PolicyConfig()
        self.rng = rng or random.Random(self.config.seed)
        self.stats = DecisionStats()

    @property
    def communication_driven(self) -> bool:
        return self.name in ("cd", "da")

    def decide(self, snap: PolicySnapshot) -> Directive | None:
        if self.name == "r":
            return policy_random(snap, self.rng)
        if self.name == "s":
            return policy_staged(snap, self.config, self.rng, self.stats)
        if self.name == "cd":
            return policy_cd(snap, self.config, self.rng, self.stats)
        return policy_da(snap, self.config, self.rng, self.stats)

    def abort_allowed(self, snap_now_ms: float, last_activity_ms: float) -> bool:
        if self.name != "da":
            return True
        return snap_now_ms - last_activity_ms >= self.config.da_timeout_ms
