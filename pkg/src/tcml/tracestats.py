"""Offline checks over runtime traces.

The checker replays a trace into its own copy of the transaction trie,
thread locations, blocked set and per-transaction activity timers, using
nothing but the events themselves.  Violations found:

``commit_order``
    a commit of k while k holds no co-token for k, or while a
    descendant still holds one.
``embed_unjustified``
    (CD/DA) an embed whose recorded blocked pair is missing, not
    complementary, or not located on the two sides of the embed.
``abort_early``
    (DA) an abort of k sooner than the timeout after the last activity
    under k.
``path_mismatch``
    an event whose path disagrees with the replayed trie.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable

from .runtime.trace import read_trace

NS_PER_MS = 1_000_000
_PATH_CHECKED = frozenset({"spawn", "txn_start", "co", "block", "sync", "finish", "embed", "tick", "commit", "abort"})


@dataclass
class _Node:
    parent: int | None
    co: list[int] = field(default_factory=list)
    last_ns: int = 0


@dataclass
class Violation:
    check: str
    seq: int
    detail: str

    def to_json(self) -> dict:
        return {"check": self.check, "seq": self.seq, "detail": self.detail}


@dataclass
class TraceStats:
    events: int
    kinds: dict[str, int]
    top_commits: dict[str, int]
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def ops(self, names: Iterable[str] = ("k",)) -> int:
        return sum(self.top_commits.get(n, 0) for n in names)

    def to_json(self) -> dict:
        return {
            "events": self.events,
            "kinds": self.kinds,
            "top_commits": self.top_commits,
            "violations": [v.to_json() for v in self.violations],
            "ok": self.ok,
        }


class _Replay:
    def __init__(self, scheduler: str, da_timeout_ms: float) -> None:
        self.nodes: dict[int, _Node] = {}
        self.loc: dict[int, int | None] = {}
        self.blocked: dict[int, tuple[int, str]] = {}
        self.check_embeds = scheduler in ("cd", "da")
        self.check_timer = scheduler == "da"
        self.timeout_ns = da_timeout_ms * NS_PER_MS
        self.violations: list[Violation] = []
        self.top_commits: Counter[str] = Counter()

    def flag(self, check: str, ev: dict, detail: str) -> None:
        self.violations.append(Violation(check, ev["seq"], detail))

    # trie helpers

    def path_of(self, k: int | None) -> list[int]:
        out = []
        while k is not None:
            out.append(k)
            k = self.nodes[k].parent
        return out[::-1]

    def subtree(self, k: int) -> list[int]:
        # nodes are few; a parent scan is fine
        out, frontier = [k], [k]
        while frontier:
            cur = frontier.pop()
            kids = [n for n, v in self.nodes.items() if v.parent == cur]
            out.extend(kids)
            frontier.extend(kids)
        return out

    def within(self, tid: int, k: int) -> bool:
        where = self.loc.get(tid, -1)
        return where != -1 and k in self.path_of(where)

    def touch(self, path: list[int], now: int) -> None:
        for k in path:
            if k in self.nodes:
                self.nodes[k].last_ns = now

    # event handlers

    def feed(self, ev: dict) -> None:
        kind, path, now = ev["kind"], ev["path"], ev["wallNanos"]
        here = path[-1] if path else None
        # txn_start names a node not yet created; kill names one just removed
        known = path[:-1] if kind == "txn_start" else path
        if kind in _PATH_CHECKED and known and all(k in self.nodes for k in known):
            if known != self.path_of(known[-1]):
                self.flag("path_mismatch", ev, f"recorded {path}, replayed {self.path_of(known[-1])}")
        elif kind in _PATH_CHECKED and known:
            self.flag("path_mismatch", ev, f"recorded {path} names an unknown transaction")
        handler = getattr(self, "on_" + kind, None)
        if handler is not None:
            handler(ev, here, now)

    def on_spawn(self, ev, here, now) -> None:
        self.loc[ev["thread"]] = here

    def on_txn_start(self, ev, here, now) -> None:
        k = ev["txn"]
        parent = ev["path"][-2] if len(ev["path"]) > 1 else None
        self.nodes[k] = _Node(parent, last_ns=now)
        self.loc[ev["thread"]] = k
        self.touch(ev["path"], now)

    def on_co(self, ev, here, now) -> None:
        if here is not None:
            self.nodes[here].co.append(ev["extra"]["for"])
        self.touch(ev["path"], now)

    def on_block(self, ev, here, now) -> None:
        self.blocked[ev["thread"]] = (ev["extra"]["channel"], ev["extra"]["dir"])

    def on_sync(self, ev, here, now) -> None:
        self.blocked.pop(ev["extra"]["sender"], None)
        self.blocked.pop(ev["extra"]["receiver"], None)
        self.touch(ev["path"], now)

    def on_finish(self, ev, here, now) -> None:
        self.blocked.pop(ev["thread"], None)

    def on_kill(self, ev, here, now) -> None:
        self.loc.pop(ev["thread"], None)
        self.blocked.pop(ev["thread"], None)

    def on_embed(self, ev, here, now) -> None:
        target = ev["txn"]
        extra = ev["extra"]
        if "thread" in extra:
            moved = [extra["thread"]]
        else:
            moved_node = extra["node"]
            moved = [t for t in self.loc if self.within(t, moved_node)]
        j = extra.get("justification")
        if self.check_embeds:
            self._justify(ev, target, moved, j)
        if "thread" in extra:
            self.loc[extra["thread"]] = target
        else:
            self.nodes[extra["node"]].parent = target
        self.touch(ev["path"], now)

    def _justify(self, ev, target: int, moved: list[int], j: dict | None) -> None:
        if j is None:
            self.flag("embed_unjustified", ev, "no justification recorded")
            return
        t, p = j["thread"], j["partner"]
        bt, bp = self.blocked.get(t), self.blocked.get(p)
        if bt is None or bp is None:
            self.flag("embed_unjustified", ev, f"thread {t} or partner {p} not blocked")
        elif bt[0] != bp[0] or bt[1] == bp[1]:
            self.flag("embed_unjustified", ev, f"{t}:{bt} and {p}:{bp} are not complementary")
        elif t not in moved:
            self.flag("embed_unjustified", ev, f"thread {t} is not part of the embedded item")
        elif not self.within(p, target):
            self.flag("embed_unjustified", ev, f"partner {p} is not inside {target}")

    def on_commit(self, ev, here, now) -> None:
        k = ev["txn"]
        node = self.nodes.get(k)
        if node is None:
            self.flag("commit_order", ev, f"commit of unknown transaction {k}")
            return
        if k not in node.co:
            self.flag("commit_order", ev, f"no co-token for {k} at its own level")
        for d in self.subtree(k)[1:]:
            if k in self.nodes[d].co:
                self.flag("commit_order", ev, f"descendant {d} still holds a co-token for {k}")
        parent = node.parent
        for t, where in list(self.loc.items()):
            if where == k:
                self.loc[t] = parent
        for n in self.nodes.values():
            if n.parent == k:
                n.parent = parent
        if parent is not None:
            self.nodes[parent].co.extend(x for x in node.co if x != k)
        del self.nodes[k]
        if ev["extra"].get("top"):
            self.top_commits[ev["extra"].get("name")] += 1
        self.touch(ev["path"][:-1], now)

    def on_abort(self, ev, here, now) -> None:
        k = ev["txn"]
        node = self.nodes.get(k)
        if node is None:
            self.flag("abort_early", ev, f"abort of unknown transaction {k}")
            return
        if self.check_timer and now - node.last_ns < self.timeout_ns:
            idle = (now - node.last_ns) / NS_PER_MS
            self.flag("abort_early", ev, f"{k} aborted after {idle:.3f}ms idle")
        parent = node.parent
        gone = set(self.subtree(k))
        for t, where in list(self.loc.items()):
            if where in gone:
                del self.loc[t]
                self.blocked.pop(t, None)
        for d in gone:
            del self.nodes[d]
        extra = ev["extra"]
        placed = set()
        for desc in extra.get("restored", []):
            placed |= self._restore(desc, parent, now)
        for t in extra.get("rolled_back", []):
            self.blocked.pop(t, None)
            if t not in placed:
                self.loc[t] = parent
        self.touch(ev["path"][:-1], now)

    def _restore(self, desc: dict, parent: int | None, now: int) -> set[int]:
        k = desc["txn"]
        self.nodes[k] = _Node(parent, list(desc["co"]), now)
        placed = set(desc["threads"])
        for t in desc["threads"]:
            self.loc[t] = k
        for child in desc["children"]:
            placed |= self._restore(child, k, now)
        return placed


def analyze(events: Iterable[dict], scheduler: str = "r", da_timeout_ms: float = 50.0) -> TraceStats:
    """Replay ``events`` and collect counts and invariant violations."""
    r = _Replay(scheduler, da_timeout_ms)
    kinds: Counter[str] = Counter()
    n = 0
    for ev in events:
        n += 1
        kinds[ev["kind"]] += 1
        r.feed(ev)
    return TraceStats(n, dict(kinds), dict(r.top_commits), r.violations)


def analyze_file(stream: IO[str], scheduler: str = "r", da_timeout_ms: float = 50.0) -> TraceStats:
    return analyze(read_trace(stream), scheduler, da_timeout_ms)
