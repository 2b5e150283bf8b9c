"""The gatherer: sole owner and mutator of the transaction trie."""

from __future__ import annotations

from collections import Counter
from typing import Protocol

from ..parser import pretty_print
from ..refsem import Outcome, outcome_of_threads
from ..schedulers import (
    RECV,
    SEND,
    AbortTxn,
    BlockedView,
    CommitTxn,
    Directive,
    Embed,
    NodeView,
    Policy,
    PolicySnapshot,
    SyncPair,
)
from ..syntax import UNIT, App, ChanV, Expr, Recv, Send, TCMLError
from .messages import (
    AbortSig,
    Ack,
    BlockedOn,
    CoSpawned,
    Crashed,
    Deliver,
    DropSig,
    EmbedSig,
    Finished,
    NoDirective,
    Reply,
    Spawned,
    Ticked,
    TxnStarted,
)
from .trace import Trace
from .trie import TNode

LIVE = "running"
BLOCKED = "blocked"
FINISHED = "finished"
GONE = "gone"


class ProtocolError(TCMLError):
    """Raised when a message contradicts the gatherer's view; always a runtime bug."""


class Host(Protocol):
    def now_ms(self) -> float: ...
    def now_ns(self) -> int: ...
    def signal(self, tid: int, sig: object) -> None: ...
    def new_worker(self, tid: int, expr: Expr, stack: list) -> None: ...
    def post_snapshot(self, snap: PolicySnapshot) -> None: ...


class ThreadInfo:
    __slots__ = ("tid", "node", "state", "epoch")

    def __init__(self, tid: int, node: TNode | None) -> None:
        self.tid = tid
        self.node = node
        self.state = LIVE
        self.epoch = 0


class Gatherer:
    def __init__(
        self,
        host: Host,
        policy: Policy,
        trace: Trace,
        free_channels: frozenset[int] = frozenset(),
        op_names: frozenset[str] = frozenset(),
        count_ticks: bool = False,
    ) -> None:
        self.host = host
        self.policy = policy
        self.trace = trace
        self.free_channels = free_channels
        self.op_names = op_names
        self.count_ticks = count_ticks
        self.root = TNode(None)
        self.nodes: dict[int, TNode] = {}
        self.threads: dict[int, ThreadInfo] = {}
        self.results: list[Expr] = []
        self.version = 0
        self.pending_acks = 0
        self.in_flight = False
        self.dirty = True
        self.next_tid = 0
        self.next_txn = 0
        self.next_directive = 1
        self.metrics: Counter[str] = Counter()
        self.ops = 0
        self.error: BaseException | None = None

    # -- setup ----------------------------------------------------------------

    def start(self, expr: Expr) -> int:
        tid = self._new_thread(self.root)
        self.host.new_worker(tid, expr, [])
        self._emit("spawn", tid, self.root, {"parent": None})
        return tid

    def _new_thread(self, node: TNode) -> int:
        tid = self.next_tid
        self.next_tid += 1
        self.threads[tid] = ThreadInfo(tid, node)
        node.threads.add(tid)
        return tid

    # -- helpers --------------------------------------------------------------

    def _emit(self, kind: str, thread: int | None, node: TNode | None, extra: dict | None = None, txn=None) -> None:
        path = node.path() if node is not None else []
        if txn is None and node is not None:
            txn = node.txn
        self.trace.emit(self.host.now_ns(), kind, thread, txn, path, extra or {})

    def _touch(self, node: TNode) -> None:
        now = self.host.now_ms()
        for n in node.ancestors():
            n.last_activity_ms = now

    def _mutated(self) -> None:
        self.version += 1
        self.dirty = True

    def live_txns(self) -> int:
        return len(self.nodes)

    # -- notifications --------------------------------------------------------

    def handle(self, msg: object) -> None:
        if isinstance(msg, Ack):
            self.pending_acks -= 1
            if self.pending_acks < 0:
                raise ProtocolError("more acks than signals")
        elif isinstance(msg, Directive):
            self.in_flight = False
            self.apply_directive(msg)
        elif isinstance(msg, NoDirective):
            self.in_flight = False
        elif isinstance(msg, Crashed):
            self.error = msg.error
        else:
            info = self.threads.get(msg.thread)
            if info is None:
                raise ProtocolError(f"unknown thread {msg.thread}")
            if msg.epoch != info.epoch or info.state == GONE:
                self.metrics["stale_drop"] += 1
                self._emit("stale_drop", msg.thread, info.node, {"message": type(msg).__name__})
            else:
                self._request(info, msg)
        self.maybe_schedule()

    def _request(self, info: ThreadInfo, msg: object) -> None:
        node = info.node
        tid = info.tid
        if isinstance(msg, Spawned):
            child = self._new_thread(node)
            stack = [(t, None) for t in reversed(node.path())]
            self.host.new_worker(child, App(msg.thunk, UNIT), stack)
            self.host.signal(tid, Reply(msg.epoch))
            self._emit("spawn", child, node, {"parent": tid})
            self._mutated()
        elif isinstance(msg, TxnStarted):
            k = self.next_txn
            self.next_txn += 1
            name = msg.name if isinstance(msg.name, str) else f"txn#{msg.name}"
            new = TNode(k, name, node)
            node.children[k] = new
            self.nodes[k] = new
            node.threads.remove(tid)
            new.threads.add(tid)
            # the initiating thread's continuation is part of the alternative
            new.frag_threads.append(tid)
            info.node = new
            self._touch(new)
            self.host.signal(tid, Reply(msg.epoch, k))
            self._emit("txn_start", tid, new, {"name": name})
            self._mutated()
        elif isinstance(msg, CoSpawned):
            node.co_tokens.append(msg.txn)
            self._touch(node)
            self.host.signal(tid, Reply(msg.epoch))
            self._emit("co", tid, node, {"for": msg.txn}, txn=msg.txn)
            self._mutated()
        elif isinstance(msg, BlockedOn):
            node.blocked[tid] = (msg.channel, msg.direction, msg.value)
            info.state = BLOCKED
            self._emit("block", tid, node, {"channel": msg.channel, "dir": msg.direction})
            self._mutated()
        elif isinstance(msg, Finished):
            info.state = FINISHED
            self._emit("finish", tid, node, {"value": pretty_print(msg.value)})
            if node is self.root:
                node.threads.remove(tid)
                info.node = None
                self.results.append(msg.value)
            else:
                node.finished[tid] = msg.value
            self._mutated()
        elif isinstance(msg, Ticked):
            if self.count_ticks:
                self.ops += 1
            self._emit("tick", tid, node)
        else:
            raise ProtocolError(f"unexpected message {msg!r}")

    # -- scheduling -----------------------------------------------------------

    def maybe_schedule(self, force: bool = False) -> None:
        if self.in_flight or self.pending_acks:
            return
        if not (self.dirty or force):
            return
        self.dirty = False
        if not self.nodes and not self._root_sync_possible():
            return
        self.in_flight = True
        self.host.post_snapshot(self.snapshot())

    def _root_sync_possible(self) -> bool:
        seen: set[tuple[int, str]] = set()
        for chan, direction, _ in self.root.blocked.values():
            if (chan, SEND if direction == RECV else RECV) in seen:
                return True
            seen.add((chan, direction))
        return False

    def tick(self) -> None:
        self.maybe_schedule(force=True)

    def snapshot(self) -> PolicySnapshot:
        nodes: dict[int | None, NodeView] = {}
        todo = [self.root]
        while todo:
            n = todo.pop(0)
            threads = tuple(
                sorted(t for t in n.threads if self.threads[t].state in (LIVE, BLOCKED))
            )
            blocked = tuple(
                BlockedView(t, c, d) for t, (c, d, _) in sorted(n.blocked.items())
            )
            nodes[n.txn] = NodeView(
                n.txn,
                n.parent.txn if n.parent is not None else None,
                n.name,
                threads,
                blocked,
                tuple(n.co_tokens),
                tuple(sorted(n.children)),
                n.last_activity_ms,
            )
            todo.extend(n.children[k] for k in sorted(n.children))
        return PolicySnapshot(self.version, self.host.now_ms(), nodes)

    # -- directives -----------------------------------------------------------

    def apply_directive(self, d: Directive) -> bool:
        self.metrics["directives"] += 1
        ok = self._valid(d)
        if not ok:
            self.metrics["stale_drop"] += 1
            self._emit("stale_drop", None, None, {"directive": type(d).__name__})
            return False
        did = self.next_directive
        self.next_directive += 1
        if isinstance(d, SyncPair):
            self._sync(d)
        elif isinstance(d, CommitTxn):
            self._commit(did, d.txn)
        elif isinstance(d, AbortTxn):
            self._abort(did, d.txn)
        elif isinstance(d, Embed):
            self._embed(did, d)
        self._mutated()
        return True

    def _blocked_in(self, node: TNode, tid: int, chan: int, direction: str) -> bool:
        for n in node.subtree():
            rec = n.blocked.get(tid)
            if rec is not None:
                return rec[0] == chan and rec[1] == direction
        return False

    def _valid(self, d: Directive) -> bool:
        if isinstance(d, SyncPair):
            s, r = self.threads.get(d.sender), self.threads.get(d.receiver)
            if s is None or r is None or s.node is None or s.node is not r.node:
                return False
            sb, rb = s.node.blocked.get(d.sender), s.node.blocked.get(d.receiver)
            return (
                sb is not None and rb is not None
                and sb[:2] == (d.channel, SEND) and rb[:2] == (d.channel, RECV)
            )
        if isinstance(d, CommitTxn):
            node = self.nodes.get(d.txn)
            return node is not None and d.txn in node.co_tokens
        if isinstance(d, AbortTxn):
            node = self.nodes.get(d.txn)
            if node is None:
                return False
            return self.policy.abort_allowed(self.host.now_ms(), node.last_activity_ms)
        if isinstance(d, Embed):
            target = self.nodes.get(d.txn)
            if target is None:
                return False
            parent = target.parent
            if d.thread is not None:
                info = self.threads.get(d.thread)
                if info is None or info.node is not parent or info.state not in (LIVE, BLOCKED):
                    return False
                item = None
            else:
                item = self.nodes.get(d.node)
                if item is None or item.parent is not parent or item is target:
                    return False
            if self.policy.communication_driven:
                j = d.justification
                if j is None:
                    return False
                other = RECV if j.direction == SEND else SEND
                if item is None:
                    if j.thread != d.thread:
                        return False
                    rec = parent.blocked.get(j.thread)
                    if rec is None or rec[:2] != (j.channel, j.direction):
                        return False
                elif not self._blocked_in(item, j.thread, j.channel, j.direction):
                    return False
                return self._blocked_in(target, j.partner, j.channel, other)
            return True
        return False

    def _sync(self, d: SyncPair) -> None:
        node = self.threads[d.sender].node
        _, _, value = node.blocked.pop(d.sender)
        node.blocked.pop(d.receiver)
        s, r = self.threads[d.sender], self.threads[d.receiver]
        s.state = r.state = LIVE
        self.host.signal(d.receiver, Deliver(r.epoch, value))
        self.host.signal(d.sender, Deliver(s.epoch, UNIT))
        self._touch(node)
        self.metrics["sync"] += 1
        self._emit(
            "sync", d.receiver, node, {"sender": d.sender, "receiver": d.receiver, "channel": d.channel}
        )

    def _signal_all(self, tids, make) -> None:
        for t in sorted(tids):
            self.host.signal(t, make())
            self.pending_acks += 1

    def _commit(self, did: int, k: int) -> None:
        node = self.nodes.pop(k)
        parent = node.parent
        path = node.path()
        affected = node.all_threads()
        del parent.children[k]
        for t in node.threads:
            info = self.threads[t]
            info.node = parent
            if info.state == FINISHED and parent is self.root:
                self.results.append(node.finished[t])
                info.node = None
            else:
                parent.threads.add(t)
        for t, v in node.finished.items():
            if parent is not self.root:
                parent.finished[t] = v
        parent.blocked.update(node.blocked)
        for c, child in node.children.items():
            child.parent = parent
            parent.children[c] = child
        parent.co_tokens.extend(x for x in node.co_tokens if x != k)
        self._touch(parent)
        self._signal_all(affected, lambda: DropSig(did, k))
        self.metrics["commit"] += 1
        top = parent is self.root
        if top and node.name in self.op_names:
            self.ops += 1
        self.trace.emit(
            self.host.now_ns(), "commit", None, k, path,
            {"name": node.name, "top": top, "threads": sorted(node.threads)},
        )

    def _abort(self, did: int, k: int) -> None:
        node = self.nodes[k]
        parent = node.parent
        path = node.path()
        affected = node.all_threads()
        # tear down the live subtree
        killed = set()
        for n in node.subtree():
            if n.txn is not None:
                self.nodes.pop(n.txn, None)
            for t in n.threads:
                info = self.threads[t]
                info.node = None
                info.state = GONE
                killed.add(t)
        del parent.children[k]
        # restore what was embedded
        restored_threads = []
        for t in node.frag_threads:
            info = self.threads[t]
            info.node = parent
            info.state = LIVE
            parent.threads.add(t)
            restored_threads.append(t)
        now = self.host.now_ms()
        restored_nodes = []
        for copy in node.frag_nodes:
            copy.parent = parent
            parent.children[copy.txn] = copy
            for n in copy.subtree():
                self.nodes[n.txn] = n
                n.last_activity_ms = now
                for t in n.threads:
                    info = self.threads[t]
                    info.node = n
                    info.state = LIVE
                    restored_threads.append(t)
            restored_nodes.append(copy.describe())
        for t in affected:
            self.threads[t].epoch += 1
        self._signal_all(affected, lambda: AbortSig(did, k))
        self._touch(parent)
        self.metrics["abort"] += 1
        really_killed = sorted(killed - set(restored_threads))
        self.metrics["kill"] += len(really_killed)
        self.trace.emit(
            self.host.now_ns(), "abort", None, k, path,
            {
                "name": node.name,
                "rolled_back": sorted(restored_threads),
                "killed": really_killed,
                "restored": restored_nodes,
            },
        )
        for t in really_killed:
            self.trace.emit(self.host.now_ns(), "kill", t, k, path, {})

    def _embed(self, did: int, d: Embed) -> None:
        target = self.nodes[d.txn]
        parent = target.parent
        extra: dict = {}
        if d.thread is not None:
            t = d.thread
            parent.threads.remove(t)
            target.threads.add(t)
            rec = parent.blocked.pop(t, None)
            if rec is not None:
                target.blocked[t] = rec
            self.threads[t].node = target
            target.frag_threads.append(t)
            self._signal_all([t], lambda: EmbedSig(did, d.txn, None))
            extra["thread"] = t
        else:
            item = parent.children.pop(d.node)
            item.parent = target
            target.children[d.node] = item
            target.frag_nodes.append(item.copy())
            self._signal_all(item.all_threads(), lambda: EmbedSig(did, d.txn, d.node))
            extra["node"] = d.node
        if d.justification is not None:
            j = d.justification
            extra["justification"] = {
                "thread": j.thread, "channel": j.channel, "dir": j.direction, "partner": j.partner,
            }
        self._touch(target)
        self.metrics["embed"] += 1
        self._emit("embed", d.thread, target, extra)

    # -- state queries --------------------------------------------------------

    def quiescent(self) -> bool:
        """No live transaction, no runnable thread, nothing pending, no sync enabled."""
        if self.nodes or self.pending_acks or self.in_flight:
            return False
        if any(i.state == LIVE for i in self.threads.values()):
            return False
        return not self._root_sync_possible()

    def outcome(self) -> Outcome:
        threads = list(self.results)
        for t, (chan, direction, value) in sorted(self.root.blocked.items()):
            threads.append(Send(ChanV(chan), value) if direction == SEND else Recv(ChanV(chan)))
        return outcome_of_threads(threads, self.free_channels)

    def check_invariants(self, workers: dict) -> None:
        """Trie uniqueness and the stack/trie mirror; call only when all mailboxes are empty."""
        seen_threads: dict[int, TNode] = {}
        seen_txns: set[int] = set()
        for n in self.root.subtree():
            if n.txn is not None:
                if n.txn in seen_txns:
                    raise ProtocolError(f"transaction {n.txn} appears twice")
                seen_txns.add(n.txn)
                if self.nodes.get(n.txn) is not n:
                    raise ProtocolError(f"transaction {n.txn} index out of date")
            for t in n.threads:
                if t in seen_threads:
                    raise ProtocolError(f"thread {t} appears twice")
                seen_threads[t] = n
            if not set(n.blocked) <= n.threads:
                raise ProtocolError("blocked record for a thread at another level")
        if seen_txns != set(self.nodes):
            raise ProtocolError("detached transaction in index")
        for t, n in seen_threads.items():
            info = self.threads[t]
            if info.node is not n:
                raise ProtocolError(f"thread {t} location out of date")
            w = workers[t]
            want = list(reversed(n.path()))
            if w.state in ("dormant", "dead"):
                raise ProtocolError(f"thread {t} is in the trie but {w.state}")
            if w.names() != want:
                raise ProtocolError(f"thread {t} stack {w.names()} does not mirror path {want}")
