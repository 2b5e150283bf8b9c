"""Expression threads: local small-step evaluation plus the alternatives stack."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from ..refsem import Blocked, Effect, classify
from ..schedulers import RECV, SEND
from ..syntax import UNIT, BoolV, ChanV, Expr, Send, ValueResult, plug, substitute_txn
from .messages import (
    Ack,
    AbortSig,
    BlockedOn,
    CoSpawned,
    Deliver,
    DropSig,
    EmbedSig,
    Finished,
    Reply,
    Spawned,
    Ticked,
    TxnStarted,
)

RUNNING = "running"
WAITING = "waiting"  # request sent, local state unchanged until the reply
BLOCKED = "blocked"
FINISHED = "finished"
DORMANT = "dormant"  # killed, but some enclosing alternative may bring it back
DEAD = "dead"


@dataclass(frozen=True)
class Snapshot:
    """Saved continuation for one alternatives-stack entry.

    ``inner`` is the part of the stack inside the transaction at capture
    time; ``alive`` is false for threads that were dormant when captured.
    """

    expr: Expr
    inner: tuple[tuple[int, Snapshot | None], ...] = ()
    alive: bool = True


# entries are innermost first; a None snapshot marks a thread spawned
# inside that transaction (it dies if the transaction aborts)
Entry = tuple[int, Snapshot | None]


class Worker:
    def __init__(
        self,
        tid: int,
        expr: Expr,
        stack: list[Entry],
        post: Callable[[object], None],
        new_channel: Callable[[], int],
        rng: random.Random,
    ) -> None:
        self.tid = tid
        self.expr = expr
        self.stack = list(stack)
        self.post = post
        self.new_channel = new_channel
        self.rng = rng
        self.state = RUNNING
        self.epoch = 0
        self.pending: Effect | None = None
        self.block_ctx: tuple | None = None
        self.steps = 0

    @property
    def runnable(self) -> bool:
        return self.state == RUNNING

    def names(self) -> list[int]:
        return [k for k, _ in self.stack]

    # -- evaluation ---------------------------------------------------------

    def step(self) -> None:
        self.steps += 1
        c = classify(self.expr)
        if isinstance(c, tuple):
            rule, self.expr = c
            if rule == "tick":
                self.post(Ticked(self.tid, self.epoch))
            return
        if isinstance(c, ValueResult):
            self.state = FINISHED
            self.post(Finished(self.tid, self.epoch, self.expr))
            return
        if isinstance(c, Blocked):
            self.state = BLOCKED
            self.block_ctx = c.context
            r = c.redex
            if isinstance(r, Send):
                self.post(BlockedOn(self.tid, self.epoch, r.chan.id, SEND, r.value))
            else:
                self.post(BlockedOn(self.tid, self.epoch, r.chan.id, RECV, None))
            return
        kind, ctx, redex = c.kind, c.context, c.redex
        if kind == "flip":
            self.expr = plug(ctx, BoolV(self.rng.random() < 0.5))
        elif kind == "newchan":
            self.expr = plug(ctx, ChanV(self.new_channel()))
        else:
            self.state = WAITING
            self.pending = c
            if kind == "spawn":
                self.post(Spawned(self.tid, self.epoch, redex.thunk))
            elif kind == "atomic":
                self.post(TxnStarted(self.tid, self.epoch, redex.txn))
            else:
                self.post(CoSpawned(self.tid, self.epoch, redex.txn))

    # -- signals ------------------------------------------------------------

    def handle(self, sig: object) -> None:
        if isinstance(sig, Reply):
            self._reply(sig)
        elif isinstance(sig, Deliver):
            if sig.epoch == self.epoch and self.state == BLOCKED:
                self.expr = plug(self.block_ctx, sig.value)
                self.block_ctx = None
                self.state = RUNNING
        elif isinstance(sig, EmbedSig):
            self._embed(sig.txn, sig.after)
            self.post(Ack(self.tid, sig.directive))
        elif isinstance(sig, DropSig):
            self._drop(sig.txn)
            self.post(Ack(self.tid, sig.directive))
        elif isinstance(sig, AbortSig):
            self._abort(sig.txn)
            self.post(Ack(self.tid, sig.directive))
        else:
            raise TypeError(f"unexpected signal {sig!r}")

    def _reply(self, sig: Reply) -> None:
        if sig.epoch != self.epoch or self.state != WAITING:
            return
        c = self.pending
        ctx, redex = c.context, c.redex
        if c.kind == "atomic":
            k = sig.payload
            self.stack.insert(0, (k, Snapshot(plug(ctx, redex.alternative))))
            self.expr = plug(ctx, substitute_txn(redex.default, redex.txn, k))
        else:
            self.expr = plug(ctx, UNIT)
        self.pending = None
        self.state = RUNNING

    def _index(self, k: int) -> int | None:
        for i, (name, _) in enumerate(self.stack):
            if name == k:
                return i
        return None

    def _embed(self, k: int, after: int | None) -> None:
        alive = self.state not in (DORMANT, DEAD)
        if after is None:
            self.stack.insert(0, (k, Snapshot(self.expr, (), alive)))
            return
        i = self._index(after)
        if i is None:
            return
        snap = Snapshot(self.expr, tuple(self.stack[: i + 1]), alive)
        self.stack.insert(i + 1, (k, snap))

    def _drop(self, k: int) -> None:
        i = self._index(k)
        if i is not None:
            del self.stack[i]
        if self.state == DORMANT and all(s is None for _, s in self.stack):
            self.state = DEAD

    def _abort(self, k: int) -> None:
        self.epoch += 1
        i = self._index(k)
        if i is None:
            return
        snap = self.stack[i][1]
        self.pending = None
        self.block_ctx = None
        if snap is None:
            self.stack = self.stack[i + 1 :]
            alive_later = any(s is not None for _, s in self.stack)
            self.state = DORMANT if alive_later else DEAD
            return
        self.expr = snap.expr
        self.stack = list(snap.inner) + self.stack[i + 1 :]
        self.state = RUNNING if snap.alive else DORMANT
