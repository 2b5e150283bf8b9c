"""Drivers wiring workers, gatherer and scheduler together.

Both drivers execute the same ``Worker``, ``Gatherer`` and ``Policy`` code.
The deterministic driver interleaves them on one OS thread with a seeded
RNG and a virtual clock; the concurrent driver gives every worker, the
scheduler and the gatherer their own OS thread and uses the wall clock.
"""

from __future__ import annotations

import itertools
import queue
import random
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import IO

from ..refsem import Outcome
from ..schedulers import DecisionStats, Policy, PolicyConfig, PolicySnapshot
from ..syntax import Expr, expr_channels
from .gatherer import Gatherer
from .messages import STOP, Crashed, NoDirective
from .trace import Trace
from .worker import RUNNING, Worker


@dataclass
class RunConfig:
    deterministic: bool = True
    seed: int = 0
    max_ms: float = 10_000.0
    # scheduler tick; defaults to 1ms virtual or 5ms wall
    tick_ms: float | None = None
    # virtual cost of one actor action in deterministic mode
    step_us: float = 10.0
    max_actions: int | None = None
    trace: IO[str] | None = None
    keep_trace: bool = False
    check_invariants: bool = False
    op_names: frozenset[str] = frozenset({"k"})
    count_ticks: bool = False
    policy: PolicyConfig = field(default_factory=PolicyConfig)


@dataclass
class RunResult:
    outcome: Outcome | None
    timed_out: bool
    elapsed_ms: float
    ops: int
    metrics: dict[str, int]
    decisions: DecisionStats
    results: list[Expr]
    events: list[dict]
    live_txns: int

    @property
    def quiescent(self) -> bool:
        return self.outcome is not None


def _policy_for(name: str | Policy, cfg: RunConfig) -> Policy:
    if isinstance(name, Policy):
        return name
    pc = replace(cfg.policy, seed=cfg.seed)
    return Policy(name, pc, random.Random(f"{cfg.seed}:policy"))


class _Base:
    def __init__(self, expr: Expr, policy: Policy, cfg: RunConfig) -> None:
        self.expr = expr
        self.policy = policy
        self.cfg = cfg
        free = frozenset(expr_channels(expr))
        self.channels = itertools.count(max(free, default=0) + 1)
        self.trace = Trace(cfg.trace, cfg.keep_trace)
        self.workers: dict[int, Worker] = {}
        self.gatherer = Gatherer(
            self, policy, self.trace, free, frozenset(cfg.op_names), cfg.count_ticks
        )

    def new_channel(self) -> int:
        return next(self.channels)

    def decide(self, snap: PolicySnapshot) -> object:
        d = self.policy.decide(snap)
        if d is None:
            return NoDirective(snap.version)
        return replace(d, version=snap.version)

    def _result(self, timed_out: bool, elapsed_ms: float) -> RunResult:
        g = self.gatherer
        if g.error is not None:
            raise g.error
        outcome = None if timed_out else g.outcome()
        return RunResult(
            outcome,
            timed_out,
            elapsed_ms,
            g.ops,
            dict(g.metrics),
            self.policy.stats,
            list(g.results),
            self.trace.events,
            g.live_txns(),
        )


class DeterministicEngine(_Base):
    def __init__(self, expr: Expr, policy: Policy, cfg: RunConfig) -> None:
        super().__init__(expr, policy, cfg)
        self.clock_us = 0.0
        self.rng = random.Random(f"{cfg.seed}:loop")
        self.gq: deque = deque()
        self.slot: PolicySnapshot | None = None
        self.mailboxes: dict[int, deque] = {}

    # host interface
    def now_ms(self) -> float:
        return self.clock_us / 1000.0

    def now_ns(self) -> int:
        return int(self.clock_us * 1000)

    def signal(self, tid: int, sig: object) -> None:
        self.mailboxes[tid].append(sig)

    def post(self, msg: object) -> None:
        self.gq.append(msg)

    def post_snapshot(self, snap: PolicySnapshot) -> None:
        self.slot = snap

    def new_worker(self, tid: int, expr: Expr, stack: list) -> None:
        rng = random.Random(f"{self.cfg.seed}:thread:{tid}")
        self.workers[tid] = Worker(tid, expr, stack, self.post, self.new_channel, rng)
        self.mailboxes[tid] = deque()

    def run(self) -> RunResult:
        cfg = self.cfg
        g = self.gatherer
        g.start(self.expr)
        tick_us = (cfg.tick_ms if cfg.tick_ms is not None else 1.0) * 1000.0
        max_us = cfg.max_ms * 1000.0
        next_tick = tick_us
        actions = 0
        timed_out = False
        while True:
            if g.error is not None:
                raise g.error
            if self.clock_us >= max_us or (cfg.max_actions is not None and actions >= cfg.max_actions):
                timed_out = True
                break
            cands: list = []
            if self.gq:
                cands.append(g)
            if self.slot is not None:
                cands.append(self)
            for tid, w in self.workers.items():
                if self.mailboxes[tid] or w.state == RUNNING:
                    cands.append(w)
            if not cands:
                if g.quiescent():
                    break
                self.clock_us = max(self.clock_us, next_tick)
            else:
                actor = cands[self.rng.randrange(len(cands))] if len(cands) > 1 else cands[0]
                actions += 1
                self.clock_us += cfg.step_us
                if actor is g:
                    g.handle(self.gq.popleft())
                    if cfg.check_invariants and not any(self.mailboxes.values()):
                        g.check_invariants(self.workers)
                elif actor is self:
                    snap, self.slot = self.slot, None
                    self.gq.append(self.decide(snap))
                else:
                    mb = self.mailboxes[actor.tid]
                    if mb:
                        actor.handle(mb.popleft())
                    else:
                        actor.step()
            if self.clock_us >= next_tick:
                g.tick()
                next_tick = (self.clock_us // tick_us + 1) * tick_us
        return self._result(timed_out, self.now_ms())


class ConcurrentEngine(_Base):
    def __init__(self, expr: Expr, policy: Policy, cfg: RunConfig) -> None:
        super().__init__(expr, policy, cfg)
        self.gq: queue.SimpleQueue = queue.SimpleQueue()
        self.sq: queue.SimpleQueue = queue.SimpleQueue()
        self.mailboxes: dict[int, queue.SimpleQueue] = {}
        self.os_threads: list[threading.Thread] = []
        self.t0 = time.monotonic_ns()

    def now_ns(self) -> int:
        return time.monotonic_ns() - self.t0

    def now_ms(self) -> float:
        return self.now_ns() / 1e6

    def signal(self, tid: int, sig: object) -> None:
        self.mailboxes[tid].put(sig)

    def post(self, msg: object) -> None:
        self.gq.put(msg)

    def post_snapshot(self, snap: PolicySnapshot) -> None:
        self.sq.put(snap)

    def new_worker(self, tid: int, expr: Expr, stack: list) -> None:
        rng = random.Random(f"{self.cfg.seed}:thread:{tid}")
        w = Worker(tid, expr, stack, self.post, self.new_channel, rng)
        mb: queue.SimpleQueue = queue.SimpleQueue()
        self.workers[tid] = w
        self.mailboxes[tid] = mb
        th = threading.Thread(target=self._worker_loop, args=(w, mb), daemon=True, name=f"tcml-{tid}")
        self.os_threads.append(th)
        th.start()

    def _worker_loop(self, w: Worker, mb: queue.SimpleQueue) -> None:
        try:
            while True:
                if w.state == RUNNING:
                    try:
                        sig = mb.get_nowait()
                    except queue.Empty:
                        w.step()
                        continue
                else:
                    sig = mb.get()
                if sig is STOP:
                    return
                w.handle(sig)
        except Exception as exc:  # reported through the gatherer
            self.post(Crashed(w.tid, exc))

    def _scheduler_loop(self) -> None:
        while True:
            snap = self.sq.get()
            if snap is STOP:
                return
            self.post(self.decide(snap))

    def run(self) -> RunResult:
        cfg = self.cfg
        g = self.gatherer
        old_interval = sys.getswitchinterval()
        sys.setswitchinterval(0.0005)
        sched = threading.Thread(target=self._scheduler_loop, daemon=True, name="tcml-scheduler")
        sched.start()
        tick = (cfg.tick_ms if cfg.tick_ms is not None else 5.0) / 1000.0
        deadline = time.monotonic() + cfg.max_ms / 1000.0
        next_tick = time.monotonic() + tick
        timed_out = False
        try:
            g.start(self.expr)
            while True:
                now = time.monotonic()
                if now >= deadline:
                    timed_out = True
                    break
                try:
                    msg = self.gq.get(timeout=max(0.0, min(next_tick, deadline) - now))
                except queue.Empty:
                    msg = None
                if msg is not None:
                    g.handle(msg)
                    if g.error is not None:
                        break
                if time.monotonic() >= next_tick:
                    g.tick()
                    next_tick = time.monotonic() + tick
                if self.gq.empty() and g.quiescent():
                    break
        finally:
            for mb in self.mailboxes.values():
                mb.put(STOP)
            self.sq.put(STOP)
            for th in self.os_threads:
                th.join(timeout=1.0)
            sched.join(timeout=1.0)
            sys.setswitchinterval(old_interval)
        return self._result(timed_out, self.now_ms())


def run_program(expr: Expr, policy: str | Policy = "r", config: RunConfig | None = None) -> RunResult:
    """Run a closed, typechecked expression under a scheduling policy."""
    cfg = config or RunConfig()
    pol = _policy_for(policy, cfg)
    engine = DeterministicEngine(expr, pol, cfg) if cfg.deterministic else ConcurrentEngine(expr, pol, cfg)
    return engine.run()
