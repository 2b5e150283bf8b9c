"""Benchmark programs and throughput measurement.

Programs are assembled as ASTs; ``pretty_print`` turns any of them back
into source.  Throughput counts top-level commits of transactions named
``k`` (the restarting transaction every participant runs), or ``tick``
events for the non-transactional baselines.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field

from .parser import parse_expr
from .runtime import RunConfig, run_program
from .schedulers import PolicyConfig
from .syntax import UNIT, App, Atomic, Expr, Fun, If, Let, Op, PrimOp, TxnName, Var, free_vars, seq

BENCHMARKS = ("3wr", "sno", "3wr-ideal", "sno-ideal")
ROLES = ("alice", "bob", "carol", "david")
SNO_ROUTES = {
    "alice": ("dinner", "movie"),
    "bob": ("dinner", "dancing"),
    "carol": ("dancing",),
    "david": ("dancing", "movie"),
}


def expand_restart(k: TxnName, body: Expr) -> Expr:
    """``(fun r() -> atomic k { body } else { r () }) ()``: retry the transaction after every abort."""
    r = "r"
    while r in free_vars(body):
        r += "'"
    return App(Fun(r, None, Atomic(k, body, App(Var(r), UNIT))), UNIT)


def _lets(bindings: list[tuple[str, Expr]], body: Expr) -> Expr:
    for name, bound in reversed(bindings):
        body = Let(name, bound, body)
    return body


def _spawns(names: list[str], tail: Expr = UNIT) -> Expr:
    out = tail
    for n in reversed(names):
        out = seq(parse_expr(f"spawn {n}"), out)
    return out


def _role_fun(name: str, once: Expr, loop: bool) -> Expr:
    # thunk running ``once`` a single time or forever
    body = seq(once, App(Var(name), UNIT)) if loop else once
    return Fun(name, None, body)


def _counts(counts) -> dict[str, int]:
    if isinstance(counts, dict):
        c = {r: int(counts.get(r, 0)) for r in ROLES}
    else:
        c = dict(zip(ROLES, (int(x) for x in counts)))
        if len(c) != 4:
            raise ValueError("SNO needs four role counts")
    if any(v < 0 for v in c.values()) or not any(c.values()):
        raise ValueError("SNO role counts must be non-negative and not all zero")
    return c


def build_sno(counts, loop: bool = True) -> Expr:
    """Saturday-night-out with ``counts`` copies of alice, bob, carol, david."""
    c = _counts(counts)
    bindings: list[tuple[str, Expr]] = [
        ("sync", parse_expr("fun sync(c) -> if flip () then send c () else recv c")),
        ("dinner", parse_expr("newchan[unit]")),
        ("dancing", parse_expr("newchan[unit]")),
        ("movie", parse_expr("newchan[unit]")),
    ]
    spawned = []
    for role in ROLES:
        if not c[role]:
            continue
        steps = "; ".join(f"sync {ch}" for ch in SNO_ROUTES[role])
        body = parse_expr(f"{steps}; commit k")
        bindings.append((role, _role_fun(role, expand_restart("k", body), loop)))
        spawned.extend([role] * c[role])
    return _lets(bindings, _spawns(spawned))


def build_sno_ideal(counts, loop: bool = True) -> Expr:
    """Carol-free SNO without transactions: fixed send/recv roles, alice ticks per round."""
    c = _counts(counts)
    c["carol"] = 0
    if not any(c.values()):
        raise ValueError("SNO ideal needs at least one of alice, bob, david")
    bodies = {
        "alice": "send dinner (); recv movie; tick ()",
        "bob": "recv dinner; send dancing ()",
        "david": "recv dancing; send movie ()",
    }
    bindings: list[tuple[str, Expr]] = [
        ("dinner", parse_expr("newchan[unit]")),
        ("dancing", parse_expr("newchan[unit]")),
        ("movie", parse_expr("newchan[unit]")),
    ]
    spawned = []
    for role in ("alice", "bob", "david"):
        if c[role]:
            bindings.append((role, _role_fun(role, parse_expr(bodies[role]), loop)))
            spawned.extend([role] * c[role])
    return _lets(bindings, _spawns(spawned))


_LEADER = (
    "let a = recv rv in let b = recv rv in "
    "send (snd a) (fst b); send (snd b) (fst a); commit k; fst a + fst b"
)
_FOLLOWER = "let reply = newchan[int] in send rv (ID, reply); let got = recv reply in commit k; got"


def build_3wr(n: int, loop: bool = True, roles: list[str] | None = None) -> Expr:
    """Three-way rendezvous among ``n`` processes.

    Each round a process enters a restarting transaction and flips for
    leader or follower; ``roles`` ("leader", "follower", "flip") can fix
    the choice per process.
    """
    if n < 3:
        raise ValueError("3WR needs at least three processes")
    roles = list(roles) if roles is not None else ["flip"] * n
    if len(roles) != n:
        raise ValueError("need one role per process")
    bindings: list[tuple[str, Expr]] = [("rv", parse_expr("newchan[int * int chan]"))]
    names = []
    for i, role in enumerate(roles):
        leader = parse_expr(_LEADER)
        follower = parse_expr(_FOLLOWER.replace("ID", str(i + 1)))
        if role == "flip":
            body = If(Op(PrimOp.FLIP, UNIT), leader, follower)
        elif role == "leader":
            body = leader
        elif role == "follower":
            body = follower
        else:
            raise ValueError(f"unknown 3WR role {role!r}")
        name = f"p{i + 1}"
        bindings.append((name, _role_fun(name, expand_restart("k", body), loop)))
        names.append(name)
    return _lets(bindings, _spawns(names))


def build_3wr_ideal(n: int, loop: bool = True) -> Expr:
    """Non-transactional 3WR: a matcher takes requests three at a time and answers them."""
    if n < 3:
        raise ValueError("3WR needs at least three processes")
    matcher = parse_expr(
        "fun matcher() -> let a = recv rv in let b = recv rv in let c = recv rv in "
        "send (snd a) (fst b + fst c); send (snd b) (fst a + fst c); "
        "send (snd c) (fst a + fst b); tick ()"
        + ("; matcher ()" if loop else "")
    )
    bindings: list[tuple[str, Expr]] = [("rv", parse_expr("newchan[int * int chan]")), ("matcher", matcher)]
    names = ["matcher"]
    for i in range(n):
        name = f"p{i + 1}"
        once = parse_expr(f"let reply = newchan[int] in send rv ({i + 1}, reply); recv reply")
        bindings.append((name, _role_fun(name, seq(once, UNIT), loop)))
        names.append(name)
    return _lets(bindings, _spawns(names))


def build_benchmark(name: str, n: int = 3, counts=(1, 1, 1, 1), loop: bool = True) -> Expr:
    if name == "3wr":
        return build_3wr(n, loop)
    if name == "3wr-ideal":
        return build_3wr_ideal(n, loop)
    if name == "sno":
        return build_sno(counts, loop)
    if name == "sno-ideal":
        return build_sno_ideal(counts, loop)
    raise ValueError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}")


@dataclass(frozen=True)
class BenchSpec:
    benchmark: str
    processes: int = 3
    counts: tuple[int, int, int, int] = (1, 1, 1, 1)
    duration_ms: float = 10_000.0
    scheduler: str = "cd"
    seed: int = 0
    repetitions: int = 1
    deterministic: bool = True
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        if self.duration_ms <= 0:
            raise ValueError("duration must be positive")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")
        if self.benchmark.startswith("3wr") and self.processes < 3:
            raise ValueError("3WR needs at least three processes")
        if self.benchmark.startswith("sno"):
            _counts(self.counts)

    @property
    def ideal(self) -> bool:
        return self.benchmark.endswith("-ideal")


@dataclass
class ThroughputReport:
    benchmark: str
    scheduler: str
    window_ms: float
    ops: list[int]
    ops_per_second: list[float]
    mean_ops_per_second: float
    embeds: int
    aborts: int
    commits: int
    stale_drops: int
    syncs: int
    seeds: list[int]

    def to_json(self) -> dict:
        return asdict(self)


def run_bench(spec: BenchSpec, trace_paths: list[str] | None = None) -> ThroughputReport:
    """Run ``spec.repetitions`` windows back to back and report mean throughput."""
    program = build_benchmark(spec.benchmark, spec.processes, spec.counts)
    ops, rates, seeds = [], [], []
    totals = {"embed": 0, "abort": 0, "commit": 0, "stale_drop": 0, "sync": 0}
    for i in range(spec.repetitions):
        seed = spec.seed + i
        stream = open(trace_paths[i], "w") if trace_paths else None
        try:
            cfg = RunConfig(
                deterministic=spec.deterministic,
                seed=seed,
                max_ms=spec.duration_ms,
                trace=stream,
                op_names=frozenset() if spec.ideal else frozenset({"k"}),
                count_ticks=spec.ideal,
                policy=spec.policy,
            )
            res = run_program(program, spec.scheduler, cfg)
        finally:
            if stream is not None:
                stream.close()
        ops.append(res.ops)
        rates.append(res.ops / (spec.duration_ms / 1000.0))
        seeds.append(seed)
        for key in totals:
            totals[key] += res.metrics.get(key, 0)
    return ThroughputReport(
        spec.benchmark,
        spec.scheduler,
        spec.duration_ms,
        ops,
        rates,
        statistics.fmean(rates),
        totals["embed"],
        totals["abort"],
        totals["commit"],
        totals["stale_drop"],
        totals["sync"],
        seeds,
    )
