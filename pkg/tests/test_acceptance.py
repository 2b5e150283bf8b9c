"""Acceptance gate.  Each test prints one PASS/FAIL line (collected in the
terminal summary) and asserts the same verdict."""

import io
import json
import random
import time
from collections import Counter

import pytest

from corpus import CORPUS
from tcml import refsem
from tcml.bench import BenchSpec, build_3wr, build_sno, run_bench
from tcml.cli import main as cli_main
from tcml.parser import parse_expr
from tcml.runtime import RunConfig, run_program
from tcml.schedulers import (
    RECV,
    BlockedView,
    DecisionStats,
    NodeView,
    PolicyConfig,
    PolicySnapshot,
    policy_staged,
)
from tcml.syntax import UNIT, ChanV, Co, ExprP, Nu, Trans, par, substitute

C, D = ChanV(1), ChanV(2)


def ex(src: str, **chans) -> ExprP:
    e = parse_expr(src)
    for name, ch in {"c": C, "d": D, **chans}.items():
        e = substitute(e, name, ch)
    return ExprP(e)


# ---------------------------------------------------------------- criterion 1

# (rule, start, expected successor); successors built by hand from the rule
RULE_WITNESSES = [
    ("if_true", ex("if true then 1 else 2"), ex("1")),
    ("if_false", ex("if false then 1 else 2"), ex("2")),
    ("let", ex("let x = 5 in x + 1"), ex("5 + 1")),
    ("op", ex("3 + 4"), ex("7")),
    ("app", ex("(fun f(x) -> x + 1) 2"), ex("2 + 1")),
    ("spawn", ex("spawn (fun f() -> 1); 2"), par(ex("(); 2"), ex("(fun f() -> 1) ()"))),
    (
        "newchan",
        ex("let x = newchan[int] in send x 1"),
        Nu(9, ex("let x = e in send x 1", e=ChanV(9))),
    ),
    ("atomic", ex("atomic k { commit k; 1 } else { 2 }"), Trans("k", ex("commit k; 1"), ex("2"))),
    ("commit", Trans("k", ex("commit k; 1"), ex("2")), Trans("k", par(Co("k"), ex("(); 1")), ex("2"))),
    (
        "sync",
        par(ex("let v = recv c in v + 1"), ex("send c 5; 0")),
        par(ex("let v = 5 in v + 1"), ex("(); 0")),
    ),
    (
        "sync",
        Nu(7, par(ex("send e (1, 2); 3", e=ChanV(7)), ex("fst (recv e)", e=ChanV(7)))),
        par(ex("(); 3"), ex("fst (1, 2)")),
    ),
    (
        "embed",
        par(ex("send c 1"), Trans("k", ex("recv c"), ex("0"))),
        Trans("k", par(ex("recv c"), ex("send c 1")), par(ex("0"), ex("send c 1"))),
    ),
    ("co_commit", Trans("k", par(Co("k"), ex("1")), ex("2")), ex("1")),
    ("abort", Trans("k", ex("recv c"), ex("2")), ex("2")),
]

# closure under transactions: a step inside a default
CLOSURE_WITNESSES = [
    ("if_true", Trans("k", ex("if true then 1 else 2"), ex("0")), Trans("k", ex("1"), ex("0"))),
    (
        "sync",
        Trans("k", Trans("l", par(ex("recv c"), ex("send c 3")), ex("0")), ex("0")),
        Trans("k", Trans("l", par(ex("3"), ex("()")), ex("0")), ex("0")),
    ),
]


def _fires(start, rule, expected) -> bool:
    want = refsem.canonicalize(expected)
    return any(lab.kind == rule and s == want for lab, s in refsem.enumerate_steps(refsem.canonicalize(start)))


def test_rule_coverage(verdict):
    t0 = time.perf_counter()
    missing = [f"{i}:{rule}" for i, (rule, s, e) in enumerate(RULE_WITNESSES + CLOSURE_WITNESSES) if not _fires(s, rule, e)]
    elapsed = time.perf_counter() - t0
    rules = {r for r, _, _ in RULE_WITNESSES}
    ok = not missing and len(RULE_WITNESSES) == 14 and len(rules) == 13 and elapsed < 1.0
    verdict(
        1,
        "every reduction rule has a witness successor",
        ok,
        f"{len(RULE_WITNESSES)} rules + {len(CLOSURE_WITNESSES)} closure, missing={missing}, {elapsed:.3f}s",
    )


# ---------------------------------------------------------------- criterion 2


def test_nested_example_golden(verdict):
    t0 = time.perf_counter()
    P = ex("send d (); send c ()")
    kbody, lbody = ex("recv c; commit k"), ex("recv d; commit l")
    restart_l = ex("(); atomic l { recv d; commit l } else { () }")
    U = ex("()")
    main = ex(
        "(atomic k { spawn (fun f() -> recv c; commit k) } else { () }); "
        "atomic l { recv d; commit l } else { () }"
    )
    start = par(main, P)
    states = {
        "post_embed": Trans(
            "k", par(kbody, Trans("l", par(P, lbody), par(P, U))), par(P, restart_l)
        ),
        "post_sync_on_d": Trans(
            "k", par(kbody, Trans("l", par(ex("send c ()"), ex("commit l")), par(P, U))), par(P, restart_l)
        ),
        "post_inner_embed": Trans(
            "k",
            Trans("l", par(kbody, ex("send c ()"), ex("commit l")), par(kbody, P, U)),
            par(P, restart_l),
        ),
        "pre_commit": Trans(
            "k", Trans("l", par(Co("k"), Co("l"), U, U, U), par(kbody, P, U)), par(P, restart_l)
        ),
    }
    seen = refsem.reachable(start, 60)
    missing = [name for name, term in states.items() if refsem.canonicalize(term).key not in seen]
    res = refsem.outcomes(start, 200)
    committed = refsem.Outcome([UNIT, UNIT, UNIT])
    elapsed = time.perf_counter() - t0
    ok = not missing and committed in res.outcomes and not res.truncated and elapsed < 5.0
    verdict(
        2,
        "nested k/l example reproduces intermediate states and the committed outcome",
        ok,
        f"missing={missing}, outcomes={len(res.outcomes)}, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------- criterion 3

ORACLE_FUEL = 400
ORACLE_CAP = 200_000
ORACLE_SECONDS = {}


@pytest.fixture(scope="module")
def oracle():
    t0 = time.perf_counter()
    out = {}
    for name, src in CORPUS.items():
        e = parse_expr(src)
        full = refsem.outcomes(e, ORACLE_FUEL, ORACLE_CAP)
        free = refsem.abortfree_outcomes(e, ORACLE_FUEL, ORACLE_CAP)
        out[name] = (e, full, free)
    ORACLE_SECONDS["search"] = time.perf_counter() - t0
    return out


def test_abortfree_completeness(verdict, oracle):
    t0 = time.perf_counter()
    bad = []
    for name, (_, full, free) in oracle.items():
        if full.truncated or free.truncated or full.outcomes != free.outcomes or not full.outcomes:
            bad.append(name)
    elapsed = ORACLE_SECONDS["search"] + time.perf_counter() - t0
    ok = len(oracle) >= 10 and not bad and elapsed < 60
    verdict(
        3,
        "abort-free outcomes equal all outcomes on the corpus",
        ok,
        f"{len(oracle)} programs, bad={bad}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------- criteria 4, 5

POLICIES = ("r", "s", "cd", "da")
BASE_RUNS = 1000
EXTENDED_RUNS = 5000


@pytest.fixture(scope="module")
def sweep(oracle):
    """Observed outcome counts per (program, policy), plus containment failures."""
    t0 = time.perf_counter()
    observed: dict[tuple[str, str], Counter] = {}
    runs: dict[tuple[str, str], int] = {}
    violations = []
    for name, (e, full, _) in oracle.items():
        for pol in POLICIES:
            seen: Counter = Counter()
            limit = BASE_RUNS if pol == "r" else EXTENDED_RUNS
            n = 0
            while n < limit:
                if n >= BASE_RUNS and (len(full.outcomes) > 3 or set(seen) >= full.outcomes):
                    break
                res = run_program(e, pol, RunConfig(seed=n, max_ms=60_000.0))
                if res.outcome is None or res.outcome not in full.outcomes:
                    violations.append((name, pol, n, res.outcome))
                else:
                    seen[res.outcome] += 1
                n += 1
            observed[name, pol] = seen
            runs[name, pol] = n
    return observed, runs, violations, time.perf_counter() - t0


def test_oracle_containment(verdict, sweep):
    observed, runs, violations, elapsed = sweep
    base_ok = all(n >= BASE_RUNS for n in runs.values())
    ok = not violations and base_ok and elapsed < 300
    verdict(
        4,
        "runtime outcomes are contained in the oracle's",
        ok,
        f"{len(runs)} program/policy pairs, {sum(runs.values())} runs, violations={violations[:3]}, {elapsed:.0f}s",
    )


def test_outcome_coverage(verdict, oracle, sweep):
    observed, runs, _, _ = sweep
    unseen = []
    checked = 0
    for (name, pol), seen in observed.items():
        full = oracle[name][1].outcomes
        if len(full) > 3:
            continue
        checked += 1
        missing = full - set(seen)
        if missing:
            unseen.append((name, pol, runs[name, pol], sorted(o.key for o in missing)))
    verdict(5, "every outcome is observed under every policy", not unseen, f"{checked} pairs, unseen={unseen}")


# ---------------------------------------------------------------- criterion 6


def _undecided_snapshot() -> PolicySnapshot:
    # one transaction blocked on a receive, nothing to commit or embed
    root = NodeView(None, None, None, (), (), (), (1,), 0.0)
    k = NodeView(1, None, "k", (2,), (BlockedView(2, 5, RECV),), (), (), 0.0)
    return PolicySnapshot(1, 0.0, {None: root, 1: k})


def test_staged_abort_probability(verdict):
    cfg = PolicyConfig()
    stats = DecisionStats()
    rng = random.Random(20)
    snap = _undecided_snapshot()
    for _ in range(20_000):
        policy_staged(snap, cfg, rng, stats)
    runtime = run_program(build_3wr(3), "s", RunConfig(seed=3, max_ms=5_000.0)).decisions
    n_pol, n_rt = stats.runs + stats.aborts, runtime.runs + runtime.aborts
    ok = (
        n_pol >= 10_000
        and n_rt >= 10_000
        and abs(stats.abort_fraction - 0.05) <= 0.01
        and abs(runtime.abort_fraction - 0.05) <= 0.01
    )
    verdict(
        6,
        "staged abort fraction is 0.05 +- 0.01",
        ok,
        f"policy {stats.abort_fraction:.4f} over {n_pol}, runtime {runtime.abort_fraction:.4f} over {n_rt}",
    )


# ---------------------------------------------------------------- criteria 7, 8, 9

WINDOW_MS = 10_000.0
REPS = 3


@pytest.fixture(scope="module")
def bench_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("traces")
    plan = [("3wr", p) for p in POLICIES] + [("sno", p) for p in POLICIES] + [("3wr-ideal", "cd")]
    out = {}
    t0 = time.perf_counter()
    for bench, pol in plan:
        spec = BenchSpec(bench, processes=3, counts=(1, 1, 1, 1), duration_ms=WINDOW_MS, scheduler=pol, repetitions=REPS)
        paths = [str(d / f"{bench}-{pol}-{i}.ndjson") for i in range(REPS)]
        out[bench, pol] = (run_bench(spec, paths), paths)
    return out, time.perf_counter() - t0


def test_trace_invariants(verdict, bench_runs):
    runs, _ = bench_runs
    failures = []
    checked = 0
    for (bench, pol), (rep, paths) in runs.items():
        for path, ops in zip(paths, rep.ops):
            argv = ["trace-stats", path, "--scheduler", pol, "--json", path + ".stats.json"]
            if not bench.endswith("-ideal"):
                argv += ["--expect-ops", str(ops)]
            code = cli_main(argv)
            stats = json.loads(open(path + ".stats.json").read())
            checked += 1
            if code != 0:
                failures.append((bench, pol, path.rsplit("-", 1)[-1], [v["check"] for v in stats["violations"]][:3]))
    verdict(7, "trace-stats finds no policy violation in benchmark traces", not failures, f"{checked} traces, failures={failures}")


def test_scheduler_ordering(verdict, bench_runs):
    runs, elapsed = bench_runs
    m = {key: rep.mean_ops_per_second for key, (rep, _) in runs.items()}
    r, s, cd = m["3wr", "r"], m["3wr", "s"], m["3wr", "cd"]
    ok = r < s < cd and cd >= 2 * r and m["sno", "cd"] > m["sno", "r"] and elapsed < 600
    verdict(
        8,
        "throughput ordering R < S < CD on 3WR and CD > R on SNO",
        ok,
        f"3wr r={r:.2f} s={s:.2f} cd={cd:.2f}; sno r={m['sno', 'r']:.2f} cd={m['sno', 'cd']:.2f} ops/s; {elapsed:.0f}s",
    )


def test_ideal_gap(verdict, bench_runs):
    runs, _ = bench_runs
    best = max(rep.mean_ops_per_second for (b, _), (rep, _) in runs.items() if b == "3wr")
    ideal = runs["3wr-ideal", "cd"][0].mean_ops_per_second
    verdict(9, "3wr-ideal is at least 10x the best transactional policy", ideal >= 10 * best, f"ideal={ideal:.1f} best={best:.2f} ops/s")


# ---------------------------------------------------------------- criterion 10


def _determinism_cases():
    cases = [(parse_expr(src), POLICIES[i % 4], 100 + i) for i, src in enumerate(CORPUS.values())]
    bench = [build_3wr(3, loop=False), build_sno((1, 1, 1, 1), loop=False), build_3wr(4), build_sno((1, 1, 0, 1))]
    cases += [(e, pol, 7 + i) for i, (e, pol) in enumerate(zip(bench * 2, ("r", "s", "cd", "da", "da", "cd", "s", "r")))]
    return cases[:20]


def test_deterministic_traces(verdict):
    t0 = time.perf_counter()
    differing = []
    cases = _determinism_cases()
    for i, (e, pol, seed) in enumerate(cases):
        texts = []
        for _ in range(2):
            buf = io.StringIO()
            run_program(e, pol, RunConfig(seed=seed, max_ms=300.0, trace=buf))
            texts.append(buf.getvalue().encode())
        if texts[0] != texts[1] or not texts[0]:
            differing.append(i)
    elapsed = time.perf_counter() - t0
    ok = len(cases) == 20 and not differing and elapsed < 60
    verdict(10, "identical seeds give byte-identical traces", ok, f"{len(cases)} pairs, differing={differing}, {elapsed:.1f}s")
