"""Command-line entry point.

Exit status: 0 on success, 1 when the program or trace is at fault (parse
or type error, runtime failure, invariant violation), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import refsem
from .bench import BENCHMARKS, ROLES, BenchSpec, build_benchmark, run_bench
from .parser import parse_expr, pretty_print
from .runtime import RunConfig, run_program
from .schedulers import Policy, PolicyConfig
from .syntax import TCMLError
from .tracestats import analyze_file
from .typecheck import typecheck_expr


class UsageError(Exception):
    pass


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    e = parse_expr(text)
    typecheck_expr(None, e)
    return e


def _policy_config(args) -> PolicyConfig:
    run_p = args.run_prob if args.run_prob is not None else 1.0 - args.abort_prob
    try:
        return PolicyConfig(run_p, args.abort_prob, args.da_timeout_ms, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_check(args) -> int:
    e = _load(args.file)
    print(f"{args.file}: {typecheck_expr(None, e)}")
    return 0


def cmd_run(args) -> int:
    e = _load(args.file)
    trace = open(args.trace, "w") if args.trace else None
    try:
        cfg = RunConfig(
            deterministic=args.deterministic,
            seed=args.seed,
            max_ms=args.max_ms,
            trace=trace,
            policy=_policy_config(args),
        )
        res = run_program(e, args.scheduler, cfg)
    finally:
        if trace is not None:
            trace.close()
    report = {
        "quiescent": res.quiescent,
        "timed_out": res.timed_out,
        "elapsed_ms": round(res.elapsed_ms, 3),
        "outcome": res.outcome.to_json() if res.outcome is not None else None,
        "metrics": dict(sorted(res.metrics.items())),
    }
    _dump(report, args.json)
    return 0


def cmd_oracle(args) -> int:
    e = _load(args.file)
    search = refsem.abortfree_outcomes if args.abort_free else refsem.outcomes
    _dump(search(e, args.fuel, max_states=args.max_states).to_json(), args.json)
    return 0


def _parse_counts(text: str) -> tuple[int, ...]:
    parts = text.split(",")
    if len(parts) != len(ROLES):
        raise argparse.ArgumentTypeError("expected four comma-separated counts (alice,bob,carol,david)")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def cmd_bench(args) -> int:
    if args.emit_source:
        try:
            prog = build_benchmark(args.benchmark, args.n, args.counts)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        Path(args.emit_source).write_text(pretty_print(prog) + "\n")
    try:
        spec = BenchSpec(
            args.benchmark,
            processes=args.n,
            counts=args.counts,
            duration_ms=args.duration_ms,
            scheduler=args.scheduler,
            seed=args.seed,
            repetitions=args.repetitions,
            deterministic=not args.wall_clock,
            policy=_policy_config(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    traces = None
    if args.trace_dir:
        d = Path(args.trace_dir)
        d.mkdir(parents=True, exist_ok=True)
        traces = [str(d / f"{spec.benchmark}-{spec.scheduler}-{spec.seed + i}.ndjson") for i in range(spec.repetitions)]
    rep = run_bench(spec, traces)
    if args.json:
        _dump(rep.to_json(), args.json)
    rows = [
        ("benchmark", rep.benchmark),
        ("scheduler", rep.scheduler),
        ("window", f"{rep.window_ms:g} ms x {len(rep.ops)}"),
        ("ops", " ".join(map(str, rep.ops))),
        ("mean ops/s", f"{rep.mean_ops_per_second:.3f}"),
        ("commits", rep.commits),
        ("embeds", rep.embeds),
        ("aborts", rep.aborts),
        ("stale drops", rep.stale_drops),
    ]
    for label, value in rows:
        print(f"{label:<12} {value}")
    return 0


def cmd_trace_stats(args) -> int:
    try:
        with open(args.file) as fh:
            stats = analyze_file(fh, args.scheduler, args.da_timeout_ms)
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror}") from exc
    out = stats.to_json()
    if args.expect_ops is not None:
        out["ops"] = stats.ops(args.op_names)
        if out["ops"] != args.expect_ops:
            out["ok"] = False
    _dump(out, args.json)
    return 0 if out["ok"] else 1


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheduler", choices=Policy.NAMES, default="r")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-prob", type=float, default=None)
    p.add_argument("--abort-prob", type=float, default=0.05)
    p.add_argument("--da-timeout-ms", type=float, default=50.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tcml", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and typecheck a program")
    p.add_argument("file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="execute a program on the runtime")
    p.add_argument("file")
    _add_policy_flags(p)
    p.add_argument("--max-ms", type=float, default=10_000.0)
    p.add_argument("--deterministic", action="store_true", help="virtual time, single OS thread")
    p.add_argument("--trace")
    p.add_argument("--json", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="enumerate outcomes with the reference semantics")
    p.add_argument("file")
    p.add_argument("--fuel", type=int, default=200)
    p.add_argument("--max-states", type=int, default=None)
    p.add_argument("--abort-free", action="store_true")
    p.add_argument("--json")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="measure throughput of a benchmark program")
    p.add_argument("--benchmark", choices=BENCHMARKS, required=True)
    p.add_argument("-n", type=int, default=3, help="3WR process count")
    p.add_argument("--counts", type=_parse_counts, default=(1, 1, 1, 1), help="SNO alice,bob,carol,david")
    _add_policy_flags(p)
    p.set_defaults(scheduler="cd")
    p.add_argument("--duration-ms", type=float, default=10_000.0)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--wall-clock", action="store_true", help="concurrent engine instead of virtual time")
    p.add_argument("--trace-dir")
    p.add_argument("--json")
    p.add_argument("--emit-source")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace-stats", help="check policy invariants over a trace")
    p.add_argument("file")
    p.add_argument("--scheduler", choices=Policy.NAMES, default="r")
    p.add_argument("--da-timeout-ms", type=float, default=50.0)
    p.add_argument("--expect-ops", type=int, default=None)
    p.add_argument("--op-names", nargs="+", default=["k"])
    p.add_argument("--json")
    p.set_defaults(func=cmd_trace_stats)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tcml: {exc}", file=sys.stderr)
        return 2
    except TCMLError as exc:
        print(f"tcml: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
