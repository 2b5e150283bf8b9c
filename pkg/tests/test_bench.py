from pathlib import Path

import pytest

from tcml.bench import (
    BenchSpec,
    build_3wr,
    build_3wr_ideal,
    build_sno,
    build_sno_ideal,
    run_bench,
)
from tcml.parser import parse_expr, pretty_print
from tcml.runtime import RunConfig, run_program
from tcml.syntax import Atomic, subterms
from tcml.tracestats import analyze_file

ROOT = Path(__file__).resolve().parent.parent


def test_sno_matches_participant_listing():
    listing = (ROOT / "programs" / "sno.tcml").read_text()
    assert build_sno((1, 1, 1, 1), loop=False) == parse_expr(listing.rstrip() + "; ()")


@pytest.mark.parametrize("counts", [(1, 1, 1, 1), (2, 1, 0, 1), (0, 3, 0, 2)])
def test_sno_spawns_requested_roles(counts):
    text = pretty_print(build_sno(counts))
    for role, n in zip(("alice", "bob", "carol", "david"), counts):
        assert text.count(f"spawn {role}") == n


def test_ideal_programs_have_no_transactions():
    for prog in (build_3wr_ideal(3), build_3wr_ideal(6), build_sno_ideal((1, 1, 1, 1))):
        assert not any(isinstance(e, Atomic) for e in subterms(prog))
    assert "carol" not in pretty_print(build_sno_ideal((1, 1, 1, 1)))


def test_3wr_has_one_restarting_process_per_count():
    for n in (3, 4, 7):
        assert sum(isinstance(e, Atomic) for e in subterms(build_3wr(n))) == n
        assert pretty_print(build_3wr(n)).count("spawn") == n


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(benchmark="3wr", duration_ms=0),
        dict(benchmark="3wr", processes=2),
        dict(benchmark="sno", counts=(0, 0, 0, 0)),
        dict(benchmark="sno", counts=(1, -1, 0, 0)),
        dict(benchmark="3wr", repetitions=0),
        dict(benchmark="tpcc"),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        BenchSpec(**kwargs)


def test_ops_equal_top_level_commits_in_traces(tmp_path):
    spec = BenchSpec("3wr", duration_ms=2000, scheduler="cd", seed=1, repetitions=2)
    paths = [str(tmp_path / f"t{i}.ndjson") for i in range(2)]
    rep = run_bench(spec, paths)
    assert rep.seeds == [1, 2]
    for ops, rate, path in zip(rep.ops, rep.ops_per_second, paths):
        with open(path) as fh:
            stats = analyze_file(fh, "cd")
        assert stats.ok and stats.ops() == ops
        assert rate == ops / 2.0
    assert rep.mean_ops_per_second == sum(rep.ops_per_second) / 2
    assert rep.commits >= sum(rep.ops)


@pytest.mark.parametrize("name", ["3wr-ideal", "sno-ideal"])
def test_ideal_runs_never_touch_transactions(tmp_path, name):
    path = str(tmp_path / "ideal.ndjson")
    rep = run_bench(BenchSpec(name, duration_ms=500, scheduler="s"), [path])
    with open(path) as fh:
        stats = analyze_file(fh)
    for kind in ("txn_start", "abort", "embed", "commit"):
        assert stats.kinds.get(kind, 0) == 0
    assert rep.ops[0] == stats.kinds["tick"] > 0


def test_zero_throughput_is_a_valid_report():
    rep = run_bench(BenchSpec("3wr", duration_ms=20, scheduler="r"))
    assert rep.ops == [0] and rep.mean_ops_per_second == 0.0


def test_forced_follower_values_are_exchanged():
    prog = build_3wr(3, loop=False, roles=["follower", "leader", "follower"])
    res = run_program(prog, "cd", RunConfig(seed=0))
    assert res.outcome is not None
    assert sorted(str(v) for v in res.results) == sorted(str(parse_expr(s)) for s in ("()", "4", "3", "1"))
