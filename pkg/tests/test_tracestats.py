import copy

import pytest

from tcml.bench import build_3wr, build_sno
from tcml.runtime import RunConfig, run_program
from tcml.tracestats import analyze


def events_of(prog, pol, seed=3, ms=1500):
    return run_program(prog, pol, RunConfig(seed=seed, max_ms=ms, keep_trace=True)).events


@pytest.fixture(scope="module")
def traces():
    return {pol: events_of(build_3wr(3), pol) for pol in ("r", "s", "cd", "da")}


def checks(stats):
    return {v.check for v in stats.violations}


def ev(seq, kind, thread, txn, path, ms=0.0, **extra):
    return {"seq": seq, "wallNanos": int(ms * 1e6), "kind": kind, "thread": thread, "txn": txn, "path": path, "extra": extra}


def test_clean_runs_pass(traces):
    for pol, events in traces.items():
        stats = analyze(events, pol)
        assert stats.ok, stats.violations[:3]
        assert stats.events == len(events)
    stats = analyze(events_of(build_sno((1, 1, 1, 1)), "da"), "da")
    assert stats.ok


def test_top_commits_match_run_ops():
    res = run_program(build_3wr(3), "cd", RunConfig(seed=4, max_ms=3000, keep_trace=True))
    assert res.ops > 0 and analyze(res.events, "cd").ops() == res.ops


def test_missing_co_token_is_caught(traces):
    events = [e for e in traces["cd"] if e["kind"] != "co"]
    assert "commit_order" in checks(analyze(events, "cd"))


def test_commit_before_inner_resolution_is_caught():
    base = [
        ev(1, "spawn", 0, None, [], parent=None),
        ev(2, "txn_start", 0, 0, [0], name="k"),
        ev(3, "txn_start", 0, 1, [0, 1], name="l"),
        ev(4, "co", 0, 0, [0, 1], **{"for": 0}),
    ]
    early = base + [ev(5, "commit", None, 0, [0], name="k", top=True, threads=[])]
    assert "commit_order" in checks(analyze(early))
    late = base + [
        ev(5, "co", 0, 1, [0, 1], **{"for": 1}),
        ev(6, "commit", None, 1, [0, 1], name="l", top=False, threads=[0]),
        ev(7, "commit", None, 0, [0], name="k", top=True, threads=[0]),
    ]
    stats = analyze(late)
    assert stats.ok and stats.ops() == 1


def test_unjustified_embeds_are_caught(traces):
    events = copy.deepcopy(traces["cd"])
    embeds = [e for e in events if e["kind"] == "embed"]
    assert embeds
    del embeds[0]["extra"]["justification"]
    assert "embed_unjustified" in checks(analyze(events, "cd"))
    assert analyze(events, "s").ok

    events = copy.deepcopy(traces["cd"])
    j = next(e for e in events if e["kind"] == "embed")["extra"]["justification"]
    j["partner"] = j["thread"]
    assert "embed_unjustified" in checks(analyze(events, "cd"))


def test_staged_embeds_fail_the_communication_check(traces):
    # staged embeds carry no justification at all
    assert "embed_unjustified" in checks(analyze(traces["s"], "cd"))


def test_early_abort_is_caught(traces):
    assert "abort_early" in checks(analyze(traces["s"], "da"))
    start = [ev(1, "spawn", 0, None, []), ev(2, "txn_start", 0, 0, [0], name="k")]
    abort = dict(name="k", rolled_back=[0], killed=[], restored=[])
    assert not analyze(start + [ev(3, "abort", None, 0, [0], 10.0, **abort)], "da").ok
    assert analyze(start + [ev(3, "abort", None, 0, [0], 60.0, **abort)], "da").ok
    assert analyze(start + [ev(3, "abort", None, 0, [0], 10.0, **abort)], "da", da_timeout_ms=5).ok


def test_wrong_path_is_caught(traces):
    events = copy.deepcopy(traces["cd"])
    victim = next(e for e in events if e["kind"] == "block" and e["path"])
    victim["path"] = victim["path"] + [999]
    assert "path_mismatch" in checks(analyze(events, "cd"))
