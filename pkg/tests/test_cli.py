import json
import subprocess
import sys
from pathlib import Path

from tcml.bench import build_3wr
from tcml.cli import main
from tcml.parser import parse_expr

ROOT = Path(__file__).resolve().parent.parent
PROGRAMS = ROOT / "programs"


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", str(PROGRAMS / "sno.tcml")]) == 0
    assert "unit" in capsys.readouterr().out
    bad_type = tmp_path / "bad.tcml"
    bad_type.write_text("1 + true")
    assert main(["check", str(bad_type)]) == 1
    bad_syntax = tmp_path / "syntax.tcml"
    bad_syntax.write_text("let x = in x")
    assert main(["check", str(bad_syntax)]) == 1
    assert main(["check", str(tmp_path / "missing.tcml")]) == 2
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_oracle_matches_golden(tmp_path):
    out = tmp_path / "oracle.json"
    assert main(["oracle", str(PROGRAMS / "nested.tcml"), "--fuel", "200", "--json", str(out)]) == 0
    assert json.loads(out.read_text()) == json.loads((PROGRAMS / "nested.oracle.json").read_text())


def test_run_reports_outcome(tmp_path):
    out = tmp_path / "run.json"
    trace = tmp_path / "run.ndjson"
    argv = ["run", str(PROGRAMS / "rendezvous.tcml"), "--deterministic", "--seed", "3"]
    assert main(argv + ["--json", str(out), "--trace", str(trace)]) == 0
    report = json.loads(out.read_text())
    assert report["quiescent"] and sorted(report["outcome"]["values"]) == ["1", "2", "3"]
    assert main(["trace-stats", str(trace), "--json", str(tmp_path / "s.json")]) == 0


def test_bench_report(tmp_path):
    out = tmp_path / "bench.json"
    src = tmp_path / "3wr.tcml"
    argv = ["bench", "--benchmark", "3wr", "-n", "3", "--scheduler", "cd", "--seed", "7", "--duration-ms", "5000"]
    assert main(argv + ["--json", str(out), "--emit-source", str(src)]) == 0
    rep = json.loads(out.read_text())
    assert rep["benchmark"] == "3wr" and rep["scheduler"] == "cd" and rep["window_ms"] == 5000
    assert rep["ops_per_second"] == [rep["ops"][0] / 5.0] and rep["ops"][0] > 0
    assert parse_expr(src.read_text()) == build_3wr(3)


def test_bench_usage_errors():
    assert main(["bench", "--benchmark", "3wr", "--duration-ms", "0"]) == 2
    assert main(["bench", "--benchmark", "3wr", "-n", "2"]) == 2
    assert main(["bench", "--benchmark", "sno", "--counts", "1,1"]) == 2
    assert main(["bench", "--benchmark", "3wr", "--run-prob", "0.5", "--abort-prob", "0.1"]) == 2
    assert main(["bench", "--benchmark", "3wr", "--scheduler", "fifo"]) == 2


def test_trace_stats_flags_violations(tmp_path):
    d = tmp_path / "traces"
    argv = ["bench", "--benchmark", "3wr", "--scheduler", "s", "--duration-ms", "1000", "--trace-dir", str(d)]
    assert main(argv + ["--json", str(tmp_path / "b.json")]) == 0
    ops = json.loads((tmp_path / "b.json").read_text())["ops"][0]
    (trace,) = d.iterdir()
    out = str(tmp_path / "stats.json")
    assert main(["trace-stats", str(trace), "--scheduler", "s", "--expect-ops", str(ops), "--json", out]) == 0
    assert main(["trace-stats", str(trace), "--scheduler", "s", "--expect-ops", str(ops + 1), "--json", out]) == 1
    # staged embeds are unjustified under the communication-driven check
    assert main(["trace-stats", str(trace), "--scheduler", "cd", "--json", out]) == 1
    assert json.loads(Path(out).read_text())["violations"]


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tcml.cli", "check", str(PROGRAMS / "rendezvous.tcml")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and "int" in proc.stdout
