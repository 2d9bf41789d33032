from __future__ import annotations

import json
import subprocess
import sys

import pytest

from calmcrdt.cli import EXIT_NONMONOTONE, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from calmcrdt.simnet import Trace
from dsl_corpus import CART_CONTENTS, EXAMPLE_2


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_classify_monotone(capsys):
    code, out, _ = run_cli(capsys, "classify", EXAMPLE_2)
    assert code == EXIT_OK
    assert out == {"class": "Monotone", "witness": None, "plan": "LocalThreshold"}


def test_classify_nonmonotone(capsys):
    code, out, _ = run_cli(capsys, "classify", CART_CONTENTS)
    assert code == EXIT_NONMONOTONE
    assert out == {"class": "NonMonotone", "witness": "root", "plan": "Coordinated"}


def test_classify_strict_changes_plan(capsys):
    assert run_cli(capsys, "classify", "UNION(a, b)")[1]["plan"] == "LocalLowerBound"
    assert run_cli(capsys, "classify", "UNION(a, b)", "--strict")[1]["plan"] == "Coordinated"


def test_classify_syntax_error(capsys):
    code, out, err = run_cli(capsys, "classify", "COUNT(a")
    assert code == EXIT_USAGE and out is None
    assert "line 1, column 8" in err


def test_run_writes_trace(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("CALMCRDT_OUT", str(tmp_path))
    code, out, _ = run_cli(capsys, "run", "potato_ferrari", "--seed", "3")
    assert code == EXIT_OK
    assert out["trace"] == str(tmp_path / "potato_ferrari-seed3-delta.jsonl")
    assert out["seed"] == 3 and out["convergence"] is True
    assert Trace.read(out["trace"]).header["scenario"] == "potato_ferrari"


def test_run_explicit_trace_and_overrides(capsys, tmp_path):
    path = tmp_path / "x.jsonl"
    code, out, _ = run_cli(capsys, "run", "bulk", "--gossip", "full", "--no-prune", "--trace", str(path))
    assert code == EXIT_OK and out["gossip_mode"] == "full"
    cfg = Trace.read(path).header["config"]
    assert cfg["gossip_mode"] == "full" and cfg["prune"] is False


def test_sweep_reports_expectation(capsys):
    code, out, _ = run_cli(capsys, "sweep", "potato_ferrari", "--seeds", "3")
    assert code == EXIT_OK
    assert out["seeds"] == 3 and "matches_expected" in out


def test_sweep_with_strategy_override_has_no_expectation(capsys):
    code, out, _ = run_cli(capsys, "sweep", "potato_ferrari", "--seeds", "2", "--read", "read_all")
    assert code == EXIT_OK and "expected" not in out and out["anomalies_total"] == 0


def test_check_trace(capsys, tmp_path):
    path = tmp_path / "t.jsonl"
    run_cli(capsys, "run", "threshold", "--trace", str(path))
    code, out, _ = run_cli(capsys, "check", str(path))
    assert code == EXIT_OK
    assert out == {"convergence": True, "monotone_violations": 0, "anomalies": 0, "details": []}


def test_check_flags_divergence(capsys, tmp_path):
    path = tmp_path / "t.jsonl"
    run_cli(capsys, "run", "potato_ferrari", "--trace", str(path))
    tr = Trace.read(path)
    final = tr.records[-1]
    final["states"][1] = {"type": "map", "entries": {}}
    tr.write(path)
    code, out, _ = run_cli(capsys, "check", str(path))
    assert code == EXIT_VIOLATION and out["convergence"] is False


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "no_such_scenario"],
        ["check", "/nonexistent/trace.jsonl"],
        ["run", "potato_ferrari", "--write", "write_some"],
    ],
)
def test_errors_exit_1(capsys, argv):
    assert main(argv) == EXIT_USAGE


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["sweep", "bulk", "--seeds", "many"]])
def test_argument_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "calmcrdt", "classify", "COUNT(t) > 3"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["plan"] == "LocalThreshold"
