from __future__ import annotations

import pytest

from calmcrdt.scenario import (
    BUNDLED,
    Expectation,
    MonotoneViolation,
    SweepError,
    bundled_path,
    load_scenario,
    metrics,
    parse_scenario,
    run_scenario,
    sweep,
)
from calmcrdt.simnet import OpInject, QueryInject, ScenarioError, Trace

SMALL = """
# a two-op cart
{"kind": "config", "n_replicas": 2, "p_drop": 0.1}
{"kind": "key", "name": "cart", "type": "2pset"}
{"kind": "policy", "write": "write_one", "read": "read_all"}
{"kind": "expect", "convergence": true, "monotone_violations": 0, "anomalies": 0}
{"kind": "op", "t": 0, "replica": 0, "key": "cart", "op": "twopset_add", "args": ["potato"], "session": "s"}
{"kind": "op", "t": 1, "replica": 1, "key": "cart", "op": "twopset_remove", "args": ["potato"]}
{"kind": "query", "t": 6, "replica": 1, "query": {"query": "contents", "key": "cart"}, "session": "s"}
{"kind": "query", "t": 7, "replica": 0, "query": "COUNT(cart.adds) > 0"}
"""


def test_parse_small_scenario():
    sc = parse_scenario(SMALL, "small")
    assert sc.config.n_replicas == 2 and sc.config.p_drop == 0.1
    assert sc.schema == {"cart": "2pset"}
    assert sc.expect == Expectation(True, 0, 0)
    assert isinstance(sc.workload[0], OpInject) and sc.workload[0].session == "s"
    assert isinstance(sc.workload[3], QueryInject) and sc.workload[3].query == {"dsl": "COUNT(cart.adds) > 0"}


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("{not json", "line 2: not JSON"),
        ('{"kind": "teleport"}', "unknown kind"),
        ('{"kind": "config", "warp": 9}', "unknown config field"),
        ('{"kind": "op", "t": 0, "replica": 0, "key": "cart"}', "line 2.op: missing"),
        ('{"kind": "op", "t": 0, "replica": 0, "key": "cart", "op": "twopset_add", "colour": 1}', "unknown op field"),
        ('{"kind": "op", "t": 0, "replica": 7, "key": "cart", "op": "twopset_add"}', "unknown replica"),
        ('{"kind": "query", "t": 0, "replica": 0, "query": "EXCEPT(cart.adds"}', "workload[0]"),
        ('{"kind": "expect", "anomalies": "lots"}', "anomalies"),
        ('{"kind": "policy", "write": "write_quorum:9"}', "write_quorum:9"),
    ],
)
def test_parse_errors_are_located(line, fragment):
    text = '{"kind": "key", "name": "cart", "type": "2pset"}\n' + line
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert fragment in str(err.value)


def test_expectation_forms():
    assert Expectation(anomalies=">=1").anomalies_ok(3)
    assert not Expectation(anomalies=">=1").anomalies_ok(0)
    assert Expectation(anomalies=0).anomalies_ok(0)
    assert Expectation().anomalies_ok(99)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    assert bundled_path(name).exists()
    sc = load_scenario(name)
    assert sc.name == name and sc.workload


def test_overrides():
    sc = load_scenario("potato_ferrari").with_overrides({"seed": 4, "gossip_mode": "full", "read": "read_all"})
    assert sc.config.seed == 4 and sc.config.gossip_mode == "full" and sc.read == "read_all"
    assert all(getattr(e, "read", None) is None for e in sc.workload)
    with pytest.raises(ScenarioError):
        sc.with_overrides({"speed": 11})


def test_run_scenario_writes_trace_and_metrics(tmp_path):
    path = tmp_path / "small.scn"
    path.write_text(SMALL)
    out = tmp_path / "traces" / "t.jsonl"
    trace, rep = run_scenario(str(path), {"seed": 2}, out)
    assert Trace.read(out).to_bytes() == trace.to_bytes()
    assert rep.scenario == "small" and rep.seed == 2 and rep.convergence
    assert rep.total_bytes == sum(rep.bytes_by_kind.values())
    assert sum(rep.round_bytes) == rep.total_bytes
    assert rep.query_counts["value"] == 1 and rep.query_counts["ready"] + rep.query_counts["unknown"] == 1
    assert "final_states" not in rep.to_dict()


def test_metrics_staleness_counts_every_visible_op():
    trace, rep = run_scenario("bulk", {"seed": 0})
    assert sum(rep.staleness.values()) == len(trace.of("op_visible"))
    assert all(k >= 0 for k in rep.staleness)
    assert metrics(trace).to_dict() == rep.to_dict()


def test_sweep_reports_and_matches_expectation():
    rep = sweep("potato_ferrari", 5)
    assert rep.seeds == 5 and len(rep.reports) == 5 and rep.all_converged
    d = rep.to_dict()
    assert d["anomalies"]["min"] <= d["anomalies"]["mean"] <= d["anomalies"]["max"]
    safe = sweep("potato_ferrari", 5, {"read": "read_all"})
    assert safe.anomalies == 0 and safe.matches(Expectation(anomalies=0))


def test_sweep_rejects_bad_arguments():
    with pytest.raises(ValueError):
        sweep("potato_ferrari", 0)
    with pytest.raises(SweepError):
        sweep("potato_ferrari", 1, {"max_ticks": 1})


def test_sweep_fails_fast_on_monotone_violation(monkeypatch):
    from calmcrdt import scenario as mod

    real = mod.metrics

    def rigged(trace, anomaly_bound=12):
        rep = real(trace, anomaly_bound)
        rep.monotone_violations = 1
        return rep

    monkeypatch.setattr(mod, "metrics", rigged)
    with pytest.raises(MonotoneViolation):
        sweep("threshold", 3)
