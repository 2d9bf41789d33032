from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmcrdt.lattice import GSet, canonical_json, decode
from calmcrdt.simnet import (
    OpInject,
    QueryInject,
    ScenarioError,
    SimConfig,
    Simulation,
    SimulationError,
    Trace,
    run,
)
from workloads import MIXED_SCHEMA, mixed_workload

CART = {"cart": "2pset"}
CONTENTS = {"query": "contents", "key": "cart"}


def final_texts(trace: Trace) -> list[str]:
    return [canonical_json(s) for s in trace.of("final_states")[0]["states"]]


def test_trace_shape():
    tr = run(SimConfig(seed=0), [OpInject(0, 0, "cart", "twopset_add", ("x",))], CART)
    kinds = [r["rec"] for r in tr.records]
    assert kinds[0] == "header" and kinds[-1] == "final_states"
    assert tr.header["schema"] == CART and tr.header["config"]["seed"] == 0
    inj = tr.of("op_injected")[0]
    assert inj["id"] == [0, 1] and inj["key"] == "cart" and inj["session"] == "r0"
    assert {r["replica"] for r in tr.of("op_visible")} == {1, 2}


def test_message_records_carry_sizes():
    tr = run(SimConfig(seed=0), [OpInject(0, 0, "cart", "twopset_add", ("x",))], CART)
    for m in tr.of("msg_sent"):
        assert m["bytes"] > 0 and m["kind"] in {"gossip", "push", "ack", "read_req", "read_resp"}


@pytest.mark.parametrize("mode", ["full", "delta"])
@pytest.mark.parametrize("seed", range(5))
def test_converges_under_faults(mode, seed):
    cfg = SimConfig(seed=seed, p_dup=0.5, p_drop=0.3, gossip_mode=mode)
    tr = run(cfg, mixed_workload(seed), MIXED_SCHEMA)
    texts = final_texts(tr)
    assert len(set(texts)) == 1


@pytest.mark.parametrize("seed", range(3))
def test_modes_agree_on_final_state(seed):
    a = run(SimConfig(seed=seed, p_drop=0.2, gossip_mode="full"), mixed_workload(seed), MIXED_SCHEMA)
    b = run(SimConfig(seed=seed, p_drop=0.2, gossip_mode="delta"), mixed_workload(seed), MIXED_SCHEMA)
    assert final_texts(a) == final_texts(b)


def test_same_seed_same_bytes():
    cfg = SimConfig(seed=7, p_dup=0.3, p_drop=0.2)
    assert run(cfg, mixed_workload(7), MIXED_SCHEMA).to_bytes() == run(cfg, mixed_workload(7), MIXED_SCHEMA).to_bytes()


def test_different_seed_different_schedule():
    a = run(SimConfig(seed=1, p_drop=0.2), mixed_workload(0), MIXED_SCHEMA)
    b = run(SimConfig(seed=2, p_drop=0.2), mixed_workload(0), MIXED_SCHEMA)
    assert a.to_bytes() != b.to_bytes()
    assert final_texts(a) == final_texts(b)


def test_trace_jsonl_round_trip(tmp_path):
    tr = run(SimConfig(seed=3), mixed_workload(3, n_ops=10), MIXED_SCHEMA)
    path = tmp_path / "t.jsonl"
    tr.write(path)
    assert Trace.read(path).to_bytes() == tr.to_bytes()


def test_threshold_answers_never_retract():
    ops = [OpInject(i, i % 3, "tags", "gset_add", (f"t{i}",)) for i in range(6)]
    qs = [QueryInject(t, t % 3, {"query": "cardinality_gt(3)", "key": "tags"}) for t in range(0, 40, 3)]
    tr = run(SimConfig(seed=4, p_drop=0.3), ops + qs, {"tags": "gset"})
    by_replica: dict[int, list[str]] = {}
    issued = {r["qid"]: r for r in tr.of("query_issued")}
    for a in tr.of("query_answered"):
        by_replica.setdefault(issued[a["qid"]]["replica"], []).append(a["outcome"])
    for outcomes in by_replica.values():
        assert set(outcomes) <= {"ready", "unknown"}
        if "ready" in outcomes:
            assert "unknown" not in outcomes[outcomes.index("ready") :]


def test_coordinated_read_sees_acknowledged_writes_in_session():
    ops = [
        OpInject(0, 0, "cart", "twopset_add", ("potato",), session="s"),
        OpInject(0, 0, "cart", "twopset_add", ("ferrari",), session="s"),
        OpInject(0, 0, "cart", "twopset_remove", ("ferrari",), session="s"),
        QueryInject(0, 1, CONTENTS, session="s"),
    ]
    tr = run(SimConfig(seed=0, p_dup=0.2), ops, CART, "write_one", "read_all")
    ans = tr.of("query_answered")[0]
    assert ans["outcome"] == "value"
    assert decode(ans["value"]) == GSet(["potato"])


def test_local_lower_bound_plan():
    ops = [OpInject(0, 0, "cart", "twopset_add", ("x",))]
    q = QueryInject(1, 0, {"dsl": "cart.adds"}, stale_tolerant=True)
    tr = run(SimConfig(seed=0), ops + [q], CART)
    assert tr.of("query_issued")[0]["plan"] == "LocalLowerBound"
    assert tr.of("query_answered")[0]["outcome"] == "lower_bound"


def test_read_unavailable_when_all_messages_dropped():
    cfg = SimConfig(seed=0, p_drop=0.99, coord_timeout=5)
    tr = run(cfg, [QueryInject(0, 0, CONTENTS)], CART, "write_one", "read_all")
    assert tr.of("query_answered")[0]["outcome"] == "unavailable"


def test_write_ack_times_out():
    cfg = SimConfig(seed=0, p_drop=0.99, coord_timeout=5)
    tr = run(cfg, [OpInject(0, 0, "cart", "twopset_add", ("x",), write="write_all")], CART)
    assert tr.of("op_ack")[0]["ok"] is False


def test_write_all_ack_lists_every_holder():
    tr = run(SimConfig(seed=0), [OpInject(0, 1, "cart", "twopset_add", ("x",), write="write_all")], CART)
    ack = tr.of("op_ack")[0]
    assert ack["ok"] and sorted(ack["holders"]) == [0, 1, 2]


def test_sessions_run_sequentially():
    ops = [OpInject(0, 0, "cart", "twopset_add", (str(i),), session="s", write="write_all") for i in range(3)]
    tr = run(SimConfig(seed=0, latency_min=3, latency_max=3), ops, CART)
    times = [r["t"] for r in tr.of("op_injected")]
    assert times == sorted(times) and len(set(times)) == 3


@pytest.mark.parametrize(
    "workload, schema",
    [
        ([OpInject(0, 5, "cart", "twopset_add", ("x",))], CART),
        ([OpInject(0, 0, "nope", "gset_add", ("x",))], CART),
        ([QueryInject(0, 0, {"query": "contents", "key": "nope"})], CART),
        ([QueryInject(0, 0, {"dsl": "COUNT(cart"})], CART),
        ([OpInject(0, 0, "cart", "twopset_add", ("x",), write="write_quorum:9")], CART),
        ([QueryInject(0, 0, CONTENTS, plan="Psychic")], CART),
    ],
)
def test_bad_workloads_rejected(workload, schema):
    with pytest.raises(ScenarioError):
        Simulation(SimConfig(), schema, workload)


@pytest.mark.parametrize(
    "cfg",
    [SimConfig(p_drop=1.0), SimConfig(p_dup=-0.1), SimConfig(gossip_mode="carrier"), SimConfig(latency_min=4, latency_max=2)],
)
def test_bad_configs_rejected(cfg):
    with pytest.raises(ScenarioError):
        cfg.validate()


def test_max_ticks_bound():
    with pytest.raises((SimulationError, ScenarioError)):
        run(SimConfig(max_ticks=5, p_drop=0.9), [OpInject(5, 0, "cart", "twopset_add", ("x",))], CART)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 10_000),
    st.sampled_from(["full", "delta"]),
    st.floats(0, 0.6),
    st.floats(0, 0.6),
    st.booleans(),
)
def test_random_configs_converge(seed, mode, p_drop, p_dup, prune):
    cfg = SimConfig(seed=seed, gossip_mode=mode, p_drop=p_drop, p_dup=p_dup, prune=prune)
    tr = run(cfg, mixed_workload(seed, n_ops=20), MIXED_SCHEMA)
    assert len(set(final_texts(tr))) == 1
