from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmcrdt.lattice import GSet, decode, to_text
from calmcrdt.polog import (
    CausalBuffer,
    CycleDetected,
    DuplicateOpId,
    LogNode,
    LogRecord,
    OpId,
    PoLog,
    UnknownPredecessor,
    all_topological_orders,
    causal_frontier,
    deliver,
    record,
    replay,
    topological_order,
)
from lattice_strategies import pologs

A, B, C = OpId(0, 1), OpId(1, 1), OpId(0, 2)


def chain() -> PoLog:
    log = record(PoLog(), "twopset_add", ["potato"], [], A)
    log = record(log, "twopset_add", ["ferrari"], [A], B)
    return record(log, "twopset_remove", ["ferrari"], [B], C)


def test_record_adds_node_and_edges():
    log = chain()
    assert log.ids() == {A, B, C}
    assert (A, B) in log.edges and (B, C) in log.edges
    assert causal_frontier(log) == {C}


def test_record_rejects_duplicates_and_unknown_predecessors():
    log = chain()
    with pytest.raises(DuplicateOpId):
        record(log, "gset_add", ["x"], [], A)
    with pytest.raises(UnknownPredecessor):
        record(log, "gset_add", ["x"], [OpId(9, 9)], OpId(2, 1))


def test_merge_is_union_of_nodes_and_edges():
    left = record(PoLog(), "gset_add", ["a"], [], A)
    right = record(PoLog(), "gset_add", ["b"], [], B)
    both = left.merge(right)
    assert both.ids() == {A, B}
    assert causal_frontier(both) == {A, B}
    assert left.leq(both) and not both.leq(left)


def test_replay_chain_yields_final_cart():
    cart = replay(chain(), "2pset")
    assert cart.contents() == GSet(["potato"])


def test_replay_concurrent_counter_increments():
    log = record(PoLog(), "counter_inc", [0, 2], [], A)
    log = record(log, "counter_inc", [1, 3], [], B)
    log = record(log, "counter_inc", [0, 1], [A], C)
    assert replay(log, "gcounter").total() == 6


def test_topological_order_breaks_ties_by_id():
    log = PoLog([LogNode.make(B, "gset_add", ["b"]), LogNode.make(A, "gset_add", ["a"])])
    assert [n.id for n in topological_order(log)] == [A, B]


def test_cycle_detected():
    nodes = [LogNode.make(A, "gset_add", ["a"]), LogNode.make(B, "gset_add", ["b"])]
    with pytest.raises(CycleDetected):
        topological_order(PoLog(nodes, [(A, B), (B, A)]))


def test_dangling_edge_rejected_on_replay():
    log = PoLog([LogNode.make(B, "gset_add", ["b"])], [(A, B)])
    with pytest.raises(UnknownPredecessor):
        topological_order(log)


def test_all_topological_orders_counts_linear_extensions():
    nodes = [LogNode.make(i, "gset_add", [str(i)]) for i in (A, B, C)]
    assert len(list(all_topological_orders(PoLog(nodes)))) == 6
    assert len(list(all_topological_orders(PoLog(nodes, [(A, C)])))) == 3


def test_deliver_buffers_until_predecessors_arrive():
    r1 = LogRecord.make(A, "gset_add", ["a"])
    r2 = LogRecord.make(B, "gset_add", ["b"], [A])
    r3 = LogRecord.make(C, "gset_add", ["c"], [B])
    buf, log = deliver(CausalBuffer(), PoLog(), r3)
    buf, log = deliver(buf, log, r2)
    assert len(log) == 0 and len(buf.pending) == 2
    buf, log = deliver(buf, log, r1)
    assert log.ids() == {A, B, C} and not buf.pending


def test_deliver_ignores_duplicates():
    r1 = LogRecord.make(A, "gset_add", ["a"])
    buf, log = deliver(CausalBuffer(), PoLog(), r1)
    buf2, log2 = deliver(buf, log, r1)
    assert log2 == log and buf2 == buf


def test_encoding_round_trip():
    log = chain()
    assert decode(log.encode()) == log
    assert to_text(decode(log.encode())) == to_text(log)


@settings(max_examples=80, deadline=None)
@given(pologs())
def test_every_order_replays_to_same_value_for_gset(log):
    results = {to_text(replay(PoLog(log.nodes, edges=[]), "gset"))}
    for order in itertools.islice(all_topological_orders(log), 30):
        state = GSet()
        for n in order:
            state = state.merge(GSet([n.args[0]]))
        results.add(to_text(state))
    assert len(results) == 1


@settings(max_examples=80, deadline=None)
@given(pologs(), st.randoms(use_true_random=False))
def test_causal_delivery_any_arrival_order(log, rnd):
    preds = {n.id: set() for n in log.nodes}
    for a, b in log.edges:
        preds[b].add(a)
    recs = [LogRecord(n, frozenset(preds[n.id])) for n in log.nodes]
    rnd.shuffle(recs)
    buf, out = CausalBuffer(), PoLog()
    for r in recs:
        buf, out = deliver(buf, out, r)
    assert out == log
    assert not buf.pending
