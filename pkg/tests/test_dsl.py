from __future__ import annotations

import pytest

from calmcrdt import dsl
from calmcrdt.coordination import READ_ONE
from calmcrdt.lattice import GSet, MapLattice, TwoPSet
from calmcrdt.query import UNKNOWN, LowerBound, Ready
from calmcrdt.replication import apply_local_op, make_replicas
from dsl_corpus import CART_CONTENTS, CONSERVATIVE, CORPUS, EXAMPLE_2, RATE_LIMITER


def gift(i, amount=150):
    return {"id": i, "type": "GIFTCARD", "amount": amount}


# --- parsing ---------------------------------------------------------------


def test_parse_example_2_tree():
    ast = dsl.parse(EXAMPLE_2)
    assert isinstance(ast, dsl.Compare) and ast.op == ">" and ast.value == 50
    flt = ast.expr.child
    assert isinstance(flt, dsl.Filter)
    assert flt.child == dsl.Source("txns", "")
    assert [(c.field, c.op, c.value) for c in flt.predicate] == [("type", "==", "GIFTCARD"), ("amount", ">", 100)]


def test_parse_components():
    ast = dsl.parse(CART_CONTENTS)
    assert ast == dsl.Except(dsl.Source("cart", "adds"), dsl.Source("cart", "removes"))


@pytest.mark.parametrize("query", [q for q, _, _ in CORPUS])
def test_to_text_round_trips(query):
    ast = dsl.parse(query)
    assert dsl.parse(dsl.to_text(ast)) == ast
    assert dsl.to_text(dsl.parse(dsl.to_text(ast))) == dsl.to_text(ast)


def test_keywords_are_case_insensitive():
    assert dsl.parse("count(txns) > 1") == dsl.parse("COUNT(txns) > 1")


@pytest.mark.parametrize(
    "text, line, col",
    [
        ("COUNT(txns", 1, 11),
        ("COUNT(txns) > ", 1, 15),
        ("FILTER(txns, amount @ 3)", 1, 21),
        ("UNION(a,\n  b c)", 2, 5),
        ("", 1, 1),
        ('COUNT(txns) > "many"', 1, 15),
    ],
)
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(dsl.DslSyntaxError) as err:
        dsl.parse(text)
    assert (err.value.line, err.value.column) == (line, col)


@pytest.mark.parametrize(
    "text",
    [
        "COUNT(COUNT(txns))",
        "PLUS(txns, txns)",
        "txns > 3",
        "COUNT(txns) != 3",
        "UNION(a, COUNT(b))",
        "cart.middle",
    ],
)
def test_type_errors(text):
    with pytest.raises(dsl.DslTypeError):
        dsl.parse(text)


def test_schema_checks():
    schema = {"cart": "2pset", "txns": "gset", "hits": "gcounter"}
    dsl.parse(CART_CONTENTS, schema)
    with pytest.raises(dsl.UnknownSource):
        dsl.parse("COUNT(orders) > 1", schema)
    with pytest.raises(dsl.DslTypeError):
        dsl.parse("COUNT(cart) > 1", schema)
    with pytest.raises(dsl.DslTypeError):
        dsl.parse("COUNT(hits) > 1", schema)


# --- classification and planning -------------------------------------------


@pytest.mark.parametrize("query, expected, mode", CORPUS)
def test_corpus_class_and_plan(query, expected, mode):
    ast = dsl.parse(query)
    cls = dsl.classify(ast)
    assert cls.label == expected
    assert dsl.plan(ast, cls, stale_tolerant=True).mode == mode


def test_reference_queries():
    assert dsl.classify(dsl.parse(EXAMPLE_2)).monotone
    assert dsl.classify(dsl.parse(RATE_LIMITER)).monotone
    cls = dsl.classify(dsl.parse(CART_CONTENTS))
    assert not cls.monotone and cls.witness == "root"


def test_witness_points_at_first_nonmonotone_node():
    assert dsl.classify(dsl.parse("UNION(a, EXCEPT(b, c))")).witness == "root.1"
    assert dsl.classify(dsl.parse("COUNT(EXCEPT(a, b)) > 2")).witness == "root.0.0"
    assert dsl.classify(dsl.parse("COUNT(a) > 2")).witness is None


def test_monotone_non_threshold_coordinated_unless_stale_ok():
    ast = dsl.parse("UNION(a, b)")
    assert dsl.plan(ast).mode == dsl.COORDINATED
    assert dsl.plan(ast, stale_tolerant=True).mode == dsl.LOCAL_LOWER_BOUND


def test_nonmonotone_never_local():
    for q, expected, _ in CORPUS:
        if expected == "NonMonotone":
            assert dsl.plan(dsl.parse(q), stale_tolerant=True).mode == dsl.COORDINATED


@pytest.mark.parametrize("query", [q for q, c, _ in CORPUS if c == "Monotone"])
def test_monotone_verdicts_survive_sampling(query):
    assert dsl.check_sampled(dsl.parse(query), n_pairs=200, seed=3).ok


@pytest.mark.parametrize("query", [q for q, c, _ in CORPUS if c == "NonMonotone"])
def test_nonmonotone_verdicts_have_counterexamples(query):
    ast = dsl.parse(query)
    cx = dsl.find_counterexample(ast)
    assert cx is not None
    assert cx.smaller.leq(cx.larger)
    fn = dsl.as_query_fn(ast)
    assert (fn(cx.smaller), fn(cx.larger)) == (cx.before, cx.after)


@pytest.mark.parametrize("query", CONSERVATIVE)
def test_classifier_is_conservative(query):
    ast = dsl.parse(query)
    assert not dsl.classify(ast).monotone
    assert dsl.check_sampled(ast, n_pairs=300, seed=1).ok
    assert dsl.find_counterexample(ast, tries=1000) is None


# --- evaluation ------------------------------------------------------------


def test_evaluate_example_2():
    ast = dsl.parse(EXAMPLE_2)
    txns = GSet([gift(i) for i in range(50)] + [gift(99, 100), {"id": 7, "type": "CASH", "amount": 900}])
    assert dsl.evaluate(ast, {"txns": txns}) is False
    assert dsl.evaluate(ast, {"txns": txns.merge(GSet([gift(50)]))}) is True


def test_evaluate_cart():
    cart = TwoPSet(adds=["potato", "ferrari"], removes=["ferrari"])
    assert dsl.evaluate(dsl.parse(CART_CONTENTS), {"cart": cart}) == GSet(["potato"])
    assert dsl.evaluate(dsl.parse("PLUS(COUNT(cart.adds), COUNT(cart.removes)) > 2"), {"cart": cart}) is True


def test_filter_skips_mistyped_fields():
    ast = dsl.parse("FILTER(t, amount > 3)")
    t = GSet([{"amount": 5}, {"amount": "5"}, {"amount": True}, "plain", {"other": 9}])
    assert dsl.evaluate(ast, {"t": t}) == GSet([{"amount": 5}])


def test_project_keeps_named_fields():
    ast = dsl.parse("PROJECT(t, type)")
    t = GSet([gift(1), gift(2), {"id": 3, "type": "CASH"}])
    assert dsl.evaluate(ast, {"t": t}) == GSet([{"type": "GIFTCARD"}, {"type": "CASH"}])


def test_evaluate_unbound_source():
    with pytest.raises(dsl.UnboundSource):
        dsl.evaluate(dsl.parse("COUNT(t) > 1"), {})


def test_compile_store_query():
    q = dsl.compile_store_query(CART_CONTENTS, {"cart": "2pset"})
    assert q.keys == ("cart",) and not q.monotone and not q.threshold
    assert q.evaluate(MapLattice()) == GSet()
    t = dsl.compile_store_query("COUNT(t) > 0", {"t": "gset"})
    assert t.evaluate(MapLattice({"t": GSet([1])})) == Ready(True)


def test_execute_modes_against_replicas():
    reps = make_replicas(3, {"t": "gset"})
    reps[0], _ = apply_local_op(reps[0], "t", "gset_add", ["x"])
    reps[1], _ = apply_local_op(reps[1], "t", "gset_add", ["y"])
    thr = dsl.parse("COUNT(t) > 1")
    assert dsl.execute(dsl.plan(thr), reps, 0) is UNKNOWN
    assert dsl.execute(dsl.QueryPlan(thr, dsl.COORDINATED), reps, 0) == Ready(True)
    union = dsl.parse("UNION(t, t)")
    assert dsl.execute(dsl.plan(union, stale_tolerant=True), reps, 0) == LowerBound(GSet(["x"]))
    assert dsl.execute(dsl.plan(union), reps, 0) == GSet(["x", "y"])
    assert dsl.execute(dsl.plan(union), reps, 0, READ_ONE) == GSet(["x"])
    with pytest.raises(dsl.UnboundSource):
        dsl.execute(dsl.plan(dsl.parse("COUNT(u) > 1")), reps, 0)


def test_execute_does_not_mutate_replicas():
    reps = make_replicas(2, {"t": "gset"})
    reps[1], _ = apply_local_op(reps[1], "t", "gset_add", ["y"])
    before = list(reps)
    dsl.execute(dsl.plan(dsl.parse("UNION(t, t)")), reps, 0)
    assert reps == before
