"""
Reading monotonicity off the syntax
===================================

The query language marks EXCEPT and the comparisons ``<``, ``<=`` and
``==`` as non-monotone. One such node anywhere makes the whole query
non-monotone. The classifier is sound but not complete: some queries it
flags are monotone in fact.
"""

# %%
from calmcrdt import dsl

queries = [
    'COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50',
    "PLUS(COUNT(actions.adds), COUNT(actions.removes)) > 100",
    "EXCEPT(cart.adds, cart.removes)",
    "UNION(a, b)",
    "COUNT(txns) <= 3",
]
for q in queries:
    ast = dsl.parse(q)
    cls = dsl.classify(ast)
    print(f"{cls.label:12} {dsl.plan(ast, cls, stale_tolerant=True).mode:16} witness={cls.witness!s:6} {q}")

# %%
# Monotone verdicts survive sampled checking of the compiled evaluator;
# non-monotone ones come with a concrete pair of stores.
ast = dsl.parse("EXCEPT(cart.adds, cart.removes)")
cx = dsl.find_counterexample(ast)
print("smaller store:", cx.smaller.encode()["entries"])
print("larger store: ", cx.larger.encode()["entries"])
print("results:", cx.before.encode()["elements"], "->", cx.after.encode()["elements"])

ok = dsl.check_sampled(dsl.parse(queries[0]), n_pairs=500).ok
print("fraud query passes 500 sampled pairs:", ok)

# %%
# A conservative verdict: |a| + |b - a| equals |a union b|, which only grows.
ast = dsl.parse("PLUS(COUNT(a), COUNT(EXCEPT(b, a))) > 2")
print(dsl.classify(ast).label, "but counterexample found:", dsl.find_counterexample(ast, tries=500) is not None)
