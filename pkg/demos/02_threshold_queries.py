"""
Threshold queries need no coordination
======================================

A monotone query that only ever flips from false to true can be answered
from a single replica: once a replica sees enough evidence, every later
state, on every replica, agrees. The fraud-detection query below fires
when more than 50 large gift-card transactions exist.
"""

# %%
# Classify the query and plan it.
from calmcrdt import dsl

QUERY = 'COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50'
ast = dsl.parse(QUERY)
cls = dsl.classify(ast)
print(cls.label, dsl.plan(ast, cls).mode)

# %%
# Evaluate it on a growing set of transactions.
from calmcrdt.lattice import GSet

txns = GSet([{"id": i, "type": "GIFTCARD", "amount": 150} for i in range(50)])
print("50 large gift cards:", dsl.evaluate(ast, {"txns": txns}))
txns = txns.merge(GSet([{"id": 50, "type": "GIFTCARD", "amount": 150}]))
print("51 large gift cards:", dsl.evaluate(ast, {"txns": txns}))

# %%
# Run the bundled threshold scenario under message loss and duplication.
# Each replica answers UNKNOWN until it has seen 51 qualifying
# transactions, then READY, and never goes back.
from calmcrdt.scenario import run_scenario

trace, report = run_scenario("threshold", {"seed": 3})
issued = {r["qid"]: r for r in trace.of("query_issued")}
timeline: dict[int, list[str]] = {}
for ans in trace.of("query_answered"):
    timeline.setdefault(issued[ans["qid"]]["replica"], []).append(ans["outcome"][0].upper())
for replica, outcomes in sorted(timeline.items()):
    print(f"replica {replica}:", "".join(outcomes))
print("monotone violations:", report.monotone_violations)
