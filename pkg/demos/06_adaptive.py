"""
Choosing coordination from the workload
=======================================

Replicas gossip per-key counts of writes and non-monotone reads as a
CRDT. Each replica picks a safe strategy pair from its own copy: keys
read often relative to writes pay at write time (write to all, read
one), the rest write locally and read all.
"""

# %%
from calmcrdt.coordination import WorkloadStats, adaptive_strategy

stats = WorkloadStats()
for i in range(2):
    stats = stats.record_op("inventory", i)
for i in range(6):
    stats = stats.record_nonmonotone_read("inventory", i % 3)
for i in range(8):
    stats = stats.record_op("orders", i % 3)
stats = stats.record_nonmonotone_read("orders", 0)

for key in ("inventory", "orders"):
    ws, rs = adaptive_strategy(stats, key, n=3)
    print(f"{key:9} ops={stats.ops(key)} reads={stats.nonmonotone_reads(key)} -> {ws.name} + {rs.name}")

# %%
# The bundled scenario exercises the same policy inside the simulator.
from collections import Counter

from calmcrdt.scenario import run_scenario

trace, report = run_scenario("adaptive", {"seed": 1})
writes = Counter((r["key"], r["write"]) for r in trace.of("op_injected"))
reads = Counter((r["query"]["key"], r["strategy"]) for r in trace.of("query_issued"))
print("writes:", dict(writes))
print("reads: ", dict(reads))
print("anomalies:", report.anomalies)
