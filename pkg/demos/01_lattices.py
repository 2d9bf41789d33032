"""
Join semilattices and their merge laws
======================================

Every replicated value in calmcrdt is a join semilattice: ``merge`` is
associative, commutative and idempotent, and the bottom element is its
identity. This script builds a few values, merges them in different
orders and shows that the order never matters.
"""

# %%
# A grow-only set merges by union; a two-phase set keeps adds and removes
# apart, and its contents are the adds minus the removes.
from calmcrdt.lattice import GCounter, GSet, PNCounter, TwoPSet, apply_op, bottom, merge, to_text

left = GSet(["potato"])
right = GSet(["ferrari"])
print("union:", to_text(merge(left, right)))

cart = TwoPSet(adds=["potato", "ferrari"], removes=["ferrari"])
print("cart contents:", sorted(cart.contents().values()))

# %%
# Counters keep one slot per replica and merge by slot-wise max, so a
# replayed increment is harmless.
views = GCounter({0: 3, 1: 1}).merge(GCounter({1: 4, 2: 2}))
print("views:", views.counts, "total", views.total())

stock = apply_op(bottom("pncounter"), "pn_inc", 0, 10)
stock = apply_op(stock, "pn_dec", 1, 3)
assert isinstance(stock, PNCounter)
print("stock:", stock.value())

# %%
# The three laws, checked on the values above.
a, b, c = GSet(["a"]), GSet(["b"]), GSet(["a", "c"])
assert merge(merge(a, b), c) == merge(a, merge(b, c))
assert merge(a, b) == merge(b, a)
assert merge(a, a) == a
assert merge(a, bottom("gset")) == a
print("ACI laws hold on the sample values")

# %%
# An operation log is itself a lattice: nodes and happens-before edges
# merge by union. Replaying it in any topological order gives one state.
from calmcrdt.polog import OpId, PoLog, all_topological_orders, record, replay

log = record(PoLog(), "twopset_add", ["potato"], [], OpId(0, 1))
log = record(log, "twopset_add", ["ferrari"], [], OpId(1, 1))
log = record(log, "twopset_remove", ["ferrari"], [OpId(1, 1)], OpId(1, 2))
print("linear extensions:", len(list(all_topological_orders(log))))
print("replayed cart:", sorted(replay(log, "2pset").contents().values()))
