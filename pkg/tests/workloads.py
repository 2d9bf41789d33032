"""Seeded random workloads shared by the simulator tests and the acceptance suite."""

from __future__ import annotations

import random

from calmcrdt.simnet import OpInject, QueryInject

MIXED_SCHEMA = {
    "cart": "2pset",
    "tags": "gset",
    "views": "gcounter",
    "stock": "pncounter",
    "level": "maxnat",
    "flag": "bool",
    "index": "map<gset>",
}

ITEMS = ["potato", "ferrari", "apple", "kiwi", "tofu"]


def _random_op(rng: random.Random) -> tuple[str, str, tuple]:
    kind = rng.randrange(9)
    item = rng.choice(ITEMS)
    if kind == 0:
        return "cart", "twopset_add", (item,)
    if kind == 1:
        return "cart", "twopset_remove", (item,)
    if kind == 2:
        return "tags", "gset_add", (item,)
    if kind == 3:
        return "views", "counter_inc", (rng.randint(1, 3),)
    if kind == 4:
        return "stock", "pn_inc", (rng.randint(1, 3),)
    if kind == 5:
        return "stock", "pn_dec", (rng.randint(1, 3),)
    if kind == 6:
        return "level", "max_raise", (rng.randint(0, 40),)
    if kind == 7:
        return "flag", "bool_set", ()
    return "index", "map_put", (rng.choice("abc"), ["gset_add", item])


def mixed_workload(seed: int, n_ops: int = 50, n_replicas: int = 3, queries: bool = True) -> list:
    """``n_ops`` random ops over every lattice type, spread over ``n_replicas``."""
    rng = random.Random(seed)
    events: list = []
    for i in range(n_ops):
        key, op, args = _random_op(rng)
        events.append(OpInject(2 * i + rng.randrange(2), rng.randrange(n_replicas), key, op, args))
    if queries:
        for t in range(10, 2 * n_ops, 20):
            events.append(QueryInject(t, rng.randrange(n_replicas), {"query": "cardinality_gt(2)", "key": "tags"}))
            events.append(QueryInject(t + 1, rng.randrange(n_replicas), {"query": "contents", "key": "cart"}))
    return events
