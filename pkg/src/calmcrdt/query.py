"""Queries over lattice state: monotone functions, threshold queries, outcomes.

A threshold query is a monotone boolean function evaluated on a replica's
local state. It answers ``Ready(True)`` when the threshold is crossed and
``UNKNOWN`` otherwise. Because local state only grows and the function is
monotone, a ``Ready(True)`` answer also holds on every later state and on
the global join, so it needs no coordination.

Non-monotone functions (2P-Set contents, PN-Counter value) are evaluated on
the join of several replicas' states via :func:`eval_on_join`.

:class:`StoreQuery` binds a query to keys of a replica store; it is the
form used by the simulator, the checker and the scenario files.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from calmcrdt.lattice import (
    BoolLattice,
    GSet,
    LatticeTypeError,
    LatticeValue,
    MapLattice,
    MaxNat,
    bottom,
    canonical_json,
    element_value,
    merge_all,
    op_delta,
)


# --- outcomes ---------------------------------------------------------------


@dataclass(frozen=True)
class Ready:
    value: Any


class _Unknown:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNKNOWN"


UNKNOWN = _Unknown()


@dataclass(frozen=True)
class LowerBound:
    """A local, possibly stale read of a monotone query; not definitive."""

    value: Any


@dataclass(frozen=True)
class Unavailable:
    reason: str = ""


QueryOutcome = Any  # Ready | UNKNOWN | LowerBound | Unavailable | plain value


# --- functions between lattices --------------------------------------------


@dataclass(frozen=True)
class QueryFn:
    """A pure function from one lattice type to a result type.

    ``target_type`` is a lattice descriptor, or ``"int"``/``"set"`` for
    plain results. Nothing is claimed about monotonicity.
    """

    name: str
    apply: Callable[[LatticeValue], Any]
    source_type: str
    target_type: str

    def __call__(self, value: LatticeValue) -> Any:
        return self.apply(value)


@dataclass(frozen=True)
class MonotoneFn(QueryFn):
    """A query function declared monotone (``i <= j`` implies ``f(i) <= f(j)``).

    The declaration is trusted; :func:`check_monotone_sampled` spot-checks it.
    """


@dataclass(frozen=True)
class ThresholdQuery:
    fn: MonotoneFn

    def __post_init__(self):
        if self.fn.target_type != "bool":
            raise LatticeTypeError(f"threshold query needs a bool target, got {self.fn.target_type}")

    @property
    def name(self) -> str:
        return self.fn.name

    @property
    def source_type(self) -> str:
        return self.fn.source_type


def identity(lattice_type: str) -> MonotoneFn:
    return MonotoneFn("identity", lambda v: v, lattice_type, lattice_type)


def compose(f: QueryFn, g: QueryFn) -> QueryFn:
    """``g`` after ``f``. Monotone iff both parts are."""
    if f.target_type != g.source_type:
        raise LatticeTypeError(f"cannot feed {f.target_type} into {g.name} ({g.source_type})")
    cls = MonotoneFn if isinstance(f, MonotoneFn) and isinstance(g, MonotoneFn) else QueryFn
    fa, ga = f.apply, g.apply
    return cls(f"{g.name}∘{f.name}", lambda v: ga(fa(v)), f.source_type, g.target_type)


def _type_of(state: LatticeValue) -> str:
    return state.lattice_type


def eval_local(q: ThresholdQuery, state: LatticeValue):
    """Evaluate a threshold query on one replica's state."""
    if _type_of(state) != q.source_type:
        raise LatticeTypeError(f"{q.name} expects {q.source_type}, got {state.lattice_type}")
    result = q.fn(state)
    return Ready(True) if bool(result) else UNKNOWN


def eval_on_join(q, states: Sequence[LatticeValue]):
    """Merge ``states`` and evaluate ``q`` (any query function) on the join.

    A :class:`ThresholdQuery` still answers ``Ready(True)``/``UNKNOWN``.
    """
    if not states:
        raise ValueError("eval_on_join needs at least one state")
    joined = merge_all(states)
    if isinstance(q, ThresholdQuery):
        return eval_local(q, joined)
    if _type_of(joined) != q.source_type:
        raise LatticeTypeError(f"{q.name} expects {q.source_type}, got {joined.lattice_type}")
    return q(joined)


# --- result order -----------------------------------------------------------


def result_leq(a: Any, b: Any) -> bool:
    """Order on query results: lattice order, numeric order, or subset."""
    if isinstance(a, LatticeValue) and isinstance(b, LatticeValue):
        return a.leq(b)
    if isinstance(a, (bool, int)) and isinstance(b, (bool, int)):
        return a <= b
    if isinstance(a, (set, frozenset)) and isinstance(b, (set, frozenset)):
        return a <= b
    raise TypeError(f"cannot order {a!r} against {b!r}")


def encode_result(value: Any) -> Any:
    """JSON-compatible form of a query answer."""
    if isinstance(value, LatticeValue):
        return value.encode()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    return value


# --- random states for sampled checking -------------------------------------

DEFAULT_POOL = (
    "potato",
    "ferrari",
    "apple",
    "kiwi",
    {"type": "GIFTCARD", "amount": 150, "id": 1},
    {"type": "GIFTCARD", "amount": 50, "id": 2},
    {"type": "CASH", "amount": 500, "id": 3},
    {"type": "GIFTCARD", "amount": 101, "id": 4},
)


def random_value(lattice_type: str, rng: random.Random, pool: Sequence[Any] = DEFAULT_POOL, size: int = 4):
    """A random value of ``lattice_type`` built from a few random deltas."""
    state = bottom(lattice_type)
    for _ in range(rng.randint(0, size)):
        state = state.merge(random_delta(lattice_type, rng, pool, state))
    return state


def random_delta(lattice_type: str, rng: random.Random, pool: Sequence[Any] = DEFAULT_POOL, state=None):
    """A random operation delta for ``lattice_type``."""
    pick = lambda: pool[rng.randrange(len(pool))]  # noqa: E731
    if lattice_type == "gset":
        return op_delta("gset_add", pick())
    if lattice_type == "2pset":
        return op_delta(rng.choice(("twopset_add", "twopset_remove")), pick())
    if lattice_type == "gcounter":
        return op_delta("counter_inc", rng.randrange(3), rng.randint(1, 3), state=state)
    if lattice_type == "vv":
        from calmcrdt.lattice import VersionVector

        return VersionVector({rng.randrange(3): rng.randint(1, 6)})
    if lattice_type == "pncounter":
        return op_delta(rng.choice(("pn_inc", "pn_dec")), rng.randrange(3), rng.randint(1, 3), state=state)
    if lattice_type == "maxnat":
        return MaxNat(rng.randint(0, 10))
    if lattice_type == "bool":
        return BoolLattice(rng.random() < 0.5)
    if lattice_type.startswith("map"):
        inner = lattice_type[4:-1] if lattice_type.startswith("map<") else "gset"
        key = rng.choice(("a", "b", "c"))
        inner_state = state.get(key) if isinstance(state, MapLattice) else None
        vt = inner if lattice_type.startswith("map<") else None
        return MapLattice({key: random_delta(inner, rng, pool, inner_state)}, vt)
    if lattice_type.startswith("pair<"):
        from calmcrdt.lattice import PairLattice, _split_args

        a, b = _split_args(lattice_type[5:-1])
        first = random_delta(a, rng, pool, state.first if state is not None else None)
        second = random_delta(b, rng, pool, state.second if state is not None else None)
        return PairLattice(first, second)
    if lattice_type == "polog":
        from calmcrdt.polog import LogNode, OpId, PoLog

        node = LogNode.make(OpId(rng.randrange(3), rng.randint(1, 4)), "gset_add", [pick()])
        return PoLog([node])
    raise LatticeTypeError(f"no generator for {lattice_type}")


@dataclass
class MonotonicityReport:
    name: str
    pairs: int
    violations: list[tuple[Any, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_monotone_sampled(
    f: QueryFn,
    n_pairs: int,
    seed: int = 0,
    gen_value: Callable[[random.Random], LatticeValue] | None = None,
    gen_delta: Callable[[random.Random, LatticeValue], LatticeValue] | None = None,
    max_violations: int = 10,
) -> MonotonicityReport:
    """Sample ordered pairs ``(i, i | d)`` and record every ``f(i) > f(j)``."""
    rng = random.Random(seed)
    gen_value = gen_value or (lambda r: random_value(f.source_type, r))
    gen_delta = gen_delta or (lambda r, s: random_delta(f.source_type, r, state=s))
    report = MonotonicityReport(f.name, n_pairs)
    for _ in range(n_pairs):
        i = gen_value(rng)
        j = i
        for _ in range(rng.randint(1, 3)):
            j = j.merge(gen_delta(rng, j))
        if not result_leq(f(i), f(j)):
            report.violations.append((i, j))
            if len(report.violations) >= max_violations:
                break
    return report


# --- the built-in query functions -------------------------------------------


def cardinality() -> MonotoneFn:
    return MonotoneFn("cardinality", lambda s: MaxNat(len(s)), "gset", "maxnat")


def greater_than(k: int) -> MonotoneFn:
    return MonotoneFn(f"gt({k})", lambda n: BoolLattice(n.value > k), "maxnat", "bool")


def select(name: str, predicate: Callable[[Any], bool]) -> MonotoneFn:
    """Per-element filter on a G-Set; monotone because it looks at one element at a time."""

    def run(s: GSet) -> GSet:
        return GSet(canonical=[e for e in s.elements if predicate(element_value(e))])

    return MonotoneFn(name, run, "gset", "gset")


def _giftcard_over_100(txn: Any) -> bool:
    if not isinstance(txn, dict):
        return False
    amount = txn.get("amount")
    return txn.get("type") == "GIFTCARD" and isinstance(amount, (int, float)) and amount > 100


def suspicious_activity(threshold: int = 50) -> ThresholdQuery:
    """More than ``threshold`` gift-card transactions above 100."""
    fn = compose(compose(select("giftcard>100", _giftcard_over_100), cardinality()), greater_than(threshold))
    return ThresholdQuery(MonotoneFn("suspicious_activity", fn.apply, "gset", "bool"))


def actions_count() -> MonotoneFn:
    return MonotoneFn("|A|+|R|", lambda s: MaxNat(len(s.adds) + len(s.removes)), "2pset", "maxnat")


def rate_limiter(limit: int = 100) -> ThresholdQuery:
    fn = compose(actions_count(), greater_than(limit))
    return ThresholdQuery(MonotoneFn("rate_limiter", fn.apply, "2pset", "bool"))


def cardinality_gt(k: int) -> ThresholdQuery:
    fn = compose(cardinality(), greater_than(k))
    return ThresholdQuery(MonotoneFn(f"cardinality_gt({k})", fn.apply, "gset", "bool"))


def contents() -> QueryFn:
    return QueryFn("contents", lambda s: s.contents(), "2pset", "gset")


def counter_value() -> QueryFn:
    return QueryFn("counter_value", lambda c: c.value(), "pncounter", "int")


# --- queries bound to store keys --------------------------------------------


@dataclass(frozen=True)
class StoreQuery:
    """A query over named keys of a replica store.

    ``threshold`` queries answer ``Ready(True)``/``UNKNOWN``; others return a
    value. ``monotone`` says whether a local answer can be trusted.
    """

    name: str
    key_types: tuple[tuple[str, str], ...]
    monotone: bool
    threshold: bool
    run: Callable[[Mapping[str, LatticeValue]], Any]
    spec: Mapping[str, Any]

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.key_types)

    def inputs(self, store: MapLattice) -> dict[str, LatticeValue]:
        out = {}
        for key, t in self.key_types:
            v = store.get(key)
            if v is None:
                v = bottom(t)
            elif v.lattice_type != t:
                raise LatticeTypeError(f"key {key!r} holds {v.lattice_type}, query expects {t}")
            out[key] = v
        return out

    def value(self, store: MapLattice) -> Any:
        """Raw query result on ``store`` (bool for threshold queries)."""
        return self.run(self.inputs(store))

    def evaluate(self, store: MapLattice):
        """Outcome on ``store``: Ready/UNKNOWN for thresholds, else the value."""
        result = self.value(store)
        if self.threshold:
            return Ready(True) if bool(result) else UNKNOWN
        return result

    def spec_text(self) -> str:
        return canonical_json(dict(self.spec))


_REGISTRY: dict[str, Callable[..., Any]] = {
    "suspicious_activity": suspicious_activity,
    "rate_limiter": rate_limiter,
    "contents": contents,
    "counter_value": counter_value,
    "cardinality_gt": cardinality_gt,
}

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*(-?\d+)\s*\))?\s*$")


class UnknownQuery(ValueError):
    pass


def registry_names() -> list[str]:
    return sorted(_REGISTRY)


def lookup(name: str):
    """Resolve ``"rate_limiter"`` or ``"cardinality_gt(5)"`` to a query object."""
    m = _CALL.match(name)
    if not m or m.group(1) not in _REGISTRY:
        raise UnknownQuery(f"unknown query {name!r}")
    factory = _REGISTRY[m.group(1)]
    if m.group(2) is not None:
        return factory(int(m.group(2)))
    if m.group(1) == "cardinality_gt":
        raise UnknownQuery("cardinality_gt needs an argument, e.g. cardinality_gt(5)")
    return factory()


def bind(name: str, key: str) -> StoreQuery:
    """A registry query applied to one store key."""
    q = lookup(name)
    if isinstance(q, ThresholdQuery):
        fn, threshold, monotone = q.fn, True, True
    else:
        fn, threshold, monotone = q, False, isinstance(q, MonotoneFn)
    source = fn.source_type
    apply = fn.apply
    return StoreQuery(
        name=name,
        key_types=((key, source),),
        monotone=monotone,
        threshold=threshold,
        run=lambda inputs: _plain(apply(inputs[key])),
        spec={"query": name, "key": key},
    )


def _plain(result: Any) -> Any:
    return result.value if isinstance(result, BoolLattice) else result


def resolve(spec: Mapping[str, Any], schema: Mapping[str, str]) -> StoreQuery:
    """Build a :class:`StoreQuery` from its scenario/trace form.

    ``{"query": name, "key": key}`` names a registry query;
    ``{"dsl": text}`` is compiled by :mod:`calmcrdt.dsl`.
    """
    if "dsl" in spec:
        from calmcrdt.dsl import compile_store_query

        return compile_store_query(spec["dsl"], schema)
    if "query" not in spec or "key" not in spec:
        raise UnknownQuery(f"query spec needs 'query' and 'key' or 'dsl': {dict(spec)}")
    key = spec["key"]
    if key not in schema:
        raise UnknownQuery(f"query {spec['query']!r} references undeclared key {key!r}")
    q = bind(spec["query"], key)
    declared = schema[key]
    if q.key_types[0][1] != declared:
        raise LatticeTypeError(f"query {spec['query']!r} needs {q.key_types[0][1]}, key {key!r} is {declared}")
    return q

