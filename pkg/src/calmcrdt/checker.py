"""Offline consistency checks over simulator traces.

* :func:`check_convergence` - all final replica states are identical and
  equal the join of every injected delta.
* :func:`check_monotone_definitive` - every ``Ready(True)`` answer of a
  monotone threshold query still holds on the final global join.
* :func:`count_nonmonotone_anomalies` - a non-monotone answer is an anomaly
  when no admissible consistent cut produces the same value. A cut is a
  causally closed prefix of each replica's operations; it is admissible
  when it contains everything the querying session wrote before the query
  and everything injected more than the staleness horizon ago.
* :func:`enumerate_delivery_orders` - brute force over every delivery order
  of a handful of operations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from calmcrdt.lattice import OP_TYPES, MapLattice, bottom, canonical_json, decode, op_delta
from calmcrdt.query import StoreQuery, encode_result, resolve, result_leq
from calmcrdt.simnet import Trace


class UnquiescedTrace(ValueError):
    pass


class BoundExceeded(ValueError):
    pass


def _load(trace) -> Trace:
    if isinstance(trace, Trace):
        return trace
    return Trace.read(trace)


def _schema(trace: Trace) -> dict[str, str]:
    return dict(trace.header["schema"])


def _final(trace: Trace) -> dict:
    finals = trace.of("final_states")
    if not finals:
        raise UnquiescedTrace("trace has no final_states record; the run did not quiesce")
    return finals[-1]


def _injected_join(trace: Trace) -> MapLattice:
    out = MapLattice()
    for rec in trace.of("op_injected"):
        out = out.merge(MapLattice({rec["key"]: decode(rec["delta"])}))
    return out


def _text(value: Any) -> str:
    return canonical_json(value)


@dataclass
class ConvergenceVerdict:
    ok: bool
    details: list[str] = field(default_factory=list)


def check_convergence(trace) -> ConvergenceVerdict:
    trace = _load(trace)
    final = _final(trace)
    states = [decode(s) for s in final["states"]]
    expected = _injected_join(trace)
    details = []
    for i, s in enumerate(states):
        if s != expected:
            mine, want = s.entries, expected.entries
            for key in sorted(set(mine) | set(want)):
                a = mine.get(key)
                b = want.get(key)
                if a != b:
                    details.append(
                        f"replica {i} key {key!r}: has {_text(a.encode()) if a else '⊥'},"
                        f" join of injected deltas is {_text(b.encode()) if b else '⊥'}"
                    )
    if len({_text(v) for v in final["vvs"]}) > 1:
        details.append(f"version vectors differ: {final['vvs']}")
    return ConvergenceVerdict(not details, details)


def _queries(trace: Trace) -> dict[int, tuple[dict, StoreQuery]]:
    schema = _schema(trace)
    cache: dict[str, StoreQuery] = {}
    out = {}
    for rec in trace.of("query_issued"):
        spec = rec["query"]
        key = _text(spec)
        if key not in cache:
            cache[key] = resolve(spec, schema)
        out[rec["qid"]] = (rec, cache[key])
    return out


@dataclass
class Violation:
    qid: int
    replica: int
    time: int
    query: str
    reason: str


def check_monotone_definitive(trace) -> list[Violation]:
    """Ready(True) answers that the final global join contradicts (expected: none)."""
    trace = _load(trace)
    final = _final(trace)
    states = [decode(s) for s in final["states"]]
    global_join = MapLattice()
    for s in states:
        global_join = global_join.merge(s)
    global_join = global_join.merge(_injected_join(trace))
    issued = _queries(trace)
    out = []
    for ans in trace.of("query_answered"):
        if ans["outcome"] != "ready":
            continue
        rec, q = issued[ans["qid"]]
        if not (q.monotone and q.threshold):
            continue
        if not q.value(global_join):
            out.append(Violation(ans["qid"], rec["replica"], ans["t"], q.name, "Ready(true) is false on the final join"))
    return out


# --- consistent cuts --------------------------------------------------------


@dataclass(frozen=True)
class _Op:
    origin: int
    seq: int
    key: str
    delta: Any
    deps: Mapping[int, int]
    session: str
    time: int
    index: int  # position in the trace


def _ops(trace: Trace) -> list[_Op]:
    out = []
    for idx, rec in enumerate(trace.records):
        if rec["rec"] == "op_injected":
            origin, seq = rec["id"]
            deps = {int(k): int(v) for k, v in rec["deps"].items()}
            out.append(_Op(origin, seq, rec["key"], decode(rec["delta"]), deps, rec["session"], rec["t"], idx))
    return out


@dataclass
class Anomaly:
    qid: int
    replica: int
    time: int
    query: str
    observed: Any
    explainable: list[Any]


@dataclass
class AnomalyReport:
    count: int
    anomalies: list[Anomaly] = field(default_factory=list)
    checked: int = 0


def admissible_values(
    query: StoreQuery,
    ops: Sequence[_Op],
    required: Mapping[int, int],
    bound: int = 12,
) -> set[str]:
    """Canonical texts of ``query`` over every admissible consistent cut.

    ``ops`` are all operations visible at answer time; ``required`` is the
    per-origin prefix every admissible cut must contain.
    """
    by_id = {(o.origin, o.seq): o for o in ops}
    relevant: dict[int, list[_Op]] = {}
    for o in ops:
        if o.key in query.keys:
            relevant.setdefault(o.origin, []).append(o)
    total = sum(len(v) for v in relevant.values())
    if total > bound:
        raise BoundExceeded(
            f"{total} operations touch {list(query.keys)}; the cut search is capped at {bound}."
            " Shrink the scenario or raise the bound."
        )
    origins = sorted(relevant)
    values: set[str] = set()
    for counts in itertools.product(*(range(len(relevant[o]) + 1) for o in origins)):
        cut = dict(required)
        for o, m in zip(origins, counts):
            if m:
                cut[o] = max(cut.get(o, 0), relevant[o][m - 1].seq)
        changed = True
        while changed:
            changed = False
            for o, s in list(cut.items()):
                if s <= 0:
                    continue
                op = by_id.get((o, s))
                if op is None:
                    continue
                for d_o, d_s in op.deps.items():
                    if d_s > cut.get(d_o, 0):
                        cut[d_o] = d_s
                        changed = True
        if any((o, s) not in by_id for o, s in cut.items() if s > 0):
            continue  # needs an operation not injected yet
        if any(sum(1 for r in relevant[o] if r.seq <= cut.get(o, 0)) != m for o, m in zip(origins, counts)):
            continue
        store = MapLattice()
        for o in origins:
            for r in relevant[o]:
                if r.seq <= cut.get(o, 0):
                    store = store.merge(MapLattice({r.key: r.delta}))
        values.add(_text(encode_result(query.value(store))))
    return values


def count_nonmonotone_anomalies(trace, bound: int = 12, horizon: int | None = None) -> AnomalyReport:
    """Count non-monotone answers that no admissible cut explains.

    Both local and coordinated answers are checked; coordinated ones are
    expected to pass. ``horizon`` defaults to the trace's configured
    staleness horizon (unbounded when unset).
    """
    trace = _load(trace)
    if horizon is None:
        horizon = trace.header["config"].get("staleness_horizon")
    issued = _queries(trace)
    ops = _ops(trace)
    report = AnomalyReport(0)
    issue_index = {}
    for idx, rec in enumerate(trace.records):
        if rec["rec"] == "query_issued":
            issue_index[rec["qid"]] = idx
    for idx, ans in enumerate(trace.records):
        if ans["rec"] != "query_answered" or ans["outcome"] not in ("value", "lower_bound"):
            continue
        rec, q = issued[ans["qid"]]
        if q.monotone:
            continue
        report.checked += 1
        visible = [o for o in ops if o.index < idx]
        required: dict[int, int] = {}
        for o in visible:
            before_query = o.index < issue_index[ans["qid"]]
            same_session = o.session == rec["session"]
            old = horizon is not None and o.time < rec["t"] - horizon
            if before_query and (same_session or old):
                required[o.origin] = max(required.get(o.origin, 0), o.seq)
        explain = admissible_values(q, visible, required, bound)
        observed = _text(ans["value"])
        if observed not in explain:
            report.count += 1
            report.anomalies.append(
                Anomaly(ans["qid"], rec["replica"], ans["t"], q.name, ans["value"], sorted(explain))
            )
    return report


# --- exhaustive delivery orders ---------------------------------------------


@dataclass(frozen=True)
class OpSpec:
    origin: int
    key: str
    op: str
    args: tuple = ()


@dataclass
class OrderReport:
    orders: int
    monotone: bool
    outcomes: set[str] = field(default_factory=set)
    regressions: list[list[str]] = field(default_factory=list)
    definitive_violations: int = 0

    @property
    def regression_found(self) -> bool:
        return bool(self.regressions)


def _deltas(ops: Sequence[OpSpec], schema: Mapping[str, str]) -> list[MapLattice]:
    """Deltas as each origin would compute them from its own earlier ops."""
    local: dict[int, MapLattice] = {}
    out = []
    for spec in ops:
        state = local.get(spec.origin, MapLattice())
        current = state.get(spec.key)
        current = current if current is not None else bottom(schema[spec.key])
        args = tuple(spec.args)
        if spec.op in ("counter_inc", "pn_inc", "pn_dec") and len(args) == 1:
            args = (spec.origin, args[0])
        delta = MapLattice({spec.key: op_delta(spec.op, *args, state=current)})
        local[spec.origin] = state.merge(delta)
        out.append(delta)
    return out


def enumerate_delivery_orders(
    ops: Sequence[OpSpec], n_replicas: int, query: StoreQuery, bound: int = 6
) -> OrderReport:
    """Evaluate ``query`` after every prefix of every delivery order.

    Orders respect per-origin FIFO. Any such order can be observed at any
    replica given suitable delays, so the replica count only bounds the
    valid origins. For threshold queries the report counts ``Ready(True)``
    answers that fail on the full join; for value queries it records
    sequences whose result goes backwards.
    """
    if len(ops) > bound:
        raise BoundExceeded(f"{len(ops)} operations exceed the enumeration bound {bound}")
    for spec in ops:
        if not 0 <= spec.origin < n_replicas:
            raise ValueError(f"origin {spec.origin} outside {n_replicas} replicas")
    schema = dict(query.key_types)
    for spec in ops:
        if spec.key not in schema:
            schema[spec.key] = OP_TYPES.get(spec.op, "gset")
    deltas = _deltas(ops, schema)
    final = MapLattice()
    for d in deltas:
        final = final.merge(d)
    final_value = query.value(final)

    per_origin: dict[int, list[int]] = {}
    for i, spec in enumerate(ops):
        per_origin.setdefault(spec.origin, []).append(i)
    slots = [spec.origin for spec in ops]
    report = OrderReport(0, query.monotone)
    for pattern in sorted(set(itertools.permutations(slots))):
        cursor = {o: 0 for o in per_origin}
        order = []
        for o in pattern:
            order.append(per_origin[o][cursor[o]])
            cursor[o] += 1
        report.orders += 1
        state = MapLattice()
        seen = [query.value(state)]
        for i in order:
            state = state.merge(deltas[i])
            seen.append(query.value(state))
        texts = [_text(encode_result(v)) for v in seen]
        report.outcomes.update(texts)
        if query.threshold:
            report.definitive_violations += sum(1 for v in seen if v and not final_value)
        else:
            if any(not result_leq(a, b) for a, b in zip(seen, seen[1:])):
                report.regressions.append(texts)
    return report


def check(trace, bound: int = 12) -> dict:
    """Full verdict as a JSON-compatible dict."""
    trace = _load(trace)
    conv = check_convergence(trace)
    mono = check_monotone_definitive(trace)
    anomalies = count_nonmonotone_anomalies(trace, bound)
    details = list(conv.details)
    details += [f"monotone violation: query {v.qid} ({v.query}) at replica {v.replica}, t={v.time}" for v in mono]
    details += [
        f"anomaly: query {a.qid} ({a.query}) at replica {a.replica}, t={a.time} saw {_text(a.observed)}"
        for a in anomalies.anomalies
    ]
    return {
        "convergence": conv.ok,
        "monotone_violations": len(mono),
        "anomalies": anomalies.count,
        "details": details,
    }
