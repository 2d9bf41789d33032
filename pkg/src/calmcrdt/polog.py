"""Op-based CRDTs as a state-based one: a grow-only DAG of operation records.

A :class:`PoLog` holds a set of log nodes and a set of happens-before edges
``(earlier, later)``. Both components only grow, and the join of two logs is
the pairwise union, so the log is itself a lattice value. Replaying the log
folds each operation's delta over a topological order of the DAG.

Records that arrive before their predecessors wait in a
:class:`CausalBuffer` and are released once every predecessor is in the log.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, NamedTuple

from calmcrdt.lattice import LatticeTypeError, LatticeValue, bottom, canonical_json, op_delta


class OpId(NamedTuple):
    """Globally unique operation id; tuples order lexicographically."""

    origin: int
    seq: int

    def encode(self) -> list[int]:
        return [self.origin, self.seq]


class DuplicateOpId(ValueError):
    pass


class UnknownPredecessor(ValueError):
    pass


class CycleDetected(ValueError):
    pass


@dataclass(frozen=True, order=True)
class LogNode:
    id: OpId
    op: str
    args_json: str = "[]"

    @classmethod
    def make(cls, op_id: OpId, op: str, args: Iterable[Any] = ()) -> LogNode:
        return cls(OpId(*op_id), op, canonical_json(list(args)))

    @property
    def args(self) -> tuple:
        return tuple(json.loads(self.args_json))

    def encode(self) -> dict:
        return {"id": self.id.encode(), "op": self.op, "args": json.loads(self.args_json)}


class PoLog(LatticeValue):
    """Partially ordered operation log."""

    __slots__ = ("nodes", "edges")
    lattice_type = "polog"

    def __init__(self, nodes: Iterable[LogNode] = (), edges: Iterable[tuple[OpId, OpId]] = ()):
        object.__setattr__(self, "nodes", frozenset(nodes))
        object.__setattr__(self, "edges", frozenset((OpId(*a), OpId(*b)) for a, b in edges))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    def _join(self, other: PoLog) -> PoLog:
        return PoLog(self.nodes | other.nodes, self.edges | other.edges)

    def leq(self, other: LatticeValue) -> bool:
        if not isinstance(other, PoLog):
            raise LatticeTypeError(f"cannot combine polog with {other.lattice_type}")
        return self.nodes <= other.nodes and self.edges <= other.edges

    def is_bottom(self) -> bool:
        return not self.nodes and not self.edges

    def ids(self) -> set[OpId]:
        return {n.id for n in self.nodes}

    def __contains__(self, op_id) -> bool:
        return any(n.id == op_id for n in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other):
        return isinstance(other, PoLog) and self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash(("polog", self.nodes, self.edges))

    def encode(self) -> dict:
        return {
            "type": "polog",
            "nodes": [n.encode() for n in sorted(self.nodes)],
            "edges": [[a.encode(), b.encode()] for a, b in sorted(self.edges)],
        }

    @classmethod
    def from_encoded(cls, obj: dict) -> PoLog:
        nodes = [LogNode.make(OpId(*n["id"]), n["op"], n["args"]) for n in obj["nodes"]]
        edges = [(OpId(*a), OpId(*b)) for a, b in obj["edges"]]
        return cls(nodes, edges)


def record(log: PoLog, op: str, args: Iterable[Any], frontier: Iterable[OpId], new_id: OpId) -> PoLog:
    """Add an operation with an edge from every id in ``frontier`` to it."""
    new_id = OpId(*new_id)
    ids = log.ids()
    if new_id in ids:
        raise DuplicateOpId(f"operation {new_id} already in log")
    preds = [OpId(*p) for p in frontier]
    missing = [p for p in preds if p not in ids]
    if missing:
        raise UnknownPredecessor(f"predecessors not in log: {missing}")
    return PoLog(log.nodes | {LogNode.make(new_id, op, args)}, log.edges | {(p, new_id) for p in preds})


def causal_frontier(log: PoLog) -> set[OpId]:
    """Ids with no outgoing edge (the maximal operations)."""
    has_successor = {a for a, _ in log.edges}
    return {n.id for n in log.nodes if n.id not in has_successor}


@dataclass(frozen=True)
class LogRecord:
    """An operation in transit, carrying the ids it causally follows."""

    node: LogNode
    predecessors: frozenset[OpId] = frozenset()

    @classmethod
    def make(cls, op_id, op: str, args: Iterable[Any] = (), predecessors: Iterable = ()) -> LogRecord:
        return cls(LogNode.make(OpId(*op_id), op, args), frozenset(OpId(*p) for p in predecessors))


@dataclass(frozen=True)
class CausalBuffer:
    pending: frozenset[LogRecord] = field(default_factory=frozenset)


def _append(log: PoLog, rec: LogRecord) -> PoLog:
    return PoLog(log.nodes | {rec.node}, log.edges | {(p, rec.node.id) for p in rec.predecessors})


def deliver(buffer: CausalBuffer, log: PoLog, rec: LogRecord) -> tuple[CausalBuffer, PoLog]:
    """Deliver ``rec`` if its predecessors are present, otherwise hold it.

    Each successful delivery re-examines the buffer, so one arrival can
    release a chain of waiting records.
    """
    present = log.ids()
    if rec.node.id in present:
        return buffer, log
    pending = set(buffer.pending)
    pending.add(rec)
    progressed = True
    while progressed:
        progressed = False
        for waiting in sorted(pending, key=lambda r: r.node.id):
            if waiting.node.id in present:
                pending.discard(waiting)
                progressed = True
            elif waiting.predecessors <= present:
                log = _append(log, waiting)
                present.add(waiting.node.id)
                pending.discard(waiting)
                progressed = True
    return CausalBuffer(frozenset(pending)), log


def topological_order(log: PoLog) -> list[LogNode]:
    """Kahn's algorithm, breaking ties by the smallest OpId."""
    by_id = {n.id: n for n in log.nodes}
    indegree = {i: 0 for i in by_id}
    succ: dict[OpId, list[OpId]] = {i: [] for i in by_id}
    for a, b in log.edges:
        if a not in by_id or b not in by_id:
            raise UnknownPredecessor(f"edge {a}->{b} references a missing node")
        succ[a].append(b)
        indegree[b] += 1
    ready = [i for i, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(by_id[i])
        for j in succ[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != len(by_id):
        raise CycleDetected("log contains a cycle")
    return order


def all_topological_orders(log: PoLog) -> Iterator[list[LogNode]]:
    """Every linear extension of the log; exponential, for small logs only."""
    by_id = {n.id: n for n in log.nodes}
    preds: dict[OpId, set[OpId]] = {i: set() for i in by_id}
    for a, b in log.edges:
        preds[b].add(a)

    def extend(done: list[OpId], remaining: set[OpId]):
        if not remaining:
            yield [by_id[i] for i in done]
            return
        for i in sorted(remaining):
            if preds[i] <= set(done):
                yield from extend(done + [i], remaining - {i})

    yield from extend([], set(by_id))


Interpreter = Callable[..., LatticeValue]


def replay(log: PoLog, lattice_type: str, interpreter: Interpreter = op_delta) -> LatticeValue:
    """Fold each node's delta into ``bottom(lattice_type)`` in topological order.

    ``interpreter(op, *args, state=...)`` returns the delta for one node; the
    default is :func:`calmcrdt.lattice.op_delta`.
    """
    state = bottom(lattice_type)
    for node in topological_order(log):
        state = state.merge(interpreter(node.op, *node.args, state=state))
    return state
