"""Read/write coordination for non-monotone queries.

Strategies span write-one/read-all through write-all/read-one. A pair is
safe when every read quorum intersects every write quorum, i.e.
``write_size + read_size > n``. Writes never need ordering among
themselves (deltas commute); only a non-monotone read has to see the
writes it depends on.

The functions here are the synchronous, in-memory forms. The simulator
runs the same protocol as message exchanges.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from calmcrdt.lattice import GCounter, MapLattice, merge_all
from calmcrdt.query import StoreQuery, Unavailable
from calmcrdt.replication import Replica, apply_local_op, delta_gossip_payload, receive_gossip


class CoordinationUnavailable(RuntimeError):
    """Too few replicas responded for the requested strategy."""


@dataclass(frozen=True)
class WriteStrategy:
    kind: str  # "one" | "quorum" | "all"
    k: int = 1

    def size(self, n: int) -> int:
        return {"one": 1, "quorum": self.k, "all": n}[self.kind]

    def validate(self, n: int) -> WriteStrategy:
        if not 1 <= self.size(n) <= n:
            raise ValueError(f"{self.name} is not valid for {n} replicas")
        return self

    @property
    def name(self) -> str:
        return f"write_{self.kind}" if self.kind != "quorum" else f"write_quorum:{self.k}"


@dataclass(frozen=True)
class ReadStrategy:
    kind: str
    k: int = 1

    def size(self, n: int) -> int:
        return {"one": 1, "quorum": self.k, "all": n}[self.kind]

    def validate(self, n: int) -> ReadStrategy:
        if not 1 <= self.size(n) <= n:
            raise ValueError(f"{self.name} is not valid for {n} replicas")
        return self

    @property
    def name(self) -> str:
        return f"read_{self.kind}" if self.kind != "quorum" else f"read_quorum:{self.k}"


WRITE_ONE = WriteStrategy("one")
WRITE_ALL = WriteStrategy("all")
READ_ONE = ReadStrategy("one")
READ_ALL = ReadStrategy("all")


def WriteQuorum(k: int) -> WriteStrategy:  # noqa: N802
    return WriteStrategy("quorum", k)


def ReadQuorum(k: int) -> ReadStrategy:  # noqa: N802
    return ReadStrategy("quorum", k)


ADAPTIVE = "adaptive"


def parse_strategy(text: str) -> WriteStrategy | ReadStrategy | str:
    """Parse ``read_one``, ``write_quorum:2``, ``adaptive`` and friends."""
    t = text.strip()
    if t == ADAPTIVE:
        return ADAPTIVE
    head, _, arg = t.partition(":")
    table = {
        "write_one": WRITE_ONE,
        "write_all": WRITE_ALL,
        "read_one": READ_ONE,
        "read_all": READ_ALL,
    }
    if head in table and not arg:
        return table[head]
    if head in ("write_quorum", "read_quorum") and arg.isdigit() and int(arg) >= 1:
        return WriteQuorum(int(arg)) if head == "write_quorum" else ReadQuorum(int(arg))
    raise ValueError(f"unknown strategy {text!r}")


def overlap_safe(ws: WriteStrategy, rs: ReadStrategy, n: int) -> bool:
    return ws.size(n) + rs.size(n) > n


# --- workload statistics ----------------------------------------------------

_OPS = "ops/"
_READS = "nm_reads/"


@dataclass(frozen=True)
class WorkloadStats:
    """Per-key op and non-monotone-read counts, each a G-Counter.

    The whole thing is a :class:`MapLattice`, so replicas gossip it like any
    other CRDT and computing a strategy from it needs no coordination.
    """

    counters: MapLattice = dataclasses.field(default_factory=lambda: MapLattice({}, "gcounter"))

    def _bump(self, name: str, replica: int, n: int = 1) -> WorkloadStats:
        current = self.counters.get(name)
        delta = GCounter({replica: current.get(replica) + n})
        return WorkloadStats(self.counters.merge(MapLattice({name: delta}, "gcounter")))

    def record_op(self, key: str, replica: int) -> WorkloadStats:
        return self._bump(_OPS + key, replica)

    def record_nonmonotone_read(self, key: str, replica: int) -> WorkloadStats:
        return self._bump(_READS + key, replica)

    def ops(self, key: str) -> int:
        return self.counters.get(_OPS + key).total()

    def nonmonotone_reads(self, key: str) -> int:
        return self.counters.get(_READS + key).total()

    def merge(self, other: WorkloadStats) -> WorkloadStats:
        return WorkloadStats(self.counters.merge(other.counters))


DEFAULT_THETA = 0.5


def adaptive_strategy(
    stats: WorkloadStats, key: str, n: int, theta: float = DEFAULT_THETA
) -> tuple[WriteStrategy, ReadStrategy]:
    """Pick a safe pair from observed read/write mix on ``key``.

    Read-heavy non-monotone workloads pay at write time (write-all,
    read-one); everything else writes locally and reads all. Reads seen
    before any write leave the ratio undefined, and this replica's counters
    may simply lag, so both sides stay conservative (write-all, read-all).
    """
    ops, reads = stats.ops(key), stats.nonmonotone_reads(key)
    if not ops:
        pair = (WRITE_ALL, READ_ALL) if reads else (WRITE_ONE, READ_ALL)
    else:
        pair = (WRITE_ALL, READ_ONE) if reads / ops > theta else (WRITE_ONE, READ_ALL)
    assert overlap_safe(pair[0], pair[1], n)
    return pair


# --- in-memory protocol -----------------------------------------------------


def _order_from(replica_id: int, n: int) -> list[int]:
    return [replica_id] + [i for i in range(n) if i != replica_id]


def coordinated_read(
    query: StoreQuery,
    rs: ReadStrategy,
    replicas: Sequence[Replica],
    replica_id: int = 0,
    reachable: Iterable[int] | None = None,
) -> Any:
    """Join the stores of ``rs.size(n)`` replicas and evaluate ``query``.

    The querying replica is contacted first, then the others in id order.
    Raises :class:`CoordinationUnavailable` when too few are reachable.
    """
    n = len(replicas)
    need = rs.validate(n).size(n)
    ok = set(range(n)) if reachable is None else set(reachable) | {replica_id}
    chosen = [i for i in _order_from(replica_id, n) if i in ok][:need]
    if len(chosen) < need:
        raise CoordinationUnavailable(f"{rs.name} needs {need} replicas, {len(chosen)} reachable")
    joined = merge_all(replicas[i].store for i in chosen)
    return query.evaluate(joined)


def coordinated_read_outcome(query, rs, replicas, replica_id=0, reachable=None):
    """Like :func:`coordinated_read` but returns :class:`Unavailable` instead of raising."""
    try:
        return coordinated_read(query, rs, replicas, replica_id, reachable)
    except CoordinationUnavailable as exc:
        return Unavailable(str(exc))


@dataclass(frozen=True)
class WriteAck:
    ok: bool
    replicas: tuple[int, ...]
    reason: str = ""


def synchronous_write(
    replicas: Sequence[Replica],
    replica_id: int,
    key: str,
    op: str,
    args: Iterable[Any],
    ws: WriteStrategy,
    reachable: Iterable[int] | None = None,
) -> tuple[list[Replica], WriteAck]:
    """Apply locally, push to peers, acknowledge once ``ws.size(n)`` replicas hold it.

    On failure the local write stays applied (deltas cannot be retracted);
    only the acknowledgement fails.
    """
    n = len(replicas)
    need = ws.validate(n).size(n)
    out = list(replicas)
    writer, _ = apply_local_op(out[replica_id], key, op, args)
    out[replica_id] = writer
    holders = [replica_id]
    ok = set(range(n)) if reachable is None else set(reachable)
    for peer in _order_from(replica_id, n)[1:]:
        if len(holders) >= need:
            break
        if peer not in ok:
            continue
        payload = delta_gossip_payload(writer, writer.ack_of(peer))
        out[peer] = receive_gossip(out[peer], payload)
        holders.append(peer)
    if len(holders) < need:
        return out, WriteAck(False, tuple(holders), f"{ws.name} needs {need}, reached {len(holders)}")
    return out, WriteAck(True, tuple(holders))
