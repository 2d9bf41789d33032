"""Replica state machine: local ops as deltas, full and delta gossip, pruning.

A replica's store is a heterogeneous :class:`MapLattice` from key to CRDT
value; each key's type is fixed by the deployment schema. Every local
operation becomes an :class:`OpRecord` holding the operation's lattice
delta. The version vector tracks, per origin, the highest contiguous
sequence number applied, so the store always equals the join of the deltas
the vector covers.

Two gossip payloads exist. A full payload ships the whole store. A delta
payload ships, per origin, one :class:`DeltaInterval`: the join of that
origin's deltas the receiver has not acknowledged, tagged with their
sequence range. Overlapping intervals are harmless because merge is
idempotent, so a receiver applies an interval whenever it starts at or
before its next expected sequence number and parks it otherwise.
Acknowledgements piggyback on every payload as the sender's version vector.
Intervals that every peer has acknowledged can be pruned from the buffer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from calmcrdt.lattice import (
    OP_TYPES,
    LatticeTypeError,
    LatticeValue,
    MapLattice,
    VersionVector,
    bottom,
    canonical_json,
    decode,
    op_delta,
)
from calmcrdt.polog import CausalBuffer, LogRecord, OpId, PoLog, deliver

# counter ops whose single-argument form means "increment my own slot"
_SELF_SLOT_OPS = ("counter_inc", "pn_inc", "pn_dec")


class UnknownKey(KeyError):
    pass


class MalformedPayload(ValueError):
    pass


@dataclass(frozen=True)
class OpRecord:
    id: OpId
    key: str
    delta: LatticeValue
    predecessors: frozenset[OpId] = frozenset()
    op: str = ""
    args: tuple = ()

    def encode(self) -> dict:
        return {
            "id": list(self.id),
            "key": self.key,
            "delta": self.delta.encode(),
            "preds": sorted(list(p) for p in self.predecessors),
            "op": self.op,
            "args": list(self.args),
        }

    @classmethod
    def decode(cls, obj: Mapping[str, Any]) -> OpRecord:
        return cls(
            OpId(*obj["id"]),
            obj["key"],
            decode(obj["delta"]),
            frozenset(OpId(*p) for p in obj.get("preds", ())),
            obj.get("op", ""),
            tuple(obj.get("args", ())),
        )


@dataclass(frozen=True)
class DeltaInterval:
    """Join of the deltas ``first..last`` from one origin.

    ``records`` holds the individual operations and is only filled when
    replicas keep an operation log.
    """

    origin: int
    first: int
    last: int
    delta: MapLattice
    records: tuple[OpRecord, ...] = ()

    def encode(self) -> dict:
        out = {"origin": self.origin, "first": self.first, "last": self.last, "delta": self.delta.encode()}
        if self.records:
            out["records"] = [r.encode() for r in self.records]
        return out

    @classmethod
    def decode(cls, obj: Mapping[str, Any]) -> DeltaInterval:
        delta = decode(obj["delta"])
        if not isinstance(delta, MapLattice):
            raise MalformedPayload("interval delta is not a map")
        first, last = int(obj["first"]), int(obj["last"])
        if not 1 <= first <= last:
            raise MalformedPayload(f"bad interval {first}..{last}")
        records = tuple(OpRecord.decode(r) for r in obj.get("records", ()))
        return cls(int(obj["origin"]), first, last, delta, records)

    @classmethod
    def of_record(cls, rec: OpRecord, keep_record: bool) -> DeltaInterval:
        return cls(rec.id.origin, rec.id.seq, rec.id.seq, MapLattice({rec.key: rec.delta}), (rec,) if keep_record else ())


def coalesce(intervals: Iterable[DeltaInterval]) -> list[DeltaInterval]:
    """Join intervals of one origin into maximal contiguous runs.

    A replica that caught up through a full payload holds the state but not
    the deltas, so its buffer can have gaps; each side of a gap stays a
    separate run.
    """
    runs: list[DeltaInterval] = []
    seen: set[OpId] = set()
    for iv in sorted(intervals, key=lambda iv: (iv.first, iv.last)):
        extra = tuple(r for r in iv.records if r.id not in seen)
        seen.update(r.id for r in extra)
        if runs and iv.origin != runs[-1].origin:
            raise ValueError("intervals from different origins")
        if runs and iv.first <= runs[-1].last + 1:
            last = runs[-1]
            runs[-1] = DeltaInterval(
                last.origin, last.first, max(last.last, iv.last), last.delta.merge(iv.delta), last.records + extra
            )
        else:
            runs.append(dataclasses.replace(iv, records=extra))
    return runs


@dataclass(frozen=True)
class Replica:
    """One node's state. Treat as a value: every operation returns a new one."""

    id: int
    schema: Mapping[str, str]
    peers: tuple[int, ...] = ()
    store: MapLattice = field(default_factory=MapLattice)
    vv: VersionVector = field(default_factory=VersionVector)
    delta_buffer: tuple[DeltaInterval, ...] = ()
    pending: tuple[DeltaInterval, ...] = ()
    peer_acks: Mapping[int, VersionVector] = field(default_factory=dict)
    stats: MapLattice = field(default_factory=lambda: MapLattice({}, "gcounter"))
    polog: PoLog | None = None
    causal: CausalBuffer = field(default_factory=CausalBuffer)

    def get(self, key: str) -> LatticeValue:
        if key not in self.schema:
            raise UnknownKey(key)
        value = self.store.get(key)
        return bottom(self.schema[key]) if value is None else value

    def ack_of(self, peer: int) -> VersionVector:
        return self.peer_acks.get(peer, VersionVector())


def make_replicas(n: int, schema: Mapping[str, str], track_log: bool = False) -> list[Replica]:
    ids = tuple(range(n))
    return [
        Replica(i, dict(schema), tuple(p for p in ids if p != i), polog=PoLog() if track_log else None)
        for i in ids
    ]


def _frontier(vv: VersionVector) -> frozenset[OpId]:
    return frozenset(OpId(o, s) for o, s in vv.counts.items())


def _mirror(causal: CausalBuffer, polog: PoLog | None, records: Iterable[OpRecord]) -> tuple[CausalBuffer, PoLog | None]:
    if polog is None:
        return causal, None
    for rec in records:
        if rec.id in polog.ids():
            continue
        lr = LogRecord.make(rec.id, rec.op, [rec.key, *rec.args], rec.predecessors)
        causal, polog = deliver(causal, polog, lr)
    return causal, polog


def apply_local_op(r: Replica, key: str, op: str, args: Iterable[Any] = ()) -> tuple[Replica, OpRecord]:
    """Apply an operation at ``r`` and return the new replica and its record."""
    if key not in r.schema:
        raise UnknownKey(f"key {key!r} is not declared")
    args = tuple(args)
    if op in _SELF_SLOT_OPS and len(args) == 1:
        args = (r.id, args[0])
    expected = r.schema[key]
    if op in OP_TYPES and OP_TYPES[op] != expected:
        raise LatticeTypeError(f"{op} produces {OP_TYPES[op]}, key {key!r} is {expected}")
    delta = op_delta(op, *args, state=r.get(key))
    if delta.lattice_type != expected:
        raise LatticeTypeError(f"{op} produces {delta.lattice_type}, key {key!r} is {expected}")
    seq = r.vv.get(r.id) + 1
    rec = OpRecord(OpId(r.id, seq), key, delta, _frontier(r.vv), op, args)
    causal, polog = _mirror(r.causal, r.polog, (rec,))
    new = dataclasses.replace(
        r,
        store=r.store.merge(MapLattice({key: delta})),
        vv=r.vv.advance(r.id, seq),
        delta_buffer=r.delta_buffer + (DeltaInterval.of_record(rec, r.polog is not None),),
        causal=causal,
        polog=polog,
    )
    return new, rec


# --- payloads ---------------------------------------------------------------


def _with_stats(out: dict, stats: MapLattice) -> dict:
    if not stats.is_bottom():
        out["stats"] = stats.encode()
    return out


@dataclass(frozen=True)
class FullPayload:
    sender: int
    store: MapLattice
    vv: VersionVector
    stats: MapLattice = field(default_factory=lambda: MapLattice({}, "gcounter"))

    kind = "full"

    def encode(self) -> dict:
        out = {"kind": "full", "sender": self.sender, "store": self.store.encode(), "vv": self.vv.encode()}
        return _with_stats(out, self.stats)


@dataclass(frozen=True)
class DeltaPayload:
    sender: int
    intervals: tuple[DeltaInterval, ...]
    vv: VersionVector
    stats: MapLattice = field(default_factory=lambda: MapLattice({}, "gcounter"))

    kind = "delta"

    def encode(self) -> dict:
        out = {
            "kind": "delta",
            "sender": self.sender,
            "intervals": [iv.encode() for iv in self.intervals],
            "vv": self.vv.encode(),
        }
        return _with_stats(out, self.stats)

    def is_empty(self) -> bool:
        return not self.intervals


Payload = FullPayload | DeltaPayload


def payload_text(p: Payload) -> str:
    return canonical_json(p.encode())


def payload_bytes(p: Payload) -> int:
    """Size of the canonical serialization in bytes."""
    return len(payload_text(p).encode("utf-8"))


def decode_payload(obj: Mapping[str, Any]) -> Payload:
    try:
        kind = obj["kind"]
        vv = decode(obj["vv"])
        stats = decode(obj.get("stats", {"type": "map<gcounter>", "entries": {}}))
        if not isinstance(vv, VersionVector) or not isinstance(stats, MapLattice):
            raise MalformedPayload("vv/stats have the wrong lattice type")
        if kind == "full":
            store = decode(obj["store"])
            if not isinstance(store, MapLattice):
                raise MalformedPayload("store is not a map")
            return FullPayload(int(obj["sender"]), store, vv, stats)
        if kind == "delta":
            intervals = tuple(DeltaInterval.decode(iv) for iv in obj["intervals"])
            return DeltaPayload(int(obj["sender"]), intervals, vv, stats)
    except MalformedPayload:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedPayload(str(exc)) from exc
    raise MalformedPayload(f"unknown payload kind {kind!r}")


def full_gossip_payload(r: Replica) -> FullPayload:
    return FullPayload(r.id, r.store, r.vv, r.stats)


def delta_gossip_payload(r: Replica, peer_vv: VersionVector) -> DeltaPayload:
    """One coalesced interval per origin covering what ``peer_vv`` lacks."""
    by_origin: dict[int, list[DeltaInterval]] = {}
    for iv in r.delta_buffer:
        if iv.last > peer_vv.get(iv.origin):
            by_origin.setdefault(iv.origin, []).append(iv)
    intervals = tuple(run for o in sorted(by_origin) for run in coalesce(by_origin[o]))
    return DeltaPayload(r.id, intervals, r.vv, r.stats)


def covers(payload: DeltaPayload, r: Replica, peer_vv: VersionVector) -> bool:
    """Whether applying ``payload`` lifts ``peer_vv`` all the way to ``r.vv``."""
    runs = {iv.origin: iv for iv in payload.intervals}
    for origin, seq in r.vv.counts.items():
        have = peer_vv.get(origin)
        if seq <= have:
            continue
        iv = runs.get(origin)
        if iv is None or iv.first > have + 1 or iv.last < seq:
            return False
    return True


def smallest_gossip_payload(r: Replica, peer_vv: VersionVector) -> Payload:
    """The delta payload if it is complete and no larger than the full state.

    A replica that caught up through a full payload lacks the deltas for
    that range, so its delta payload would leave the peer behind; it sends
    the full state instead. A peer whose acknowledgement lags far behind
    would otherwise receive one interval per origin, each repeating map
    structure the merged store shares.
    """
    delta = delta_gossip_payload(r, peer_vv)
    full = full_gossip_payload(r)
    if not covers(delta, r, peer_vv) or payload_bytes(full) < payload_bytes(delta):
        return full
    return delta


def _check_store(r: Replica, store: MapLattice) -> None:
    for key, value in store.entries.items():
        if key not in r.schema:
            raise MalformedPayload(f"payload carries undeclared key {key!r}")
        if value.lattice_type != r.schema[key]:
            raise MalformedPayload(f"key {key!r} carries {value.lattice_type}, schema says {r.schema[key]}")


def _with_ack(acks: Mapping[int, VersionVector], peer: int, vv: VersionVector) -> dict[int, VersionVector]:
    out = dict(acks)
    out[peer] = out.get(peer, VersionVector()).merge(vv)
    return out


def receive_gossip(r: Replica, payload: Payload) -> Replica:
    """Merge a payload. Duplicated or reordered payloads are harmless."""
    if isinstance(payload, FullPayload):
        _check_store(r, payload.store)
        return dataclasses.replace(
            r,
            store=r.store.merge(payload.store),
            vv=r.vv.merge(payload.vv),
            stats=r.stats.merge(payload.stats),
            peer_acks=_with_ack(r.peer_acks, payload.sender, payload.vv),
        )
    if not isinstance(payload, DeltaPayload):
        raise MalformedPayload(f"not a payload: {payload!r}")
    for iv in payload.intervals:
        _check_store(r, iv.delta)

    vv = r.vv
    waiting = [iv for iv in r.pending + payload.intervals if iv.last > vv.get(iv.origin)]
    store, buffer = r.store, list(r.delta_buffer)
    causal, polog = r.causal, r.polog
    progressed = True
    while progressed:
        progressed = False
        for iv in sorted(waiting, key=lambda iv: (iv.origin, iv.first, iv.last)):
            have = vv.get(iv.origin)
            if iv.last <= have:
                waiting.remove(iv)
            elif iv.first <= have + 1:
                waiting.remove(iv)
                store = store.merge(iv.delta)
                vv = vv.advance(iv.origin, iv.last)
                buffer.append(iv)
                causal, polog = _mirror(causal, polog, (rec for rec in iv.records if rec.id.seq > have))
                progressed = True
    return dataclasses.replace(
        r,
        store=store,
        vv=vv,
        delta_buffer=tuple(buffer),
        pending=tuple(sorted(waiting, key=lambda iv: (iv.origin, iv.first, iv.last))),
        stats=r.stats.merge(payload.stats),
        peer_acks=_with_ack(r.peer_acks, payload.sender, payload.vv),
        causal=causal,
        polog=polog,
    )


def prune_delta_buffer(r: Replica, peer_ack_vvs: Iterable[VersionVector]) -> Replica:
    """Drop intervals that every listed peer has acknowledged."""
    acks = list(peer_ack_vvs)
    if not acks:
        return dataclasses.replace(r, delta_buffer=())
    kept = tuple(iv for iv in r.delta_buffer if any(iv.last > a.get(iv.origin) for a in acks))
    if len(kept) == len(r.delta_buffer):
        return r
    return dataclasses.replace(r, delta_buffer=kept)


def prune_acknowledged(r: Replica) -> Replica:
    """Prune using the acknowledgements ``r`` has collected from all its peers."""
    return prune_delta_buffer(r, [r.ack_of(p) for p in r.peers])


def store_of_records(records: Iterable[OpRecord | DeltaInterval]) -> MapLattice:
    out = MapLattice()
    for rec in records:
        out = out.merge(rec.delta if isinstance(rec, DeltaInterval) else MapLattice({rec.key: rec.delta}))
    return out
