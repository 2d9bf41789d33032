"""Deterministic discrete-event simulation of a replicated CRDT store.

Time is in logical ticks. Events run in ``(time, insertion order)`` order
and one seeded :class:`random.Random` supplies every random choice, in
event order, so a ``(config, workload)`` pair always yields the same trace.

Every message send samples a latency in ``[latency_min, latency_max]``,
a drop with probability ``p_drop`` and a duplicate with probability
``p_dup``. Each replica gossips to one random peer every
``gossip_interval`` ticks while the workload is active. At the end,
:func:`quiesce_and_flush` turns faults off and runs all-pairs anti-entropy
rounds until every replica holds the same state.

Clients are grouped in sessions. A session issues its events in order and
waits for each write acknowledgement or query answer before the next one,
so a read issued after an acknowledged write can rely on it.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from calmcrdt import dsl
from calmcrdt.coordination import (
    ADAPTIVE,
    DEFAULT_THETA,
    READ_ALL,
    READ_ONE,
    WorkloadStats,
    adaptive_strategy,
    parse_strategy,
)
from calmcrdt.lattice import MapLattice, VersionVector, canonical_json, merge_all, validate_type
from calmcrdt.query import Ready, StoreQuery, encode_result, resolve
from calmcrdt.replication import (
    Replica,
    apply_local_op,
    full_gossip_payload,
    make_replicas,
    payload_bytes,
    prune_acknowledged,
    receive_gossip,
    smallest_gossip_payload,
)


class ScenarioError(ValueError):
    """The workload refers to something that does not exist."""


class SimulationError(RuntimeError):
    pass


class InvariantViolation(SimulationError):
    pass


FULL = "full"
DELTA = "delta"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_replicas: int = 3
    latency_min: int = 1
    latency_max: int = 5
    p_drop: float = 0.0
    p_dup: float = 0.0
    gossip_interval: int = 4
    gossip_mode: str = DELTA
    max_ticks: int = 10_000
    prune: bool = True
    coord_timeout: int = 60
    theta: float = DEFAULT_THETA
    staleness_horizon: int | None = None
    check_invariants: bool = True

    def validate(self) -> SimConfig:
        if self.n_replicas < 1:
            raise ScenarioError("n_replicas must be at least 1")
        if not 0 <= self.latency_min <= self.latency_max:
            raise ScenarioError("need 0 <= latency_min <= latency_max")
        for name in ("p_drop", "p_dup"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ScenarioError(f"{name} must be in [0, 1]")
        if self.p_drop >= 1.0:
            raise ScenarioError("p_drop must be below 1 or nothing is ever delivered")
        if self.gossip_interval < 1:
            raise ScenarioError("gossip_interval must be positive")
        if self.gossip_mode not in (FULL, DELTA):
            raise ScenarioError(f"gossip_mode must be 'full' or 'delta', got {self.gossip_mode!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --- workload events --------------------------------------------------------


@dataclass(frozen=True)
class OpInject:
    time: int
    replica: int
    key: str
    op: str
    args: tuple = ()
    session: str | None = None
    write: str | None = None  # strategy name; None means the run default


@dataclass(frozen=True)
class QueryInject:
    time: int
    replica: int
    query: Mapping[str, Any]  # {"query": name, "key": k} or {"dsl": text}
    plan: str = "auto"  # auto | LocalThreshold | LocalLowerBound | Coordinated
    read: str | None = None
    session: str | None = None
    stale_tolerant: bool = False


WorkloadEvent = OpInject | QueryInject


def _session(ev: WorkloadEvent) -> str:
    return ev.session if ev.session is not None else f"r{ev.replica}"


# --- trace ------------------------------------------------------------------


@dataclass
class Trace:
    """Everything that happened in a run, as JSON-compatible records."""

    records: list[dict] = field(default_factory=list)

    def add(self, rec: str, t: int, **fields: Any) -> dict:
        entry = {"rec": rec, "t": t, **fields}
        self.records.append(entry)
        return entry

    def of(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["rec"] == kind]

    @property
    def header(self) -> dict:
        return self.records[0]

    def to_jsonl(self) -> str:
        return "".join(canonical_json(r) + "\n" for r in self.records)

    def to_bytes(self) -> bytes:
        return self.to_jsonl().encode("utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> Trace:
        import json

        return cls([json.loads(line) for line in text.splitlines() if line.strip()])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> Trace:
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


# --- simulator --------------------------------------------------------------


@dataclass
class _Message:
    id: int
    src: int
    dst: int
    kind: str  # gossip | push | ack | read_req | read_resp
    body: Any
    size: int


@dataclass
class _PendingWrite:
    op_id: tuple[int, int]
    session: str
    need: int
    holders: set[int]
    done: bool = False


@dataclass
class _PendingRead:
    qid: int
    replica: int
    session: str
    query: StoreQuery
    need: int
    states: dict[int, MapLattice]
    cuts: dict[int, VersionVector]
    strategy: str
    done: bool = False


class Simulation:
    """One run. Build with a config, schema and workload, then :meth:`run`."""

    def __init__(
        self,
        config: SimConfig,
        schema: Mapping[str, str],
        workload: Sequence[WorkloadEvent],
        write_default: str = "write_one",
        read_default: str = "read_all",
        scenario_name: str = "",
    ):
        self.config = config.validate()
        self.schema = {k: validate_type(t) for k, t in schema.items()}
        self.workload = list(workload)
        self.write_default = write_default
        self.read_default = read_default
        self.rng = random.Random(config.seed)
        self.trace = Trace()
        self.time = 0
        self._queue: list[tuple[int, int, str, Any]] = []
        self._seq = itertools.count()
        self._msg_ids = itertools.count()
        self._qids = itertools.count()
        self.replicas: list[Replica] = make_replicas(config.n_replicas, self.schema)
        self.global_store = MapLattice()
        self.inject_time: dict[tuple[int, int], int] = {}
        self.sessions_busy: dict[str, bool] = {}
        self.backlog: dict[str, list[WorkloadEvent]] = {}
        self.writes: dict[tuple[int, int], _PendingWrite] = {}
        self.reads: dict[int, _PendingRead] = {}
        self.in_flight = 0
        self.faults = True
        self.use_stats = self._uses_adaptive()
        self._queries: dict[str, StoreQuery] = {}
        self._validate()
        self.horizon = max((ev.time for ev in self.workload), default=0)
        self.scenario_name = scenario_name

    # -- setup ---------------------------------------------------------------

    def _uses_adaptive(self) -> bool:
        names = [self.write_default, self.read_default]
        for ev in self.workload:
            names.append(getattr(ev, "write", None) or "")
            names.append(getattr(ev, "read", None) or "")
        return ADAPTIVE in names

    def _query(self, spec: Mapping[str, Any]) -> StoreQuery:
        text = canonical_json(dict(spec))
        if text not in self._queries:
            self._queries[text] = resolve(spec, self.schema)
        return self._queries[text]

    def _validate(self) -> None:
        n = self.config.n_replicas
        for name in (self.write_default, self.read_default):
            try:
                self._strategy(name)
            except ValueError as exc:
                raise ScenarioError(f"policy: {exc}") from exc
        for i, ev in enumerate(self.workload):
            where = f"workload[{i}]"
            if not 0 <= ev.replica < n:
                raise ScenarioError(f"{where}: unknown replica {ev.replica}")
            if ev.time < 0 or ev.time > self.config.max_ticks:
                raise ScenarioError(f"{where}: time {ev.time} outside [0, max_ticks]")
            try:
                if isinstance(ev, OpInject):
                    if ev.key not in self.schema:
                        raise ScenarioError(f"unknown key {ev.key!r}")
                    if ev.write:
                        self._strategy(ev.write)
                else:
                    self._query(ev.query)
                    if ev.plan not in ("auto", *dsl.PLAN_MODES):
                        raise ScenarioError(f"unknown plan mode {ev.plan!r}")
                    if ev.read:
                        self._strategy(ev.read)
            except (ValueError, TypeError) as exc:
                raise ScenarioError(f"{where}: {exc}") from exc

    def _strategy(self, name: str):
        s = parse_strategy(name)
        if s != ADAPTIVE:
            s.validate(self.config.n_replicas)
        return s

    # -- event plumbing -----------------------------------------------------

    def _schedule(self, time: int, kind: str, data: Any = None) -> None:
        heapq.heappush(self._queue, (time, next(self._seq), kind, data))

    def _send(self, src: int, dst: int, kind: str, body: Any, size: int) -> None:
        msg = _Message(next(self._msg_ids), src, dst, kind, body, size)
        self.trace.add("msg_sent", self.time, msg=msg.id, src=src, dst=dst, kind=kind, bytes=size)
        copies = 1
        if self.faults:
            if self.rng.random() < self.config.p_drop:
                self.trace.add("msg_dropped", self.time, msg=msg.id)
                return
            if self.rng.random() < self.config.p_dup:
                copies = 2
        for _ in range(copies):
            delay = self.rng.randint(self.config.latency_min, self.config.latency_max)
            self.in_flight += 1
            self._schedule(self.time + delay, "deliver", msg)

    def _payload_for(self, src: int, dst: int):
        r = self.replicas[src]
        if self.config.gossip_mode == FULL:
            return full_gossip_payload(r)
        return smallest_gossip_payload(r, r.ack_of(dst))

    def _send_gossip(self, src: int, dst: int, kind: str = "gossip", extra: Any = None) -> None:
        payload = self._payload_for(src, dst)
        self._send(src, dst, kind, (payload, extra), payload_bytes(payload))

    # -- replica updates -----------------------------------------------------

    def _set_replica(self, i: int, new: Replica) -> None:
        old = self.replicas[i]
        self.replicas[i] = new
        if new.vv is not old.vv:
            for origin, seq in new.vv.counts.items():
                for s in range(old.vv.get(origin) + 1, seq + 1):
                    if origin != i:
                        self.trace.add("op_visible", self.time, replica=i, id=[origin, s])
        if self.config.check_invariants and not new.store.leq(self.global_store):
            raise InvariantViolation(f"replica {i} holds state beyond the global join at t={self.time}")

    def _receive(self, i: int, payload) -> None:
        r = receive_gossip(self.replicas[i], payload)
        if self.config.prune:
            r = prune_acknowledged(r)
        self._set_replica(i, r)

    # -- workload ------------------------------------------------------------

    def _start(self, ev: WorkloadEvent) -> None:
        s = _session(ev)
        if self.sessions_busy.get(s):
            self.backlog.setdefault(s, []).append(ev)
            return
        self.sessions_busy[s] = True
        if isinstance(ev, OpInject):
            self._do_op(ev, s)
        else:
            self._do_query(ev, s)

    def _finish(self, session: str) -> None:
        self.sessions_busy[session] = False
        waiting = self.backlog.get(session)
        if waiting:
            self._start(waiting.pop(0))

    def _stats(self, i: int) -> WorkloadStats:
        return WorkloadStats(self.replicas[i].stats)

    def _put_stats(self, i: int, stats: WorkloadStats) -> None:
        self.replicas[i] = dataclasses.replace(self.replicas[i], stats=stats.counters)

    def _do_op(self, ev: OpInject, session: str) -> None:
        i = ev.replica
        strategy_name = ev.write or self.write_default
        ws = self._strategy(strategy_name)
        if ws == ADAPTIVE:
            ws = adaptive_strategy(self._stats(i), ev.key, self.config.n_replicas, self.config.theta)[0]
        if self.use_stats:
            self._put_stats(i, self._stats(i).record_op(ev.key, i))
        before = self.replicas[i]
        new, rec = apply_local_op(before, ev.key, ev.op, ev.args)
        self.global_store = self.global_store.merge(MapLattice({rec.key: rec.delta}))
        op_id = tuple(rec.id)
        self.inject_time[op_id] = self.time
        self.trace.add(
            "op_injected",
            self.time,
            replica=i,
            session=session,
            id=list(op_id),
            key=ev.key,
            op=rec.op,
            args=list(rec.args),
            delta=rec.delta.encode(),
            deps=before.vv.encode()["counts"],
            write=ws.name,
        )
        self._set_replica(i, new)
        need = ws.size(self.config.n_replicas)
        if need <= 1:
            self.trace.add("op_ack", self.time, id=list(op_id), ok=True, holders=[i])
            self._finish(session)
            return
        self.writes[op_id] = _PendingWrite(op_id, session, need, {i})
        for peer in new.peers:
            self._send_gossip(i, peer, "push", op_id)
        self._schedule(self.time + self.config.coord_timeout, "write_timeout", op_id)

    def _resolve_plan(self, ev: QueryInject, q: StoreQuery) -> str:
        if ev.plan != "auto":
            return ev.plan
        if "dsl" in q.spec:
            ast = dsl.parse(q.spec["dsl"], self.schema)
            return dsl.plan(ast, dsl.classify(ast), ev.stale_tolerant).mode
        if q.threshold:
            return dsl.LOCAL_THRESHOLD
        if q.monotone and ev.stale_tolerant:
            return dsl.LOCAL_LOWER_BOUND
        return dsl.COORDINATED

    def _do_query(self, ev: QueryInject, session: str) -> None:
        i = ev.replica
        q = self._query(ev.query)
        mode = self._resolve_plan(ev, q)
        qid = next(self._qids)
        strategy = ""
        if mode == dsl.COORDINATED:
            rs = self._strategy(ev.read or self.read_default)
            if rs == ADAPTIVE:
                picks = [adaptive_strategy(self._stats(i), k, self.config.n_replicas, self.config.theta)[1] for k in q.keys]
                rs = READ_ALL if any(p == READ_ALL for p in picks) else READ_ONE
            strategy = rs.name
        if self.use_stats and not q.monotone:
            stats = self._stats(i)
            for k in q.keys:
                stats = stats.record_nonmonotone_read(k, i)
            self._put_stats(i, stats)
        self.trace.add(
            "query_issued",
            self.time,
            qid=qid,
            replica=i,
            session=session,
            query=dict(q.spec),
            plan=mode,
            strategy=strategy,
            monotone=q.monotone,
            threshold=q.threshold,
        )
        local = self.replicas[i]
        if mode == dsl.LOCAL_THRESHOLD:
            ready = isinstance(q.evaluate(local.store), Ready)
            self._answer(qid, i, q, "ready" if ready else "unknown", True if ready else None, local.store, local.vv)
            self._finish(session)
            return
        if mode == dsl.LOCAL_LOWER_BOUND:
            self._answer(qid, i, q, "lower_bound", q.value(local.store), local.store, local.vv)
            self._finish(session)
            return
        need = rs.size(self.config.n_replicas)
        pending = _PendingRead(qid, i, session, q, need, {i: local.store}, {i: local.vv}, strategy)
        self.reads[qid] = pending
        if need <= 1:
            self._complete_read(pending)
            return
        for peer in local.peers:
            self._send(i, peer, "read_req", (qid, q.keys), len(canonical_json([qid, list(q.keys)])))
        self._schedule(self.time + self.config.coord_timeout, "read_timeout", qid)

    def _answer(self, qid, replica, q: StoreQuery, outcome: str, value, state: MapLattice, cut: VersionVector) -> None:
        snapshot = MapLattice({k: v for k, v in state.entries.items() if k in q.keys})
        self.trace.add("state_snapshot", self.time, qid=qid, replica=replica, value=snapshot.encode())
        self.trace.add(
            "query_answered",
            self.time,
            qid=qid,
            outcome=outcome,
            value=encode_result(value),
            cut=cut.encode()["counts"],
        )

    def _complete_read(self, pending: _PendingRead) -> None:
        pending.done = True
        joined = merge_all(pending.states.values())
        cut = merge_all(pending.cuts.values())
        outcome = pending.query.evaluate(joined)
        if pending.query.threshold:
            kind, value = ("ready", True) if isinstance(outcome, Ready) else ("unknown", None)
        else:
            kind, value = "value", outcome
        self._answer(pending.qid, pending.replica, pending.query, kind, value, joined, cut)
        del self.reads[pending.qid]
        self._finish(pending.session)

    # -- handlers ------------------------------------------------------------

    def _on_deliver(self, msg: _Message) -> None:
        self.in_flight -= 1
        self.trace.add("msg_delivered", self.time, msg=msg.id, dst=msg.dst)
        if msg.kind in ("gossip", "push"):
            payload, op_id = msg.body
            self._receive(msg.dst, payload)
            if msg.kind == "push" and self.replicas[msg.dst].vv.get(op_id[0]) >= op_id[1]:
                self._send(msg.dst, msg.src, "ack", op_id, len(canonical_json(list(op_id))))
        elif msg.kind == "ack":
            w = self.writes.get(msg.body)
            if w and not w.done:
                w.holders.add(msg.src)
                if len(w.holders) >= w.need:
                    w.done = True
                    self.trace.add("op_ack", self.time, id=list(w.op_id), ok=True, holders=sorted(w.holders))
                    self._finish(w.session)
        elif msg.kind == "read_req":
            qid, keys = msg.body
            r = self.replicas[msg.dst]
            snapshot = MapLattice({k: v for k, v in r.store.entries.items() if k in keys})
            size = len(canonical_json(snapshot.encode()))
            self._send(msg.dst, msg.src, "read_resp", (qid, snapshot, r.vv), size)
        elif msg.kind == "read_resp":
            qid, snapshot, vv = msg.body
            pending = self.reads.get(qid)
            if pending and not pending.done and msg.src not in pending.states:
                pending.states[msg.src] = snapshot
                pending.cuts[msg.src] = vv
                if len(pending.states) >= pending.need:
                    self._complete_read(pending)

    def _on_gossip_tick(self, i: int) -> None:
        r = self.replicas[i]
        if r.peers:
            peer = r.peers[self.rng.randrange(len(r.peers))]
            self._send_gossip(i, peer)
        if self._active():
            self._schedule(self.time + self.config.gossip_interval, "gossip_tick", i)

    def _active(self) -> bool:
        return (
            self.time < self.horizon
            or any(self.sessions_busy.values())
            or any(self.backlog.values())
            or bool(self.reads)
            or any(not w.done for w in self.writes.values())
        )

    def _dispatch(self, kind: str, data: Any) -> None:
        if kind == "workload":
            self._start(data)
        elif kind == "deliver":
            self._on_deliver(data)
        elif kind == "gossip_tick":
            self._on_gossip_tick(data)
        elif kind == "write_timeout":
            w = self.writes.get(data)
            if w and not w.done:
                w.done = True
                self.trace.add("op_ack", self.time, id=list(w.op_id), ok=False, holders=sorted(w.holders))
                self._finish(w.session)
        elif kind == "read_timeout":
            pending = self.reads.get(data)
            if pending and not pending.done:
                pending.done = True
                self.trace.add("query_answered", self.time, qid=pending.qid, outcome="unavailable", value=None, cut={})
                del self.reads[data]
                self._finish(pending.session)

    def _drain(self) -> None:
        while self._queue:
            time, _, kind, data = heapq.heappop(self._queue)
            if time > self.config.max_ticks:
                raise SimulationError(f"run exceeded max_ticks={self.config.max_ticks}")
            self.time = time
            self._dispatch(kind, data)

    # -- public --------------------------------------------------------------

    def run(self) -> Trace:
        cfg = self.config
        self.trace.add(
            "header",
            0,
            scenario=self.scenario_name,
            config=cfg.to_dict(),
            schema=dict(sorted(self.schema.items())),
            n_replicas=cfg.n_replicas,
            write_default=self.write_default,
            read_default=self.read_default,
        )
        for i in range(cfg.n_replicas):
            self._schedule(self.rng.randrange(cfg.gossip_interval), "gossip_tick", i)
        for ev in self.workload:
            self._schedule(ev.time, "workload", ev)
        self._drain()
        quiesce_and_flush(self)
        return self.trace


def _converged(sim: Simulation) -> bool:
    first = sim.replicas[0]
    return all(r.vv == first.vv and r.store == first.store for r in sim.replicas[1:])


def quiesce_and_flush(sim: Simulation) -> Simulation:
    """Disable faults and run all-pairs anti-entropy until replicas agree.

    Appends the ``final_states`` record that marks the trace as quiesced.
    """
    sim.faults = False
    rounds = 0
    while not _converged(sim) or sim.in_flight:
        if sim.time > sim.config.max_ticks:
            vvs = [r.vv.counts for r in sim.replicas]
            raise SimulationError(f"no convergence within max_ticks={sim.config.max_ticks}; vvs={vvs}")
        if sim.in_flight:
            sim._drain()
            continue
        rounds += 1
        for i, r in enumerate(sim.replicas):
            for peer in r.peers:
                sim._send_gossip(i, peer)
        sim._drain()
    sim.trace.add(
        "final_states",
        sim.time,
        rounds=rounds,
        states=[r.store.encode() for r in sim.replicas],
        vvs=[r.vv.encode()["counts"] for r in sim.replicas],
    )
    return sim


def run(
    config: SimConfig,
    workload: Sequence[WorkloadEvent],
    schema: Mapping[str, str],
    write_default: str = "write_one",
    read_default: str = "read_all",
    scenario_name: str = "",
) -> Trace:
    return Simulation(config, schema, workload, write_default, read_default, scenario_name).run()
