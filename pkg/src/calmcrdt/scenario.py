"""Scenario files, metrics and seed sweeps.

A scenario is a text file with one JSON object per line; blank lines and
lines starting with ``#`` are ignored. Every object has a ``kind``:

``config``
    Any :class:`~calmcrdt.simnet.SimConfig` field, e.g.
    ``{"kind": "config", "n_replicas": 3, "p_drop": 0.1}``.
``key``
    ``{"kind": "key", "name": "cart", "type": "2pset"}``.
``policy``
    Default strategies: ``{"kind": "policy", "write": "write_one", "read": "read_all"}``.
    ``"adaptive"`` is allowed for either; ``theta`` sets its threshold.
``expect``
    The documented checker verdict, checked by :func:`sweep`:
    ``convergence`` (bool), ``monotone_violations`` (int) and
    ``anomalies`` (an int, or ``">=N"`` over the sweep).
``op``
    ``{"kind": "op", "t": 0, "replica": 0, "key": "cart", "op": "twopset_add", "args": ["potato"]}``
    with optional ``session`` and ``write``.
``query``
    ``{"kind": "query", "t": 5, "replica": 1, "query": {"query": "contents", "key": "cart"}}``
    or ``"query": {"dsl": "..."}``; optional ``session``, ``plan``, ``read`` and
    ``stale_tolerant``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import statistics
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from calmcrdt import checker
from calmcrdt.simnet import (
    OpInject,
    QueryInject,
    ScenarioError,
    SimConfig,
    Simulation,
    Trace,
    WorkloadEvent,
)

BUNDLED = ("potato_ferrari", "threshold", "rate_limiter", "bulk", "adaptive")
OUT_ENV = "CALMCRDT_OUT"

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}
_OP_FIELDS = {"kind", "t", "replica", "key", "op", "args", "session", "write"}
_QUERY_FIELDS = {"kind", "t", "replica", "query", "session", "plan", "read", "stale_tolerant"}


@dataclass(frozen=True)
class Expectation:
    convergence: bool = True
    monotone_violations: int = 0
    anomalies: int | str | None = None
    note: str = ""

    def anomalies_ok(self, total: int) -> bool:
        if self.anomalies is None:
            return True
        if isinstance(self.anomalies, int):
            return total == self.anomalies
        return total >= int(self.anomalies.removeprefix(">="))


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SimConfig
    schema: Mapping[str, str]
    workload: tuple[WorkloadEvent, ...]
    write: str = "write_one"
    read: str = "read_all"
    expect: Expectation = field(default_factory=Expectation)

    def with_overrides(self, overrides: Mapping[str, Any] | None) -> Scenario:
        """Apply ``seed``, ``gossip_mode``, ``prune``, ``write``, ``read`` or any config field.

        ``write``/``read`` replace the defaults and every per-event strategy,
        so a sweep compares strategies on an otherwise identical workload.
        """
        if not overrides:
            return self
        out = self
        config_changes = {k: v for k, v in overrides.items() if k in _CONFIG_FIELDS and v is not None}
        unknown = set(overrides) - _CONFIG_FIELDS - {"write", "read"}
        if unknown:
            raise ScenarioError(f"unknown override(s): {sorted(unknown)}")
        if config_changes:
            out = dataclasses.replace(out, config=dataclasses.replace(out.config, **config_changes))
        if overrides.get("write"):
            w = overrides["write"]
            wl = tuple(dataclasses.replace(e, write=None) if isinstance(e, OpInject) else e for e in out.workload)
            out = dataclasses.replace(out, write=w, workload=wl)
        if overrides.get("read"):
            r = overrides["read"]
            wl = tuple(dataclasses.replace(e, read=None) if isinstance(e, QueryInject) else e for e in out.workload)
            out = dataclasses.replace(out, read=r, workload=wl)
        return out

    def simulation(self) -> Simulation:
        return Simulation(self.config, self.schema, self.workload, self.write, self.read, self.name)


def _expect_fields(obj: Mapping[str, Any], where: str) -> Expectation:
    anomalies = obj.get("anomalies")
    if anomalies is not None and not isinstance(anomalies, int):
        if not (isinstance(anomalies, str) and anomalies.startswith(">=") and anomalies[2:].isdigit()):
            raise ScenarioError(f"{where}.anomalies: expected an int or '>=N', got {anomalies!r}")
    return Expectation(
        bool(obj.get("convergence", True)),
        int(obj.get("monotone_violations", 0)),
        anomalies,
        str(obj.get("note", "")),
    )


def _require(obj: Mapping[str, Any], names: Sequence[str], where: str) -> None:
    for n in names:
        if n not in obj:
            raise ScenarioError(f"{where}.{n}: missing")


def parse_scenario(text: str, name: str = "") -> Scenario:
    """Parse scenario text. Errors name the line and field."""
    config: dict[str, Any] = {}
    schema: dict[str, str] = {}
    workload: list[WorkloadEvent] = []
    write, read = "write_one", "read_all"
    expect = Expectation()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{where}: not JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ScenarioError(f"{where}: expected an object with a 'kind'")
        kind = obj["kind"]
        if kind == "config":
            extra = set(obj) - _CONFIG_FIELDS - {"kind"}
            if extra:
                raise ScenarioError(f"{where}: unknown config field(s) {sorted(extra)}")
            config.update({k: v for k, v in obj.items() if k != "kind"})
        elif kind == "key":
            _require(obj, ("name", "type"), where)
            schema[obj["name"]] = obj["type"]
        elif kind == "policy":
            write = obj.get("write", write)
            read = obj.get("read", read)
            if "theta" in obj:
                config["theta"] = float(obj["theta"])
        elif kind == "expect":
            expect = _expect_fields(obj, where)
        elif kind == "op":
            _require(obj, ("t", "replica", "key", "op"), where)
            extra = set(obj) - _OP_FIELDS
            if extra:
                raise ScenarioError(f"{where}: unknown op field(s) {sorted(extra)}")
            workload.append(
                OpInject(
                    int(obj["t"]),
                    int(obj["replica"]),
                    obj["key"],
                    obj["op"],
                    tuple(obj.get("args", ())),
                    obj.get("session"),
                    obj.get("write"),
                )
            )
        elif kind == "query":
            _require(obj, ("t", "replica", "query"), where)
            extra = set(obj) - _QUERY_FIELDS
            if extra:
                raise ScenarioError(f"{where}: unknown query field(s) {sorted(extra)}")
            spec = obj["query"]
            if isinstance(spec, str):
                spec = {"dsl": spec}
            workload.append(
                QueryInject(
                    int(obj["t"]),
                    int(obj["replica"]),
                    spec,
                    obj.get("plan", "auto"),
                    obj.get("read"),
                    obj.get("session"),
                    bool(obj.get("stale_tolerant", False)),
                )
            )
        else:
            raise ScenarioError(f"{where}.kind: unknown kind {kind!r}")
    try:
        cfg = SimConfig(**config)
    except TypeError as exc:
        raise ScenarioError(f"config: {exc}") from exc
    scenario = Scenario(name, cfg, schema, tuple(workload), write, read, expect)
    scenario.simulation()  # validates keys, replicas, queries and strategies
    return scenario


def bundled_path(name: str) -> Path:
    stem = name.removesuffix(".scn")
    path = resources.files("calmcrdt") / "scenarios" / f"{stem}.scn"
    return Path(str(path))


def load_scenario(path) -> Scenario:
    """Load a file path, or a bundled scenario by name (``"potato_ferrari"``)."""
    p = Path(path)
    if not p.exists() and p.parent == Path(".") and bundled_path(p.name).exists():
        p = bundled_path(p.name)
    text = p.read_text(encoding="utf-8")
    return parse_scenario(text, p.stem)


# --- metrics ----------------------------------------------------------------


@dataclass
class MetricsReport:
    """Numbers derived from one trace."""

    scenario: str
    seed: int
    gossip_mode: str
    total_bytes: int
    bytes_by_kind: dict[str, int]
    gossip_bytes_by_mode: dict[str, int]
    round_bytes: list[int]
    staleness: dict[int, int]
    query_counts: dict[str, int]
    anomalies: int
    monotone_violations: int
    convergence: bool
    flush_rounds: int
    final_states: list[Any] = field(repr=False, default_factory=list)
    details: list[str] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["staleness"] = {str(k): v for k, v in sorted(self.staleness.items())}
        del out["final_states"]
        return out


def metrics(trace: Trace, anomaly_bound: int = 12) -> MetricsReport:
    """Compute a :class:`MetricsReport` from a quiesced trace."""
    header = trace.header
    cfg = header["config"]
    mode = cfg["gossip_mode"]
    interval = max(1, int(cfg["gossip_interval"]))
    by_kind: Counter[str] = Counter()
    rounds: dict[int, int] = {}
    for rec in trace.of("msg_sent"):
        by_kind[rec["kind"]] += rec["bytes"]
        r = rec["t"] // interval
        rounds[r] = rounds.get(r, 0) + rec["bytes"]
    series = [rounds.get(r, 0) for r in range(max(rounds) + 1)] if rounds else []
    injected = {tuple(rec["id"]): rec["t"] for rec in trace.of("op_injected")}
    staleness = Counter(rec["t"] - injected[tuple(rec["id"])] for rec in trace.of("op_visible"))
    counts = Counter()
    issued = {rec["qid"]: rec for rec in trace.of("query_issued")}
    for ans in trace.of("query_answered"):
        counts[ans["outcome"]] += 1
        if issued[ans["qid"]]["plan"] == "Coordinated":
            counts["coordinated"] += 1
    query_counts = {k: counts.get(k, 0) for k in ("ready", "unknown", "coordinated", "unavailable", "value", "lower_bound")}
    verdict = checker.check(trace, anomaly_bound)
    final = trace.of("final_states")[-1]
    return MetricsReport(
        scenario=header["scenario"],
        seed=cfg["seed"],
        gossip_mode=mode,
        total_bytes=sum(by_kind.values()),
        bytes_by_kind=dict(sorted(by_kind.items())),
        gossip_bytes_by_mode={mode: by_kind.get("gossip", 0) + by_kind.get("push", 0)},
        round_bytes=series,
        staleness=dict(sorted(staleness.items())),
        query_counts=query_counts,
        anomalies=verdict["anomalies"],
        monotone_violations=verdict["monotone_violations"],
        convergence=verdict["convergence"],
        flush_rounds=final["rounds"],
        final_states=final["states"],
        details=verdict["details"],
    )


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def run_scenario(
    path_or_scenario, overrides: Mapping[str, Any] | None = None, trace_path=None
) -> tuple[Trace, MetricsReport]:
    """Run, flush and measure one scenario. Writes the trace when ``trace_path`` is given."""
    sc = path_or_scenario if isinstance(path_or_scenario, Scenario) else load_scenario(path_or_scenario)
    sc = sc.with_overrides(overrides)
    trace = sc.simulation().run()
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace.write(trace_path)
    return trace, metrics(trace)


# --- sweeps -----------------------------------------------------------------


class MonotoneViolation(AssertionError):
    pass


class SweepError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"seed {seed}: {type(cause).__name__}: {cause}")
        self.seed = seed


@dataclass
class SweepReport:
    scenario: str
    seeds: int
    reports: list[MetricsReport] = field(repr=False)

    def _stat(self, values: Sequence[float]) -> dict[str, float]:
        return {"min": min(values), "mean": statistics.fmean(values), "max": max(values)}

    @property
    def anomalies(self) -> int:
        return sum(r.anomalies for r in self.reports)

    @property
    def monotone_violations(self) -> int:
        return sum(r.monotone_violations for r in self.reports)

    @property
    def all_converged(self) -> bool:
        return all(r.convergence for r in self.reports)

    def matches(self, expect: Expectation) -> bool:
        return (
            self.all_converged == expect.convergence
            and self.monotone_violations == expect.monotone_violations
            and expect.anomalies_ok(self.anomalies)
        )

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seeds": self.seeds,
            "anomalies_total": self.anomalies,
            "monotone_violations_total": self.monotone_violations,
            "all_converged": self.all_converged,
            "total_bytes": self._stat([r.total_bytes for r in self.reports]),
            "anomalies": self._stat([r.anomalies for r in self.reports]),
            "flush_rounds": self._stat([r.flush_rounds for r in self.reports]),
            "unavailable": self._stat([r.query_counts["unavailable"] for r in self.reports]),
        }


def sweep(path_or_scenario, n_seeds: int, overrides: Mapping[str, Any] | None = None) -> SweepReport:
    """Run seeds ``0..n_seeds-1``; stop at the first monotone violation."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    sc = path_or_scenario if isinstance(path_or_scenario, Scenario) else load_scenario(path_or_scenario)
    sc = sc.with_overrides({k: v for k, v in (overrides or {}).items() if k != "seed"})
    reports = []
    for seed in range(n_seeds):
        try:
            _, report = run_scenario(sc, {"seed": seed})
        except (ScenarioError, RuntimeError, ValueError) as exc:
            raise SweepError(seed, exc) from exc
        reports.append(report)
        if report.monotone_violations:
            raise MonotoneViolation(f"seed {seed}: {report.details}")
    return SweepReport(sc.name, n_seeds, reports)
