"""Scenario runner: builds clusters, injects faults, collects metrics.

Scenario 1 (under-threshold) pre-crashes one fewer node than the protocol
tolerates and then attacks a non-leader master: the cluster can route
around the victim. Scenario 2 (at-threshold) pre-crashes exactly the
tolerated maximum and attacks the current leader: every remaining node is
quorum-critical, which is where the protocols' behaviour diverges.

Each (rate, repetition) pair runs in a fresh simulation under a seed
derived from the root seed, so a config determines its exports byte for
byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from dataclasses import dataclass, field

from .bft import BftAudit, BftNode, BftTimeouts
from .cluster import ClusterConfig, Protocol, ToleranceBounds
from .faults import (FaultEngine, FaultKind, FaultSpec, LoadModel,
                     resources_under_attack)
from .raft import RaftAudit, RaftNode, RaftTimeouts
from .simnet import (DEFAULT_SERVICE_US, LatencyModel, Simulation, Timer,
                     rng_stream)
from .workload import ClosedLoopClient

SCENARIO_UNDER = "1"
SCENARIO_AT = "2"
SCENARIO_CUSTOM = "custom"

DEFAULT_RATES = (0.0, 2.0, 4.0, 4.5, 5.0, 5.5, 6.0)
_RESOURCE_WINDOW_US = 100_000


class ConfigError(ValueError):
    """The scenario configuration is infeasible; maps to exit code 2."""


class ExportError(OSError):
    """Writing an export file failed; maps to exit code 1."""


class ReportAlignmentError(ValueError):
    """Record sets cannot be compared (empty or mismatched rate grids)."""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = SCENARIO_UNDER
    protocol: Protocol = Protocol.RAFT
    n: int = 5
    clients: int = 2
    attack_rates_gbps: tuple[float, ...] = DEFAULT_RATES
    repetitions: int = 20
    seed: int = 1
    horizon_us: int = 10_000_000
    warmup_us: int = 600_000  # clients and the attack start here
    service_time_us: int = DEFAULT_SERVICE_US
    latency: LatencyModel = field(default_factory=LatencyModel)
    load_model: LoadModel | None = None  # None: LoadModel.default_for(n)
    fault_kind: FaultKind = FaultKind.NETWORK_FLOODING
    pre_crashes: int | None = None  # None: scenario default
    victim: int | str | None = None  # None: scenario default; "leader" or id
    benchmark: str = "0/0"

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.n < 1:
            raise ConfigError("cluster size must be >= 1")
        if self.clients < 1:
            raise ConfigError("need at least one client")
        if any(r < 0 for r in self.attack_rates_gbps):
            raise ConfigError("attack rates must be non-negative")
        if self.scenario not in (SCENARIO_UNDER, SCENARIO_AT, SCENARIO_CUSTOM):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.warmup_us >= self.horizon_us:
            raise ConfigError("horizon must extend past the warmup")
        object.__setattr__(self, "attack_rates_gbps",
                           tuple(float(r) for r in self.attack_rates_gbps))
        if self.scenario == SCENARIO_AT and self.default_pre_crashes() == 0:
            raise ConfigError(
                f"at-threshold scenario needs a crashable node: n={self.n} "
                f"tolerates 0 faults under {self.protocol.value}")

    def bounds(self) -> ToleranceBounds:
        return ToleranceBounds.for_cluster(self.n)

    def tolerated(self) -> int:
        b = self.bounds()
        return b.f_crash if self.protocol is Protocol.RAFT else b.f_byz

    def default_pre_crashes(self) -> int:
        if self.pre_crashes is not None:
            return self.pre_crashes
        if self.scenario == SCENARIO_AT:
            return self.tolerated()
        if self.scenario == SCENARIO_UNDER:
            return max(0, self.tolerated() - 1)
        return 0

    def effective_load_model(self) -> LoadModel:
        return self.load_model or LoadModel.default_for(self.n)


EXPORT_COLUMNS = (
    "run_id", "protocol", "n", "scenario", "attack_rate_gbps", "repetition",
    "seed", "requests_answered", "mean_us", "median_us", "p99_us",
    "leader_changes", "msgs_sent", "msgs_dropped", "cpu_pct_peak",
    "ram_mb_peak", "bandwidth_gbps_min",
)


@dataclass
class MetricsRecord:
    run_id: str
    protocol: str
    n: int
    scenario: str
    attack_rate_gbps: float
    repetition: int
    seed: int
    requests_answered: int
    mean_us: float
    median_us: float
    p99_us: float
    leader_changes: int
    msgs_sent: int
    msgs_dropped: int
    cpu_pct_peak: float
    ram_mb_peak: float
    bandwidth_gbps_min: float
    # diagnostics, not exported
    consensus_times: tuple = field(default=(), repr=False)
    msgs_delivered: int = 0
    victim: int = -1
    resource_series: tuple = field(default=(), repr=False)

    def row(self) -> dict:
        return {
            "run_id": self.run_id,
            "protocol": self.protocol,
            "n": self.n,
            "scenario": self.scenario,
            "attack_rate_gbps": f"{self.attack_rate_gbps:g}",
            "repetition": self.repetition,
            "seed": self.seed,
            "requests_answered": self.requests_answered,
            "mean_us": f"{self.mean_us:.2f}",
            "median_us": f"{self.median_us:.2f}",
            "p99_us": f"{self.p99_us:.2f}",
            "leader_changes": self.leader_changes,
            "msgs_sent": self.msgs_sent,
            "msgs_dropped": self.msgs_dropped,
            "cpu_pct_peak": f"{self.cpu_pct_peak:.2f}",
            "ram_mb_peak": f"{self.ram_mb_peak:.2f}",
            "bandwidth_gbps_min": f"{self.bandwidth_gbps_min:.2f}",
        }


class _ResourceSampler:
    """Periodically converts victim message load into resource snapshots."""

    ADDR = "sampler"

    def __init__(self, victim: int, rate_gbps: float, model: LoadModel,
                 engine: FaultEngine, attack_start_us: int, horizon_us: int):
        self.victim = victim
        self.rate = rate_gbps
        self.model = model
        self.engine = engine
        self.attack_start = attack_start_us
        self.horizon = horizon_us
        self.snapshots = []
        self._last_count = 0

    def start(self, sim: Simulation) -> None:
        sim.add_actor(self.ADDR, self, server=False)
        sim.set_timer(self.ADDR, _RESOURCE_WINDOW_US, "sample")

    def on_message(self, sim, src, msg) -> None:  # pragma: no cover
        pass

    def on_timer(self, sim: Simulation, timer: Timer) -> None:
        count = self.engine.traffic.get(self.victim, 0)
        per_s = (count - self._last_count) * 1_000_000 / _RESOURCE_WINDOW_US
        self._last_count = count
        active = self.rate if sim.now > self.attack_start else 0.0
        self.snapshots.append(resources_under_attack(self.model, active, per_s))
        if sim.now + _RESOURCE_WINDOW_US <= self.horizon:
            sim.set_timer(self.ADDR, _RESOURCE_WINDOW_US, "sample")


def derive_rep_seed(root_seed: int, rate: float, rep: int) -> int:
    return rng_stream(root_seed, f"run:{rate:g}:{rep}").getrandbits(63)


def _pick_victim(config: ScenarioConfig, live: list[int],
                 leader: int | None) -> int:
    if isinstance(config.victim, int):
        if config.victim not in live:
            raise ConfigError(f"victim {config.victim} is not a live node")
        return config.victim
    if config.victim == "leader" or config.scenario == SCENARIO_AT:
        return leader if leader is not None else live[0]
    # Under-threshold default: a non-leader master, so the cluster can
    # tolerate its degradation (the at-threshold run targets the leader).
    for node in sorted(live, reverse=True):
        if node != leader:
            return node
    return live[0]


def run_repetition(config: ScenarioConfig, rate: float, rep: int) -> MetricsRecord:
    """Build and run one fresh simulation; returns its metrics record."""
    seed = derive_rep_seed(config.seed, rate, rep)
    cluster = ClusterConfig(config.n, config.protocol)
    bounds = cluster.bounds
    model = config.effective_load_model()

    sim = Simulation(seed, latency=config.latency,
                     service_time_us=config.service_time_us)
    engine = FaultEngine(model)
    sim.faults = engine

    if config.protocol is Protocol.RAFT:
        audit: RaftAudit | BftAudit = RaftAudit()
        nodes = {i: RaftNode(i, cluster.node_ids, bounds, RaftTimeouts(), audit)
                 for i in cluster.node_ids}
    else:
        audit = BftAudit()
        nodes = {i: BftNode(i, cluster.node_ids, bounds, BftTimeouts(), audit)
                 for i in cluster.node_ids}
    for i, node in nodes.items():
        sim.add_actor(i, node)
    pre_crashed = _apply_pre_crashes(config, engine)
    live = [i for i in cluster.node_ids if i not in pre_crashed]
    if config.protocol is Protocol.RAFT:
        for i in live:
            nodes[i].start(sim)

    clients = [ClosedLoopClient(c, cluster.node_ids, start_us=config.warmup_us)
               for c in range(config.clients)]
    for client in clients:
        client.start(sim)

    sim.run_until(config.warmup_us)
    leader = _current_leader(config.protocol, nodes, audit, live)
    victim = _pick_victim(config, live, leader)
    if rate > 0:
        engine.apply_fault(sim, FaultSpec(
            kind=config.fault_kind, target=victim, rate_gbps=rate,
            start_us=config.warmup_us, stop_us=config.horizon_us))
    sampler = _ResourceSampler(victim, rate, model, engine,
                               config.warmup_us, config.horizon_us)
    sampler.start(sim)
    sim.run_until(config.horizon_us)
    counters = sim.finalize()

    times = tuple(lat for c in clients for _, _, lat in c.records)
    for c in clients:
        assert c.overlap_violations == 0
    changes = (audit.leader_changes if isinstance(audit, RaftAudit)
               else audit.regency_changes)
    snaps = sampler.snapshots
    return MetricsRecord(
        run_id=(f"{config.protocol.value}-n{config.n}-sc{config.scenario}"
                f"-rate{rate:g}-rep{rep}"),
        protocol=config.protocol.value,
        n=config.n,
        scenario=config.scenario,
        attack_rate_gbps=rate,
        repetition=rep,
        seed=seed,
        requests_answered=len(times),
        mean_us=statistics.fmean(times) if times else 0.0,
        median_us=float(statistics.median(times)) if times else 0.0,
        p99_us=_p99(times),
        leader_changes=changes,
        msgs_sent=counters.sent,
        msgs_dropped=counters.dropped,
        cpu_pct_peak=max((s.cpu_pct for s in snaps), default=0.0),
        ram_mb_peak=max((s.ram_mb for s in snaps), default=0.0),
        bandwidth_gbps_min=min((s.bandwidth_gbps for s in snaps),
                               default=model.link_capacity_gbps),
        consensus_times=times,
        msgs_delivered=counters.delivered,
        victim=victim,
        resource_series=tuple(snaps),
    )


def _apply_pre_crashes(config: ScenarioConfig, engine: FaultEngine) -> set[int]:
    count = config.default_pre_crashes()
    if count >= config.n:
        raise ConfigError(f"cannot pre-crash {count} of {config.n} nodes")
    # Highest ids go down so node 0 (the first BFT regency leader) stays up.
    crashed = set(range(config.n - count, config.n))
    for node in crashed:
        engine.crash_now(node)
    return crashed


def _current_leader(protocol: Protocol, nodes, audit, live: list[int]) -> int | None:
    if protocol is Protocol.BFT:
        leader = nodes[live[0]].leader
        return leader if leader in live else None
    if isinstance(audit, RaftAudit) and audit.leaders:
        term, node = audit.leaders[-1]
        return node if node in live else None
    return None


def _p99(times: tuple) -> float:
    if not times:
        return 0.0
    ordered = sorted(times)
    idx = max(0, math.ceil(0.99 * len(ordered)) - 1)
    return float(ordered[idx])


def run_scenario(config: ScenarioConfig) -> list[MetricsRecord]:
    """Run the full (rate x repetition) grid for one protocol."""
    records = []
    for rate in config.attack_rates_gbps:
        for rep in range(config.repetitions):
            records.append(run_repetition(config, rate, rep))
    return records


# -- summaries ----------------------------------------------------------------

@dataclass(frozen=True)
class RateComparison:
    attack_rate_gbps: float
    raft_mean_us: float
    bft_mean_us: float
    ratio_raft_over_bft: float
    raft_leader_changes: int
    bft_regency_changes: int


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[RateComparison, ...]
    raft_collapsed: bool
    bft_collapsed: bool


def summarize(records: list[MetricsRecord]) -> ComparisonReport:
    """Per-rate comparison of the two protocols over one record set."""
    if not records:
        raise ReportAlignmentError("no records to summarize")
    by_proto: dict[str, dict[float, list[MetricsRecord]]] = {}
    for rec in records:
        by_proto.setdefault(rec.protocol, {}).setdefault(
            rec.attack_rate_gbps, []).append(rec)
    raft = by_proto.get(Protocol.RAFT.value)
    bft = by_proto.get(Protocol.BFT.value)
    if not raft or not bft:
        raise ReportAlignmentError("records must cover both protocols")
    if sorted(raft) != sorted(bft):
        raise ReportAlignmentError(
            f"rate grids differ: {sorted(raft)} vs {sorted(bft)}")

    def mean_at(group: dict[float, list[MetricsRecord]], rate: float) -> float:
        times = [t for rec in group[rate] for t in rec.consensus_times]
        if not times:
            times = [rec.mean_us for rec in group[rate] if rec.mean_us > 0]
        return statistics.fmean(times) if times else 0.0

    rows = []
    for rate in sorted(raft):
        r_mean = mean_at(raft, rate)
        b_mean = mean_at(bft, rate)
        rows.append(RateComparison(
            attack_rate_gbps=rate,
            raft_mean_us=r_mean,
            bft_mean_us=b_mean,
            ratio_raft_over_bft=(r_mean / b_mean) if b_mean else 0.0,
            raft_leader_changes=sum(r.leader_changes for r in raft[rate]),
            bft_regency_changes=sum(r.leader_changes for r in bft[rate]),
        ))

    def collapsed(group: dict[float, list[MetricsRecord]]) -> bool:
        base = mean_at(group, sorted(group)[0])
        if base <= 0:
            return False
        return any(mean_at(group, rate) > 10.0 * base for rate in group)

    return ComparisonReport(tuple(rows), collapsed(raft), collapsed(bft))


# -- export ---------------------------------------------------------------------

def _sorted_records(records: list[MetricsRecord]) -> list[MetricsRecord]:
    return sorted(records, key=lambda r: (r.protocol, r.n, r.scenario,
                                          r.attack_rate_gbps, r.repetition))


def export_bytes(records: list[MetricsRecord], fmt: str) -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=EXPORT_COLUMNS,
                                lineterminator="\n")
        writer.writeheader()
        for rec in _sorted_records(records):
            writer.writerow(rec.row())
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        payload = {"records": [rec.row() for rec in _sorted_records(records)]}
        return (json.dumps(payload, indent=2) + "\n").encode("utf-8")
    raise ConfigError(f"unknown export format {fmt!r}")


def export(records: list[MetricsRecord], fmt: str, path: str) -> str:
    data = export_bytes(records, fmt)
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise ExportError(f"cannot write export to {path}: {exc}") from exc
    return path


def records_from_rows(rows: list[dict]) -> list[MetricsRecord]:
    """Rebuild records from exported rows (CSV/JSON round-trip)."""
    records = []
    for row in rows:
        records.append(MetricsRecord(
            run_id=row["run_id"],
            protocol=row["protocol"],
            n=int(row["n"]),
            scenario=str(row["scenario"]),
            attack_rate_gbps=float(row["attack_rate_gbps"]),
            repetition=int(row["repetition"]),
            seed=int(row["seed"]),
            requests_answered=int(row["requests_answered"]),
            mean_us=float(row["mean_us"]),
            median_us=float(row["median_us"]),
            p99_us=float(row["p99_us"]),
            leader_changes=int(row["leader_changes"]),
            msgs_sent=int(row["msgs_sent"]),
            msgs_dropped=int(row["msgs_dropped"]),
            cpu_pct_peak=float(row["cpu_pct_peak"]),
            ram_mb_peak=float(row["ram_mb_peak"]),
            bandwidth_gbps_min=float(row["bandwidth_gbps_min"]),
            consensus_times=(float(row["mean_us"]),) * (
                1 if float(row["mean_us"]) > 0 else 0),
        ))
    return records


def load_records(path: str) -> list[MetricsRecord]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ExportError(f"cannot read records from {path}: {exc}") from exc
    text = data.decode("utf-8")
    if path.endswith(".json") or text.lstrip().startswith("{"):
        return records_from_rows(json.loads(text)["records"])
    reader = csv.DictReader(io.StringIO(text))
    return records_from_rows(list(reader))
