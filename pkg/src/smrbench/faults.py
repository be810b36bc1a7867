"""Fault injection: crash, CPU-load and network-flooding behaviours.

Crash silences a node permanently. CPU load multiplies the victim's
per-message processing time by ``effective_delay_factor``. Network
flooding additionally (above the saturation threshold) makes the victim
fail to process a fraction of inbound messages, delays the victim's own
emissions by the same factor, and raises everyone's link latency in
proportion to the attack rate (the flood shares the physical network).

The Gbps -> slowdown mapping is piecewise linear with a jump at
saturation; the saturation defaults follow the collapse thresholds
observed for 5- and 7-node clusters. All parameters are config-exposed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .simnet import Addr, Simulation


class InvalidFaultError(ValueError):
    pass


class FaultKind(enum.Enum):
    CRASH = "crash"
    CPU_LOAD = "cpu_load"
    NETWORK_FLOODING = "network_flooding"


@dataclass(frozen=True)
class LoadModel:
    """Victim degradation as a function of attack rate (Gbps)."""

    saturation_gbps: float = 4.25
    base_delay_factor: float = 0.05
    post_saturation_drop: float = 0.95
    post_saturation_delay_factor: float = 2.0
    # Network-wide congestion from the flood sharing the fabric: a mild
    # per-Gbps latency slope below saturation; once the victim's link is
    # overwhelmed the excess spills over, adding a jump and a steeper slope.
    shared_latency_slope: float = 0.10
    post_saturation_latency_slope: float = 0.20
    post_saturation_latency_jump: float = 0.70
    link_capacity_gbps: float = 6.0

    def __post_init__(self) -> None:
        if self.saturation_gbps <= 0:
            raise InvalidFaultError("saturation threshold must be positive")
        if not 0.0 <= self.post_saturation_drop <= 1.0:
            raise InvalidFaultError("drop probability must lie in [0, 1]")
        if self.post_saturation_delay_factor < 1.0 or self.base_delay_factor < 0:
            raise InvalidFaultError("delay factors must be >= 1 (slope >= 0)")

    @classmethod
    def default_for(cls, n: int) -> "LoadModel":
        # Larger clusters leave the victim less headroom before collapse.
        return cls(saturation_gbps=4.25 if n <= 5 else 4.1)


def effective_delay_factor(model: LoadModel, rate_gbps: float) -> float:
    """Per-message processing-delay multiplier at the given attack rate."""
    if rate_gbps < 0:
        raise InvalidFaultError(f"attack rate must be >= 0, got {rate_gbps}")
    factor = 1.0 + model.base_delay_factor * rate_gbps
    if rate_gbps >= model.saturation_gbps:
        factor *= model.post_saturation_delay_factor
    return factor


@dataclass(frozen=True)
class ResourceSnapshot:
    cpu_pct: float
    ram_mb: float
    bandwidth_gbps: float


# Resource-proxy coefficients (shape targets, not measured values). The
# attack-rate terms dominate the traffic terms so that peaks stay monotone
# in rate even when a collapsing protocol generates less traffic; above
# saturation the cpu term pins at the clamp, as on a real flooded host.
_CPU_IDLE_PCT = 5.0
_CPU_PER_MSG = 0.0007
_CPU_PER_GBPS = 13.0
_CPU_SATURATED_BONUS = 38.0
_RAM_BASE_MB = 280.0
_RAM_PER_MSG = 0.005
_RAM_PER_GBPS = 55.0
_RAM_SATURATED_BONUS = 120.0


def resources_under_attack(model: LoadModel, rate_gbps: float,
                           traffic_msgs_per_s: float) -> ResourceSnapshot:
    """Victim resource consumption proxies for an attack rate and message load.

    cpu and ram grow monotonically in both arguments and jump once the rate
    crosses saturation; available bandwidth is the link capacity minus the
    attack rate, clamped at zero.
    """
    if rate_gbps < 0:
        raise InvalidFaultError(f"attack rate must be >= 0, got {rate_gbps}")
    saturated = rate_gbps >= model.saturation_gbps
    cpu = (_CPU_IDLE_PCT + _CPU_PER_MSG * traffic_msgs_per_s
           + _CPU_PER_GBPS * rate_gbps
           + (_CPU_SATURATED_BONUS if saturated else 0.0))
    ram = (_RAM_BASE_MB + _RAM_PER_MSG * traffic_msgs_per_s
           + _RAM_PER_GBPS * rate_gbps
           + (_RAM_SATURATED_BONUS if saturated else 0.0))
    bandwidth = max(0.0, model.link_capacity_gbps - rate_gbps)
    return ResourceSnapshot(cpu_pct=min(100.0, cpu), ram_mb=ram,
                            bandwidth_gbps=bandwidth)


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault: what, where, how hard, and when."""

    kind: FaultKind
    target: int
    rate_gbps: float = 0.0
    start_us: int = 0
    stop_us: int | None = None  # crash faults are permanent; stop is ignored

    def __post_init__(self) -> None:
        if self.rate_gbps < 0:
            raise InvalidFaultError("attack rate must be >= 0")
        if self.kind is not FaultKind.CRASH:
            if self.stop_us is not None and self.start_us >= self.stop_us:
                raise InvalidFaultError("fault window must satisfy start < stop")


class FaultEngine:
    """Tracks active faults and answers the engine's per-node fault queries.

    Plugged into :class:`smrbench.simnet.Simulation` as ``sim.faults``.
    Overlapping faults on one target compose multiplicatively.
    """

    def __init__(self, model: LoadModel | None = None):
        self.model = model or LoadModel()
        self._specs: list[FaultSpec] = []
        self._active: list[FaultSpec] = []
        self._crashed: set[Addr] = set()
        self._muted: set[Addr] = set()
        self._behavior_cpu: dict[Addr, float] = {}
        self._cpu: dict[Addr, float] = {}
        self._out: dict[Addr, float] = {}
        self._drop: dict[Addr, float] = {}
        self._latency_factor = 1.0
        self.traffic: dict[Addr, int] = {}

    # -- configuration ----------------------------------------------------

    def apply_fault(self, sim: Simulation, spec: FaultSpec) -> None:
        """Register a fault and schedule its start/stop edges."""
        fault_id = len(self._specs)
        self._specs.append(spec)
        sim.schedule_fault_edge(spec.start_us, fault_id, starting=True)
        if spec.kind is not FaultKind.CRASH and spec.stop_us is not None:
            sim.schedule_fault_edge(spec.stop_us, fault_id, starting=False)

    def crash_now(self, node: Addr) -> None:
        self._crashed.add(node)

    def set_processing_factor(self, node: Addr, factor: float) -> None:
        """Persistent per-node slowdown (used for Delayed byzantine replicas)."""
        self._behavior_cpu[node] = factor
        self._recompute()

    def set_muted(self, node: Addr) -> None:
        """Node keeps processing but its emissions never reach the network."""
        self._muted.add(node)

    # -- fault edges -------------------------------------------------------

    def start(self, sim: Simulation, fault_id: int) -> None:
        spec = self._specs[fault_id]
        if spec.kind is FaultKind.CRASH:
            self._crashed.add(spec.target)
            return
        self._active.append(spec)
        self._recompute()

    def stop(self, sim: Simulation, fault_id: int) -> None:
        spec = self._specs[fault_id]
        if spec in self._active:
            self._active.remove(spec)
            self._recompute()

    def _recompute(self) -> None:
        cpu: dict[Addr, float] = dict(self._behavior_cpu)
        out: dict[Addr, float] = {}
        drop: dict[Addr, float] = {}
        model = self.model
        congestion = 0.0
        for spec in self._active:
            factor = effective_delay_factor(model, spec.rate_gbps)
            cpu[spec.target] = cpu.get(spec.target, 1.0) * factor
            if spec.kind is FaultKind.NETWORK_FLOODING:
                rate = spec.rate_gbps
                congestion += model.shared_latency_slope * min(rate, model.saturation_gbps)
                if rate >= model.saturation_gbps:
                    congestion += (model.post_saturation_latency_jump
                                   + model.post_saturation_latency_slope
                                   * (rate - model.saturation_gbps))
                out[spec.target] = out.get(spec.target, 1.0) * factor
                if rate >= model.saturation_gbps:
                    keep = (1.0 - drop.get(spec.target, 0.0))
                    keep *= (1.0 - model.post_saturation_drop)
                    drop[spec.target] = 1.0 - keep
        self._cpu = cpu
        self._out = out
        self._drop = drop
        self._latency_factor = 1.0 + congestion

    # -- queries from the engine -------------------------------------------

    def is_crashed(self, addr: Addr) -> bool:
        return addr in self._crashed

    def cpu_factor(self, addr: Addr) -> float:
        return self._cpu.get(addr, 1.0)

    def out_factor(self, addr: Addr) -> float:
        return self._out.get(addr, 1.0)

    def is_muted(self, addr: Addr) -> bool:
        return addr in self._muted

    def inbound_drop_prob(self, addr: Addr) -> float:
        return self._drop.get(addr, 0.0)

    def latency_factor(self) -> float:
        return self._latency_factor

    def on_inbound(self, addr: Addr, count: int = 1) -> None:
        self.traffic[addr] = self.traffic.get(addr, 0) + count

    def on_outbound(self, addr: Addr) -> None:
        # Traffic proxies cover both directions: emissions occupy the
        # victim's NIC and CPU just as arrivals do.
        self.traffic[addr] = self.traffic.get(addr, 0) + 1
