"""Pod placement: predicate filtering then weighted 0-10 priority ranking.

Filtering removes work nodes that cannot satisfy a pod's demands
(cpu, ram, host port, storage, label selector). Ranking scores each
survivor with the enabled priority functions, each bounded to [0, 10],
sums them under positive weights, and picks an argmax; exact ties are
broken uniformly at random from the caller's seeded stream.

Score formulas (the orchestrator names are standard, the formulas are
documented here because they are what this module actually computes):

* least-requested: 10 * mean over {cpu, ram} of
  (capacity - requested_after_placement) / capacity.
* balanced allocation: 10 - 10 * |cpu_fraction - ram_fraction|, fractions
  taken after hypothetical placement.
* spread: 10 * (1 - same_service_pods_on_node / max_over_candidates);
  a zero maximum scores 10 everywhere.
* anti-affinity: as spread, but counting same-service pods across the
  group of candidates sharing this node's value for the pod's
  anti-affinity label key.
* node label: 10 if the node carries the preferred label, else 0.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field


class UnschedulableError(RuntimeError):
    """Ranking was asked to choose from an empty candidate list."""


@dataclass
class MinionSpec:
    id: str
    cpu_capacity: float
    ram_capacity: float
    storage_capacity: float
    open_ports: set[int] = field(default_factory=set)
    labels: dict[str, str] = field(default_factory=dict)
    zone: str = ""
    hosted_pods: list[tuple[str, str]] = field(default_factory=list)
    cpu_allocated: float = 0.0
    ram_allocated: float = 0.0
    storage_allocated: float = 0.0

    def __post_init__(self) -> None:
        if self.zone and "zone" not in self.labels:
            self.labels["zone"] = self.zone
        if (self.cpu_allocated > self.cpu_capacity
                or self.ram_allocated > self.ram_capacity
                or self.storage_allocated > self.storage_capacity):
            raise ValueError(f"minion {self.id}: allocations exceed capacity")

    @property
    def free_cpu(self) -> float:
        return self.cpu_capacity - self.cpu_allocated

    @property
    def free_ram(self) -> float:
        return self.ram_capacity - self.ram_allocated

    @property
    def free_storage(self) -> float:
        return self.storage_capacity - self.storage_allocated


@dataclass(frozen=True)
class PodSpec:
    pod_id: str
    service_id: str
    t: float  # requested cpu cycles
    m: float  # requested ram
    p: int    # required host port
    v: float  # requested storage
    selector: dict[str, str] = field(default_factory=dict)
    anti_affinity_label: str | None = None

    def __post_init__(self) -> None:
        if self.t < 0 or self.m < 0 or self.v < 0:
            raise ValueError("pod demands must be non-negative")
        if not 0 < self.p < 65536:
            raise ValueError(f"invalid port {self.p}")


@dataclass(frozen=True)
class PriorityWeights:
    balanced: float = 1.0
    least_requested: float = 1.0
    spread: float = 1.0
    anti_affinity: float = 1.0
    node_label: float = 1.0
    preferred_label: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        ws = (self.balanced, self.least_requested, self.spread,
              self.anti_affinity, self.node_label)
        if any(w < 0 for w in ws):
            raise ValueError("priority weights must be non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one priority weight must be positive")


@dataclass(frozen=True)
class PlacementRecord:
    pod_id: str
    service_id: str
    minion_id: str | None
    status: str  # "placed" | "pending"
    score: float = 0.0


# -- filtering ---------------------------------------------------------------

def pod_fits_resources(pod: PodSpec, minion: MinionSpec) -> bool:
    return minion.free_cpu >= pod.t and minion.free_ram >= pod.m


def pod_fits_host_ports(pod: PodSpec, minion: MinionSpec) -> bool:
    return pod.p not in minion.open_ports


def no_volume_zone_conflict(pod: PodSpec, minion: MinionSpec) -> bool:
    return minion.free_storage >= pod.v


def match_node_selector(pod: PodSpec, minion: MinionSpec) -> bool:
    return all(minion.labels.get(k) == v for k, v in pod.selector.items())


_PREDICATES = (pod_fits_resources, pod_fits_host_ports,
               no_volume_zone_conflict, match_node_selector)


def filter_minions(pod: PodSpec, minions: list[MinionSpec]) -> list[MinionSpec]:
    """Keep exactly the minions that pass every predicate."""
    return [m for m in minions if all(pred(pod, m) for pred in _PREDICATES)]


# -- ranking -----------------------------------------------------------------

def _clamp(score: float) -> float:
    return min(10.0, max(0.0, score))


def _used_fraction(capacity: float, used: float) -> float:
    return used / capacity if capacity > 0 else 1.0


def _free_fraction(capacity: float, requested_after: float) -> float:
    if capacity <= 0:
        return 0.0
    return max(0.0, (capacity - requested_after) / capacity)


def least_requested_score(pod: PodSpec, minion: MinionSpec) -> float:
    cpu_free = _free_fraction(minion.cpu_capacity, minion.cpu_allocated + pod.t)
    ram_free = _free_fraction(minion.ram_capacity, minion.ram_allocated + pod.m)
    return _clamp(10.0 * (cpu_free + ram_free) / 2.0)


def balanced_allocation_score(pod: PodSpec, minion: MinionSpec) -> float:
    cpu_frac = _used_fraction(minion.cpu_capacity, minion.cpu_allocated + pod.t)
    ram_frac = _used_fraction(minion.ram_capacity, minion.ram_allocated + pod.m)
    return _clamp(10.0 - 10.0 * abs(cpu_frac - ram_frac))


def _same_service_count(service_id: str, minion: MinionSpec) -> int:
    return sum(1 for svc, _ in minion.hosted_pods if svc == service_id)


def spread_scores(pod: PodSpec, candidates: list[MinionSpec]) -> list[float]:
    counts = [_same_service_count(pod.service_id, m) for m in candidates]
    top = max(counts, default=0)
    if top == 0:
        return [10.0] * len(candidates)
    return [_clamp(10.0 * (1.0 - c / top)) for c in counts]


def anti_affinity_scores(pod: PodSpec, candidates: list[MinionSpec]) -> list[float]:
    key = pod.anti_affinity_label
    if key is None:
        return [10.0] * len(candidates)
    group_count: dict[str | None, int] = {}
    for m in candidates:
        value = m.labels.get(key)
        group_count[value] = (group_count.get(value, 0)
                              + _same_service_count(pod.service_id, m))
    counts = [group_count[m.labels.get(key)] for m in candidates]
    top = max(counts, default=0)
    if top == 0:
        return [10.0] * len(candidates)
    return [_clamp(10.0 * (1.0 - c / top)) for c in counts]


def node_label_score(weights: PriorityWeights, minion: MinionSpec) -> float:
    if weights.preferred_label is None:
        return 0.0
    key, value = weights.preferred_label
    return 10.0 if minion.labels.get(key) == value else 0.0


def score_minions(pod: PodSpec, candidates: list[MinionSpec],
                  weights: PriorityWeights) -> list[float]:
    """Weighted total score per candidate, in candidate order."""
    spread = spread_scores(pod, candidates)
    anti = anti_affinity_scores(pod, candidates)
    totals = []
    for i, m in enumerate(candidates):
        total = (weights.least_requested * least_requested_score(pod, m)
                 + weights.balanced * balanced_allocation_score(pod, m)
                 + weights.spread * spread[i]
                 + weights.anti_affinity * anti[i]
                 + weights.node_label * node_label_score(weights, m))
        totals.append(total)
    return totals


def rank_minions(pod: PodSpec, candidates: list[MinionSpec],
                 weights: PriorityWeights, rng: random.Random) -> MinionSpec:
    """Pick an argmax of the weighted scores; ties break uniformly at random."""
    if not candidates:
        raise UnschedulableError(f"no candidate minions for pod {pod.pod_id}")
    totals = score_minions(pod, candidates, weights)
    best = max(totals)
    tied = [m for m, s in zip(candidates, totals) if s == best]
    return tied[0] if len(tied) == 1 else rng.choice(tied)


def place_pod(pod: PodSpec, minions: list[MinionSpec],
              weights: PriorityWeights, rng: random.Random) -> PlacementRecord:
    """Filter, rank, and commit the pod's demands to the chosen minion."""
    survivors = filter_minions(pod, minions)
    if not survivors:
        return PlacementRecord(pod.pod_id, pod.service_id, None, "pending")
    totals = score_minions(pod, survivors, weights)
    best = max(totals)
    tied = [m for m, s in zip(survivors, totals) if s == best]
    chosen = tied[0] if len(tied) == 1 else rng.choice(tied)
    chosen.cpu_allocated += pod.t
    chosen.ram_allocated += pod.m
    chosen.storage_allocated += pod.v
    chosen.open_ports.add(pod.p)
    chosen.hosted_pods.append((pod.service_id, pod.pod_id))
    return PlacementRecord(pod.pod_id, pod.service_id, chosen.id, "placed", best)


# -- config-file loading -------------------------------------------------------

def minion_from_dict(raw: dict) -> MinionSpec:
    return MinionSpec(
        id=str(raw["id"]),
        cpu_capacity=float(raw["cpu_capacity"]),
        ram_capacity=float(raw["ram_capacity"]),
        storage_capacity=float(raw["storage_capacity"]),
        open_ports=set(raw.get("open_ports", ())),
        labels=dict(raw.get("labels", {})),
        zone=raw.get("zone", ""),
        hosted_pods=[tuple(x) for x in raw.get("hosted_pods", [])],
        cpu_allocated=float(raw.get("cpu_allocated", 0.0)),
        ram_allocated=float(raw.get("ram_allocated", 0.0)),
        storage_allocated=float(raw.get("storage_allocated", 0.0)),
    )


def pod_from_dict(raw: dict) -> PodSpec:
    return PodSpec(
        pod_id=str(raw["pod_id"]),
        service_id=str(raw["service_id"]),
        t=float(raw.get("t", 0.0)),
        m=float(raw.get("m", 0.0)),
        p=int(raw.get("p", 80)),
        v=float(raw.get("v", 0.0)),
        selector=dict(raw.get("selector", {})),
        anti_affinity_label=raw.get("anti_affinity_label"),
    )


def weights_from_dict(raw: dict) -> PriorityWeights:
    preferred = raw.get("preferred_label")
    return PriorityWeights(
        balanced=float(raw.get("balanced", 1.0)),
        least_requested=float(raw.get("least_requested", 1.0)),
        spread=float(raw.get("spread", 1.0)),
        anti_affinity=float(raw.get("anti_affinity", 1.0)),
        node_label=float(raw.get("node_label", 1.0)),
        preferred_label=tuple(preferred) if preferred else None,
    )
