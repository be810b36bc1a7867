"""Deterministic single-queue discrete-event engine.

All simulated time is integer microseconds. One ordered heap of events
drives every node, client, timer and fault edge; ties are broken by a
strictly increasing insertion sequence number, so a (config, seed) pair
fully determines the run.

Randomness: one root seed per simulation. Every consumer draws from its
own named stream so that adding an actor never perturbs another actor's
draws. Streams are derived by hashing the root seed with a label:

    stream = random.Random(int.from_bytes(
        sha256(f"{root_seed}:{label}".encode()).digest()[:8], "big"))

Labels in use: ``link:<addr>`` (latency/drop draws for messages sent by
that actor), ``actor:<addr>`` (protocol-internal draws such as election
timeouts), ``fault:<node>`` (inbound-drop draws at a fault victim).

Message handling models each node as a serial server: a delivered message
occupies the node for ``service_time_us`` (scaled by any active fault
factor) before its effects -- including any messages it emits -- become
visible. Clients are not servers and handle instantly.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

Addr = int | str  # nodes are ints, clients are strings like "c0"

DEFAULT_SERVICE_US = 110


def rng_stream(root_seed: int, label: str) -> random.Random:
    """Derive an independent named RNG stream from the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class EngineFaultError(RuntimeError):
    """A protocol bug surfaced at the engine: e.g. scheduling in the past."""


class InvalidTargetError(ValueError):
    """Message addressed to an actor the simulation does not know."""


@dataclass(frozen=True)
class LatencyModel:
    """Point-to-point delivery delay, drawn uniformly per message."""

    min_latency_us: int = 50
    max_latency_us: int = 200
    drop_probability: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.min_latency_us <= self.max_latency_us:
            raise ValueError("latency bounds must satisfy 0 <= min <= max")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")


class _NullFaults:
    """Fault hooks used when no fault engine is attached."""

    def is_crashed(self, addr: Addr) -> bool:
        return False

    def cpu_factor(self, addr: Addr) -> float:
        return 1.0

    def out_factor(self, addr: Addr) -> float:
        return 1.0

    def is_muted(self, addr: Addr) -> bool:
        return False

    def inbound_drop_prob(self, addr: Addr) -> float:
        return 0.0

    def latency_factor(self) -> float:
        return 1.0

    def start(self, sim: "Simulation", fault_id: int) -> None:  # pragma: no cover
        raise EngineFaultError("fault edge fired without a fault engine")

    def stop(self, sim: "Simulation", fault_id: int) -> None:  # pragma: no cover
        raise EngineFaultError("fault edge fired without a fault engine")

    def on_inbound(self, addr: Addr, count: int = 1) -> None:
        pass

    def on_outbound(self, addr: Addr) -> None:
        pass


class Deliver:
    __slots__ = ("src", "dst", "msg")

    def __init__(self, src: Addr, dst: Addr, msg: object):
        self.src = src
        self.dst = dst
        self.msg = msg


class Timer:
    """Cancellable timer handle; cancelled timers are skipped at fire time."""

    __slots__ = ("owner", "tag", "fire_at", "cancelled")

    def __init__(self, owner: Addr, tag: str, fire_at: int):
        self.owner = owner
        self.tag = tag
        self.fire_at = fire_at
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class FaultEdge:
    __slots__ = ("fault_id", "starting")

    def __init__(self, fault_id: int, starting: bool):
        self.fault_id = fault_id
        self.starting = starting


@dataclass
class Counters:
    sent: int = 0
    delivered: int = 0
    dropped_network: int = 0
    dropped_crashed: int = 0
    dropped_flooded: int = 0
    dropped_muted: int = 0
    dropped_horizon: int = 0

    @property
    def dropped(self) -> int:
        return (self.dropped_network + self.dropped_crashed
                + self.dropped_flooded + self.dropped_muted
                + self.dropped_horizon)


@dataclass(frozen=True)
class EngineReport:
    dispatched: int
    clock_us: int


class Simulation:
    """One self-contained simulation instance; owns all mutable state."""

    def __init__(self, seed: int, latency: LatencyModel | None = None,
                 service_time_us: int = DEFAULT_SERVICE_US,
                 record_trace: bool = False):
        self.seed = seed
        self.now = 0
        self.latency = latency or LatencyModel()
        self.service_time_us = service_time_us
        self.counters = Counters()
        self.faults = _NullFaults()
        self.trace: list[str] | None = [] if record_trace else None
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0
        self._actors: dict[Addr, object] = {}
        self._servers: set[Addr] = set()
        self._busy: dict[Addr, int] = {}
        self._streams: dict[str, random.Random] = {}
        self._links: dict[Addr, random.Random] = {}
        self._ctx_addr: Addr | None = None
        self._ctx_time = 0
        self._dispatched = 0
        self._lat_min = self.latency.min_latency_us
        self._lat_span = self.latency.max_latency_us - self.latency.min_latency_us

    # -- wiring ----------------------------------------------------------

    def add_actor(self, addr: Addr, actor: object, server: bool = True) -> None:
        self._actors[addr] = actor
        if server:
            self._servers.add(addr)

    def stream(self, label: str) -> random.Random:
        st = self._streams.get(label)
        if st is None:
            st = self._streams[label] = rng_stream(self.seed, label)
        return st

    def actor_stream(self, addr: Addr) -> random.Random:
        return self.stream(f"actor:{addr}")

    # -- scheduling ------------------------------------------------------

    def _push(self, fire_at: int, event: object) -> None:
        if fire_at < self.now:
            raise EngineFaultError(
                f"event scheduled at {fire_at} in the past of {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, self._seq, event))

    def schedule(self, fire_at: int, event: object) -> object:
        """Enqueue an arbitrary event object; returns it as the handle."""
        self._push(fire_at, event)
        return event

    def set_timer(self, owner: Addr, delay_us: int, tag: str) -> Timer:
        timer = Timer(owner, tag, self.now + delay_us)
        self._push(timer.fire_at, timer)
        return timer

    def schedule_fault_edge(self, at_us: int, fault_id: int, starting: bool) -> None:
        self._push(max(at_us, self.now), FaultEdge(fault_id, starting))

    # -- messaging -------------------------------------------------------

    def local_now(self) -> int:
        """Subjective time inside a handler (processing completion time)."""
        return self._ctx_time if self._ctx_addr is not None else self.now

    def send(self, src: Addr, dst: Addr, msg: object) -> Deliver | None:
        """Emit a message; returns the delivery event, or None if dropped.

        The latency draw is ``min + floor(u * (max - min + 1))`` with ``u``
        the next float from the sender's link stream, scaled by the
        network-wide congestion factor.
        """
        if dst not in self._actors:
            raise InvalidTargetError(f"unknown destination {dst!r}")
        counters = self.counters
        counters.sent += 1
        faults = self.faults
        faults.on_outbound(src)
        if faults.is_muted(src):
            counters.dropped_muted += 1
            return None
        link = self._links.get(src)
        if link is None:
            link = self._links[src] = self.stream(f"link:{src}")
        if self.latency.drop_probability > 0.0:
            if link.random() < self.latency.drop_probability:
                counters.dropped_network += 1
                return None
        base = self._ctx_time if src == self._ctx_addr else self.now
        if src in self._servers:
            out_factor = faults.out_factor(src)
            if out_factor > 1.0:
                base += int(self.service_time_us * (out_factor - 1.0))
        lat = self._lat_min + int(link.random() * (self._lat_span + 1))
        factor = faults.latency_factor()
        if factor != 1.0:
            lat = int(lat * factor)
        event = Deliver(src, dst, msg)
        self._seq += 1
        heapq.heappush(self._heap, (base + lat, self._seq, event))
        return event

    def broadcast(self, src: Addr, dsts, msg: object) -> None:
        for dst in dsts:
            if dst != src:
                self.send(src, dst, msg)

    # -- main loop -------------------------------------------------------

    def run_until(self, t_end: int) -> EngineReport:
        """Dispatch events in (fire_at, seq) order up to and including t_end.

        The clock ends at the last fired event's time (never beyond t_end);
        with nothing to fire it is left unchanged.
        """
        if t_end < self.now:
            raise EngineFaultError(f"cannot run to {t_end}, clock is at {self.now}")
        dispatched = 0
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            fire_at, _seq, event = heapq.heappop(heap)
            if type(event) is Timer and event.cancelled:
                continue
            self.now = fire_at
            dispatched += 1
            self._dispatch(event)
        self._dispatched += dispatched
        return EngineReport(dispatched=dispatched, clock_us=self.now)

    def _dispatch(self, event: object) -> None:
        kind = type(event)
        if kind is Deliver:
            self._dispatch_deliver(event)
        elif kind is Timer:
            self._dispatch_timer(event)
        elif kind is FaultEdge:
            if event.starting:
                self.faults.start(self, event.fault_id)
            else:
                self.faults.stop(self, event.fault_id)
        else:  # pragma: no cover - guarded by schedule() usage
            raise EngineFaultError(f"unknown event type {kind!r}")

    def _enter(self, addr: Addr) -> int:
        """Compute handler execution time through the node's serial queue."""
        if addr in self._servers:
            faults = self.faults
            start = self._busy.get(addr, 0)
            if start < self.now:
                start = self.now
            done = start + int(self.service_time_us * faults.cpu_factor(addr))
            self._busy[addr] = done
            return done
        return self.now

    def _dispatch_deliver(self, ev: Deliver) -> None:
        dst = ev.dst
        actor = self._actors.get(dst)
        if actor is None:  # pragma: no cover - send() validates targets
            raise InvalidTargetError(f"unknown destination {dst!r}")
        faults = self.faults
        if dst in self._servers:
            faults.on_inbound(dst)
            if faults.is_crashed(dst):
                self.counters.dropped_crashed += 1
                return
            p = faults.inbound_drop_prob(dst)
            if p > 0.0 and self.stream(f"fault:{dst}").random() < p:
                self.counters.dropped_flooded += 1
                return
        self.counters.delivered += 1
        if self.trace is not None:
            self.trace.append(
                f"{self.now} deliver {ev.src}->{dst} {type(ev.msg).__name__}")
        self._ctx_addr = dst
        self._ctx_time = self._enter(dst)
        try:
            actor.on_message(self, ev.src, ev.msg)
        finally:
            self._ctx_addr = None

    def _dispatch_timer(self, timer: Timer) -> None:
        owner = timer.owner
        actor = self._actors.get(owner)
        if actor is None:
            return
        if self.faults.is_crashed(owner):
            return
        if self.trace is not None:
            self.trace.append(f"{self.now} timer {owner} {timer.tag}")
        self._ctx_addr = owner
        self._ctx_time = self._enter(owner)
        try:
            actor.on_timer(self, timer)
        finally:
            self._ctx_addr = None

    # -- accounting ------------------------------------------------------

    def finalize(self) -> Counters:
        """Close the books: undelivered in-flight messages count as dropped."""
        in_flight = sum(1 for _, _, ev in self._heap if type(ev) is Deliver)
        self.counters.dropped_horizon += in_flight
        self._heap.clear()
        return self.counters

    def queue_len(self) -> int:
        return len(self._heap)
