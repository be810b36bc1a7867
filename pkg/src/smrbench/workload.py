"""Closed-loop benchmark clients and the client-facing wire messages.

Clients model the empty-payload micro-benchmark: a client keeps at most
one request in flight and sends the next one only after the first
response to the current one arrives. Requests are broadcast to every
master node; duplicate responses are ignored. An unanswered request is
re-broadcast (same request id) after ``retransmit_us``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .simnet import Simulation, Timer


@dataclass(frozen=True, slots=True)
class ClientRequest:
    rid: str
    client: str


@dataclass(frozen=True, slots=True)
class ClientResp:
    rid: str


class ClosedLoopClient:
    def __init__(self, index: int, node_ids: tuple[int, ...],
                 start_us: int = 600_000, retransmit_us: int = 1_000_000,
                 max_requests: int | None = None):
        self.addr = f"c{index}"
        self.node_ids = node_ids
        self.start_us = start_us
        self.retransmit_us = retransmit_us
        self.max_requests = max_requests
        self.pending: tuple[str, int] | None = None  # (rid, sent_at)
        self.records: list[tuple[str, int, int]] = []  # (rid, sent_at, latency_us)
        self.retransmits = 0
        self.overlap_violations = 0  # stays 0: closed-loop discipline audit
        self._counter = 0
        self._retx_timer: Timer | None = None

    @property
    def done(self) -> bool:
        return (self.max_requests is not None
                and len(self.records) >= self.max_requests)

    def start(self, sim: Simulation) -> None:
        sim.add_actor(self.addr, self, server=False)
        sim.set_timer(self.addr, self.start_us, "send")

    def on_timer(self, sim: Simulation, timer: Timer) -> None:
        if timer.tag == "send":
            self._send_next(sim)
        elif timer.tag == "retx" and self.pending is not None:
            rid, _ = self.pending
            self.retransmits += 1
            self._broadcast(sim, rid)
            self._retx_timer = sim.set_timer(self.addr, self.retransmit_us, "retx")

    def on_message(self, sim: Simulation, src, msg) -> None:
        if type(msg) is not ClientResp or self.pending is None:
            return
        rid, sent_at = self.pending
        if msg.rid != rid:
            return
        self.pending = None
        if self._retx_timer is not None:
            self._retx_timer.cancel()
            self._retx_timer = None
        self.records.append((rid, sent_at, sim.now - sent_at))
        self._send_next(sim)

    def _send_next(self, sim: Simulation) -> None:
        if self.pending is not None:
            self.overlap_violations += 1
            return
        if self.done:
            return
        rid = f"{self.addr}:{self._counter}"
        self._counter += 1
        self.pending = (rid, sim.now)
        self._broadcast(sim, rid)
        self._retx_timer = sim.set_timer(self.addr, self.retransmit_us, "retx")

    def _broadcast(self, sim: Simulation, rid: str) -> None:
        req = ClientRequest(rid, self.addr)
        for node in self.node_ids:
            sim.send(self.addr, node, req)
