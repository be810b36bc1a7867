"""Byzantine-fault-tolerant replication: PROPOSE / WRITE / ACCEPT rounds.

The leader of the current regency batches client requests into a PROPOSE;
replicas validate it and broadcast WRITE messages carrying a digest of the
batch; a replica that collects a write quorum of matching digests
broadcasts ACCEPT with its decision batch; a quorum of matching ACCEPTs
decides the instance. A replica that sees no progress for the instance
timeout votes to install the next regency (round-robin leader); f+1 such
votes make others join, a write quorum installs. Regency-change votes
carry the voter's write-certified batches so a new leader can only
re-propose a value consistent with anything already decided.

Messages are authenticated by the simulated channel (no forgery between
nodes); digest validation stands in for cryptographic checks. Faulty
behaviours modelled here are crash/omission/delay-shaped; equivocating
proposals from a Byzantine leader are outside the modelled universe.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

from .cluster import ToleranceBounds
from .simnet import Simulation, Timer
from .workload import ClientResp

Batch = tuple[tuple[str, str], ...]  # ((request-id, client-addr), ...)


def batch_digest(batch: Batch) -> str:
    payload = "|".join(f"{rid}@{client}" for rid, client in batch)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BftTimeouts:
    instance_timeout_us: int = 400_000
    propose_retx_us: int = 5_000
    rebroadcast_us: int = 10_000
    batch_cap: int = 1

    def __post_init__(self) -> None:
        if self.instance_timeout_us <= 0 or self.batch_cap < 1:
            raise ValueError("instance timeout and batch cap must be positive")


class ByzantineMode(enum.Enum):
    HONEST = "honest"
    CRASHED = "crashed"
    DELAYED = "delayed"
    FLOODING = "flooding"
    SILENT_DROP = "silent_drop"


@dataclass(frozen=True)
class ByzantineBehavior:
    """How a faulty replica misbehaves, and from when."""

    mode: ByzantineMode = ByzantineMode.HONEST
    delay_factor: float = 1.0
    rate_gbps: float = 0.0
    from_us: int = 0


# -- wire messages ----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Propose:
    regency: int
    instance: int
    batch: Batch
    digest: str


@dataclass(frozen=True, slots=True)
class Write:
    regency: int
    instance: int
    digest: str
    sender: int


@dataclass(frozen=True, slots=True)
class Accept:
    regency: int
    instance: int
    digest: str
    batch: Batch
    sender: int


@dataclass(frozen=True, slots=True)
class RegencyVote:
    regency: int  # the regency the sender wants installed
    sender: int
    certs: tuple  # of (instance, digest, batch) the sender holds write-certs for


class _Instance:
    __slots__ = ("proposed", "digest", "writes", "write_by_sender", "accepts",
                 "accept_by_sender", "batches", "wrote", "accepted_digest",
                 "decided", "write_cert", "cert_regency")

    def __init__(self) -> None:
        self.proposed: Batch | None = None
        self.digest: str | None = None
        self.writes: dict[str, set[int]] = {}
        self.write_by_sender: dict[int, str] = {}
        self.accepts: dict[str, set[int]] = {}
        self.accept_by_sender: dict[int, str] = {}
        self.batches: dict[str, Batch] = {}
        self.wrote = False
        self.accepted_digest: str | None = None
        self.decided: Batch | None = None
        self.write_cert: str | None = None
        self.cert_regency = -1

    def reset_for_new_regency(self) -> None:
        self.writes = {}
        self.write_by_sender = {}
        self.accepts = {}
        self.accept_by_sender = {}
        self.wrote = False
        self.accepted_digest = None


class BftAudit:
    """Run-wide observations for agreement checks and metrics."""

    def __init__(self) -> None:
        self.decisions: list[tuple[int, int, str]] = []  # (node, instance, digest)
        self.max_regency = 0

    @property
    def regency_changes(self) -> int:
        return self.max_regency


class BftNode:
    """One replica of the PROPOSE/WRITE/ACCEPT state machine."""

    def __init__(self, node_id: int, node_ids: tuple[int, ...],
                 bounds: ToleranceBounds, timeouts: BftTimeouts,
                 audit: BftAudit):
        self.id = node_id
        self.node_ids = tuple(node_ids)
        self.peers = tuple(p for p in node_ids if p != node_id)
        self.n = bounds.n
        self.quorum = bounds.bft_write_quorum
        self.f_byz = bounds.f_byz
        self.timeouts = timeouts
        self.audit = audit

        self.regency = 0
        self.pending: list[tuple[str, str]] = []
        self._pending_set: set[str] = set()
        self.decided_rids: set[str] = set()
        self.instances: dict[int, _Instance] = {}
        self.decision_log: dict[int, Batch] = {}
        self.validation_failures = 0
        self.equivocations = 0

        self._voted_regency = 0
        self._regency_votes: dict[int, tuple[int, tuple]] = {}  # sender -> (target, certs)
        self._open: set[int] = set()
        self._stuck_since: int | None = None
        self._progress_timer: Timer | None = None
        self._retx_timer: Timer | None = None

    # -- helpers ---------------------------------------------------------

    @property
    def leader(self) -> int:
        return self.regency % self.n

    def _undecided(self) -> list[int]:
        return sorted(self._open)

    def _instance(self, iid: int) -> _Instance:
        inst = self.instances.get(iid)
        if inst is None:
            inst = self.instances[iid] = _Instance()
            self._open.add(iid)
        return inst

    # -- engine callbacks --------------------------------------------------

    def on_message(self, sim: Simulation, src, msg) -> None:
        kind = type(msg)
        if kind is Write:
            self.on_write(sim, msg)
        elif kind is Accept:
            self.on_accept(sim, msg)
        elif kind is Propose:
            self.on_propose(sim, src, msg)
        elif kind is RegencyVote:
            self._on_regency_vote(sim, msg)
        else:  # client requests (any message carrying rid/client)
            self.on_client_request(sim, msg.rid, msg.client)

    def on_timer(self, sim: Simulation, timer: Timer) -> None:
        if timer.tag == "progress":
            self.on_instance_timeout(sim)
        elif timer.tag == "retx":
            self._on_retransmit(sim)

    # -- client path --------------------------------------------------------

    def on_client_request(self, sim: Simulation, rid: str, client: str) -> None:
        if rid in self.decided_rids:
            sim.send(self.id, client, ClientResp(rid))  # duplicate of a decided request
            return
        if rid in self._pending_set:
            return
        self.pending.append((rid, client))
        self._pending_set.add(rid)
        self._note_stuck(sim)
        self._maybe_propose(sim)

    def _maybe_propose(self, sim: Simulation) -> None:
        if self.leader != self.id or not self.pending or self._open:
            return
        iid = (max(self.instances) + 1) if self.instances else 0
        batch = tuple(self.pending[:self.timeouts.batch_cap])
        self._propose_instance(sim, iid, batch)

    def _propose_instance(self, sim: Simulation, iid: int, batch: Batch) -> None:
        digest = batch_digest(batch)
        inst = self._instance(iid)
        inst.proposed = batch
        inst.digest = digest
        inst.batches[digest] = batch
        sim.broadcast(self.id, self.peers,
                      Propose(self.regency, iid, batch, digest))
        self._record_write(sim, inst, iid, digest)
        self._note_stuck(sim)
        self._arm_retx(sim)

    # -- consensus rounds ------------------------------------------------------

    def on_propose(self, sim: Simulation, src, msg: Propose) -> None:
        if msg.regency != self.regency or src != self.leader or src == self.id:
            self.validation_failures += 1
            return
        inst = self._instance(msg.instance)
        if inst.decided is not None:
            return
        if (not msg.batch or batch_digest(msg.batch) != msg.digest
                or any(rid in self.decided_rids for rid, _ in msg.batch)):
            self.validation_failures += 1
            return
        inst.proposed = msg.batch
        inst.digest = msg.digest
        inst.batches[msg.digest] = msg.batch
        if not inst.wrote:
            self._record_write(sim, inst, msg.instance, msg.digest)
        else:
            self._maybe_accept(sim, msg.instance, inst)
        self._note_stuck(sim)
        self._arm_retx(sim)

    def _record_write(self, sim: Simulation, inst: _Instance, iid: int,
                      digest: str) -> None:
        inst.wrote = True
        inst.write_by_sender[self.id] = digest
        inst.writes.setdefault(digest, set()).add(self.id)
        sim.broadcast(self.id, self.peers,
                      Write(self.regency, iid, digest, self.id))
        self._maybe_accept(sim, iid, inst)

    def on_write(self, sim: Simulation, msg: Write) -> None:
        if msg.regency != self.regency:
            return
        inst = self._instance(msg.instance)
        if inst.decided is not None:
            return
        seen = inst.write_by_sender.get(msg.sender)
        if seen is not None:
            if seen != msg.digest:
                self.equivocations += 1
            return
        inst.write_by_sender[msg.sender] = msg.digest
        inst.writes.setdefault(msg.digest, set()).add(msg.sender)
        self._maybe_accept(sim, msg.instance, inst)

    def _maybe_accept(self, sim: Simulation, iid: int, inst: _Instance) -> None:
        if inst.accepted_digest is not None:
            return
        for digest, senders in inst.writes.items():
            if len(senders) >= self.quorum:
                batch = inst.batches.get(digest)
                if batch is None:
                    continue  # write quorum seen but batch not yet known
                assert len(senders) >= self.quorum
                inst.accepted_digest = digest
                inst.write_cert = digest
                inst.cert_regency = self.regency
                inst.accept_by_sender[self.id] = digest
                inst.accepts.setdefault(digest, set()).add(self.id)
                sim.broadcast(self.id, self.peers,
                              Accept(self.regency, iid, digest, batch, self.id))
                self._maybe_decide(sim, iid, inst)
                return

    def on_accept(self, sim: Simulation, msg: Accept) -> None:
        inst = self._instance(msg.instance)
        known = inst.batches.get(msg.digest)
        if known is None:
            if batch_digest(msg.batch) != msg.digest:
                self.validation_failures += 1
                return
            inst.batches[msg.digest] = msg.batch
        elif known != msg.batch:
            self.validation_failures += 1
            return
        if inst.decided is not None:
            return
        if msg.regency != self.regency:
            return
        seen = inst.accept_by_sender.get(msg.sender)
        if seen is not None:
            if seen != msg.digest:
                self.equivocations += 1
            return
        inst.accept_by_sender[msg.sender] = msg.digest
        inst.accepts.setdefault(msg.digest, set()).add(msg.sender)
        self._maybe_decide(sim, msg.instance, inst)

    def _maybe_decide(self, sim: Simulation, iid: int, inst: _Instance) -> None:
        for digest, senders in inst.accepts.items():
            if len(senders) < self.quorum:
                continue
            batch = inst.batches[digest]
            if iid in self.decision_log:
                raise AssertionError("decision log position decided twice")
            inst.decided = batch
            self._open.discard(iid)
            self.decision_log[iid] = batch
            self.audit.decisions.append((self.id, iid, digest))
            for rid, client in batch:
                self.decided_rids.add(rid)
                if rid in self._pending_set:
                    self._pending_set.discard(rid)
                if client:
                    sim.send(self.id, client, ClientResp(rid))
            self.pending = [(r, c) for r, c in self.pending
                            if r not in self.decided_rids]
            self._note_progress(sim)
            self._maybe_propose(sim)
            return

    # -- regency changes ----------------------------------------------------------

    def on_instance_timeout(self, sim: Simulation) -> None:
        self._progress_timer = None
        stuck = self._stuck_since is not None and (
            sim.local_now() - self._stuck_since >= self.timeouts.instance_timeout_us)
        if stuck:
            self._vote_regency(sim, self.regency + 1)
            self._stuck_since = sim.local_now()
        if self._stuck_since is not None:
            self._arm_progress(sim)

    def _own_certs(self) -> tuple:
        return tuple(
            (iid, inst.write_cert, inst.batches[inst.write_cert],
             inst.cert_regency)
            for iid, inst in sorted(self.instances.items())
            if inst.decided is None and inst.write_cert is not None)

    def _vote_regency(self, sim: Simulation, target: int) -> None:
        if target <= self.regency:
            return
        target = max(target, self._voted_regency)
        self._voted_regency = target
        certs = self._own_certs()
        self._regency_votes[self.id] = (target, certs)
        sim.broadcast(self.id, self.peers, RegencyVote(target, self.id, certs))
        self._arm_retx(sim)
        self._tally_regency(sim)

    def _on_regency_vote(self, sim: Simulation, msg: RegencyVote) -> None:
        if msg.regency <= self.regency:
            return
        current = self._regency_votes.get(msg.sender)
        if current is None or msg.regency > current[0]:
            self._regency_votes[msg.sender] = (msg.regency, msg.certs)
            self._tally_regency(sim)

    def _tally_regency(self, sim: Simulation) -> None:
        ahead = [t for t, _ in self._regency_votes.values() if t > self.regency]
        if not ahead:
            return
        if len(ahead) > self.f_byz and self._voted_regency <= self.regency:
            # Enough nodes report a stall: join even without an own timeout.
            self._vote_regency(sim, max(ahead))
            return
        for target in sorted(set(ahead), reverse=True):
            support = sum(1 for t, _ in self._regency_votes.values() if t >= target)
            if support >= self.quorum:
                self._install_regency(sim, target)
                return

    def _install_regency(self, sim: Simulation, target: int) -> None:
        self.regency = target
        self.audit.max_regency = max(self.audit.max_regency, target)
        certified: dict[int, tuple[int, str, Batch]] = {}
        for _, certs in self._regency_votes.values():
            for iid, digest, batch, cert_regency in certs:
                known = certified.get(iid)
                if known is None or cert_regency > known[0]:
                    certified[iid] = (cert_regency, digest, batch)
        for iid, inst in self.instances.items():
            if inst.decided is None:
                inst.reset_for_new_regency()
        self._note_stuck(sim, force_now=True)
        if self.leader == self.id:
            for iid in self._undecided():
                inst = self.instances[iid]
                if iid in certified:
                    batch = certified[iid][2]
                elif inst.proposed is not None:
                    batch = inst.proposed
                else:
                    free = [p for p in self.pending if p[0] not in self.decided_rids]
                    if not free:
                        inst.decided = ()  # abandoned: batch unknown everywhere
                        self._open.discard(iid)
                        continue
                    batch = tuple(free[:self.timeouts.batch_cap])
                self._propose_instance(sim, iid, batch)
            self._maybe_propose(sim)

    # -- progress bookkeeping -------------------------------------------------------

    def _note_stuck(self, sim: Simulation, force_now: bool = False) -> None:
        if force_now or self._stuck_since is None:
            if self.pending or self._undecided():
                self._stuck_since = sim.local_now()
        self._arm_progress(sim)

    def _note_progress(self, sim: Simulation) -> None:
        if self.pending or self._undecided():
            self._stuck_since = sim.local_now()
        else:
            self._stuck_since = None

    def _arm_progress(self, sim: Simulation) -> None:
        if self._stuck_since is None:
            return
        if self._progress_timer is None or self._progress_timer.cancelled:
            self._progress_timer = sim.set_timer(
                self.id, self.timeouts.instance_timeout_us, "progress")

    def _arm_retx(self, sim: Simulation) -> None:
        if self._retx_timer is None or self._retx_timer.cancelled:
            interval = (self.timeouts.propose_retx_us if self.leader == self.id
                        else self.timeouts.rebroadcast_us)
            self._retx_timer = sim.set_timer(self.id, interval, "retx")

    def _on_retransmit(self, sim: Simulation) -> None:
        self._retx_timer = None
        undecided = self._undecided()
        if not undecided and self._voted_regency <= self.regency:
            return
        # A partitioned replica can pile up instances its peers already
        # decided; rebroadcast only a recent window to bound the traffic.
        for iid in undecided[-8:]:
            inst = self.instances[iid]
            if self.leader == self.id and inst.proposed is not None:
                sim.broadcast(self.id, self.peers,
                              Propose(self.regency, iid, inst.proposed, inst.digest))
            if inst.wrote:
                digest = inst.write_by_sender[self.id]
                sim.broadcast(self.id, self.peers,
                              Write(self.regency, iid, digest, self.id))
            if inst.accepted_digest is not None:
                digest = inst.accepted_digest
                sim.broadcast(self.id, self.peers,
                              Accept(self.regency, iid, digest,
                                     inst.batches[digest], self.id))
        if self._voted_regency > self.regency:
            certs = self._regency_votes.get(self.id)
            sim.broadcast(self.id, self.peers,
                          RegencyVote(self._voted_regency, self.id,
                                      certs[1] if certs else self._own_certs()))
        elif undecided and self.regency > 0:
            # Standing vote: lets replicas that missed the installation
            # quorum catch up to the current regency.
            sim.broadcast(self.id, self.peers,
                          RegencyVote(self.regency, self.id, self._own_certs()))
        self._arm_retx(sim)
