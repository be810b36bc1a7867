"""Crash-fault-tolerant replication: leader election and majority commit.

Follower/candidate/leader roles with randomized election timeouts,
term-stamped votes, heartbeat-driven stability and majority commit.
Beyond the textbook sketch, three guards keep the protocol stable under
the fault loads this simulator injects:

* a pre-vote phase: a node whose timer expires first asks whether a
  majority would vote for it before incrementing its term, so an isolated
  or flooded node cannot inflate terms and depose a healthy leader;
* vote requests are granted only to candidates whose log is at least as
  up-to-date as the voter's, so a stale node can never win and overwrite
  committed entries;
* a leader that cannot hear from a majority within an election timeout
  steps down (quorum check), so a victim leader yields to healthy peers.

Log compaction, persistence and membership changes are out of scope; the
benchmark workload commits every entry in order and crashed nodes never
recover within a run.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cluster import ToleranceBounds
from .simnet import Simulation, Timer
from .workload import ClientRequest, ClientResp

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"

_APPEND_BATCH_CAP = 128
_REQUEST_BUFFER_CAP = 64


class ProtocolBugError(RuntimeError):
    """An internal invariant was violated; indicates a bug, not a fault."""


@dataclass(frozen=True)
class RaftTimeouts:
    election_min_us: int = 150_000
    election_max_us: int = 300_000
    heartbeat_interval_us: int = 50_000
    retransmit_us: int = 6_000
    forward_delay_us: int = 4_000  # suppress the forward if the leader already has it
    pre_vote: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.heartbeat_interval_us < self.election_min_us:
            raise ValueError("heartbeat interval must undercut election_min")
        if self.election_min_us > self.election_max_us:
            raise ValueError("election timeout window is inverted")


# -- wire messages ---------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Forward:
    rid: str
    client: str


@dataclass(frozen=True, slots=True)
class PreVoteReq:
    term: int  # prospective term, not yet adopted by the sender
    candidate: int
    last_idx: int
    last_term: int


@dataclass(frozen=True, slots=True)
class PreVoteResp:
    term: int
    voter: int


@dataclass(frozen=True, slots=True)
class VoteReq:
    term: int
    candidate: int
    last_idx: int
    last_term: int


@dataclass(frozen=True, slots=True)
class VoteResp:
    term: int
    voter: int
    granted: bool


@dataclass(frozen=True, slots=True)
class AppendEntries:
    term: int
    leader: int
    prev_idx: int
    prev_term: int
    entries: tuple  # of (term, rid, client-or-None)
    commit: int


@dataclass(frozen=True, slots=True)
class AppendResp:
    term: int
    sender: int
    success: bool
    match: int


class RaftAudit:
    """Run-wide observations used by safety checks and metrics."""

    def __init__(self) -> None:
        self.leaders: list[tuple[int, int]] = []  # (term, node)

    @property
    def leader_changes(self) -> int:
        """Leadership handovers after the bootstrap election."""
        return max(0, len(self.leaders) - 1)


class RaftNode:
    """One replica; driven entirely by engine callbacks."""

    def __init__(self, node_id: int, node_ids: tuple[int, ...],
                 bounds: ToleranceBounds, timeouts: RaftTimeouts,
                 audit: RaftAudit):
        self.id = node_id
        self.peers = tuple(p for p in node_ids if p != node_id)
        self.majority = bounds.raft_majority
        self.timeouts = timeouts
        self.audit = audit

        self.role = FOLLOWER
        self.current_term = 0
        self.voted_for: int | None = None
        self.log: list[tuple[int, str, str | None]] = []
        self.commit_count = 0
        self.leader_id: int | None = None
        self.last_leader_contact = -(10 ** 12)

        self._rid_pos: dict[str, int] = {}
        self._buffer: list[tuple[str, str]] = []
        self._pending_fwd: dict[str, str] = {}
        self._fwd_timer: Timer | None = None
        self.rejected_requests = 0

        self._prevotes: set[int] = set()
        self._votes: set[int] = set()
        self._next_idx: dict[int, int] = {}
        self._match_idx: dict[int, int] = {}
        self._last_heard: dict[int, int] = {}

        self._election_timer: Timer | None = None
        self._heartbeat_timer: Timer | None = None
        self._retx_timer: Timer | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self, sim: Simulation) -> None:
        self._arm_election_timer(sim)

    def _arm_election_timer(self, sim: Simulation) -> None:
        if self._election_timer is not None:
            self._election_timer.cancel()
        delay = sim.actor_stream(self.id).randint(
            self.timeouts.election_min_us, self.timeouts.election_max_us)
        self._election_timer = sim.set_timer(self.id, delay, "election")

    def _last_log(self) -> tuple[int, int]:
        if self.log:
            return len(self.log), self.log[-1][0]
        return 0, 0

    def _step_down(self, sim: Simulation, term: int) -> None:
        was_leader = self.role == LEADER
        self.role = FOLLOWER
        if term > self.current_term:
            self.current_term = term
            self.voted_for = None
        if was_leader:
            if self._heartbeat_timer is not None:
                self._heartbeat_timer.cancel()
                self._heartbeat_timer = None
            self.leader_id = None
        self._arm_election_timer(sim)

    # -- timers --------------------------------------------------------------

    def on_timer(self, sim: Simulation, timer: Timer) -> None:
        if timer.tag == "election":
            self.on_election_timeout(sim)
        elif timer.tag == "heartbeat":
            self._on_heartbeat_tick(sim)
        elif timer.tag == "retx":
            self._on_retransmit(sim)
        elif timer.tag == "forward":
            self._on_forward_tick(sim)

    def on_election_timeout(self, sim: Simulation) -> None:
        if self.role == LEADER:
            raise ProtocolBugError("election timer fired on an active leader")
        if self.majority == 1:
            self._start_candidacy(sim)
            return
        if self.timeouts.pre_vote:
            self._prevotes = {self.id}
            last_idx, last_term = self._last_log()
            req = PreVoteReq(self.current_term + 1, self.id, last_idx, last_term)
            sim.broadcast(self.id, self.peers, req)
            self._arm_election_timer(sim)
            self._arm_retx(sim)
        else:
            self._start_candidacy(sim)

    def _start_candidacy(self, sim: Simulation) -> None:
        self.role = CANDIDATE
        self.current_term += 1
        self.voted_for = self.id
        self.leader_id = None
        self._votes = {self.id}
        if len(self._votes) >= self.majority:
            self._become_leader(sim)
            return
        last_idx, last_term = self._last_log()
        sim.broadcast(self.id, self.peers,
                      VoteReq(self.current_term, self.id, last_idx, last_term))
        self._arm_election_timer(sim)
        self._arm_retx(sim)

    def _become_leader(self, sim: Simulation) -> None:
        self.role = LEADER
        self.leader_id = self.id
        self.audit.leaders.append((self.current_term, self.id))
        if self._election_timer is not None:
            self._election_timer.cancel()
            self._election_timer = None
        now = sim.local_now()
        self._last_heard = {p: now for p in self.peers}
        self._next_idx = {p: len(self.log) for p in self.peers}
        self._match_idx = {p: 0 for p in self.peers}
        # A no-op entry lets the new leader commit inherited entries promptly.
        self._append_entry(sim, f"noop:{self.current_term}", None)
        self._flush_buffer(sim)
        if self._pending_fwd:
            pending, self._pending_fwd = self._pending_fwd, {}
            for rid, client in pending.items():
                self.on_client_request(sim, rid, client)
        self._heartbeat_timer = sim.set_timer(
            self.id, self.timeouts.heartbeat_interval_us, "heartbeat")

    def _on_heartbeat_tick(self, sim: Simulation) -> None:
        if self.role != LEADER:
            return
        now = sim.local_now()
        window = self.timeouts.election_max_us
        heard = sum(1 for p in self.peers
                    if now - self._last_heard.get(p, -window) <= window)
        if heard + 1 < self.majority:
            # Quorum check failed: this leader cannot serve; let others try.
            self._step_down(sim, self.current_term)
            return
        self._send_appends(sim, self.peers)
        self._heartbeat_timer = sim.set_timer(
            self.id, self.timeouts.heartbeat_interval_us, "heartbeat")

    def _arm_retx(self, sim: Simulation) -> None:
        if self._retx_timer is None or self._retx_timer.cancelled:
            self._retx_timer = sim.set_timer(
                self.id, self.timeouts.retransmit_us, "retx")

    def _on_retransmit(self, sim: Simulation) -> None:
        self._retx_timer = None
        if self.role == LEADER:
            lagging = [p for p in self.peers if self._next_idx[p] < len(self.log)]
            if lagging:
                self._send_appends(sim, lagging)
                self._arm_retx(sim)
        elif self.role == CANDIDATE:
            last_idx, last_term = self._last_log()
            req = VoteReq(self.current_term, self.id, last_idx, last_term)
            for p in self.peers:
                if p not in self._votes:
                    sim.send(self.id, p, req)
            self._arm_retx(sim)
        elif self.timeouts.pre_vote and self._prevotes:
            last_idx, last_term = self._last_log()
            req = PreVoteReq(self.current_term + 1, self.id, last_idx, last_term)
            for p in self.peers:
                if p not in self._prevotes:
                    sim.send(self.id, p, req)
            self._arm_retx(sim)

    # -- message dispatch ----------------------------------------------------

    def on_message(self, sim: Simulation, src, msg) -> None:
        kind = type(msg)
        if kind is AppendEntries:
            self.on_append_entries(sim, msg)
        elif kind is AppendResp:
            self._on_append_resp(sim, msg)
        elif kind is ClientRequest or kind is Forward:
            self.on_client_request(sim, msg.rid, msg.client)
        elif kind is PreVoteReq:
            self._on_pre_vote_req(sim, msg)
        elif kind is PreVoteResp:
            self._on_pre_vote_resp(sim, msg)
        elif kind is VoteReq:
            self.on_request_vote(sim, msg)
        elif kind is VoteResp:
            self._on_vote_resp(sim, msg)

    # -- elections -------------------------------------------------------------

    def _log_up_to_date(self, last_idx: int, last_term: int) -> bool:
        my_idx, my_term = self._last_log()
        return (last_term, last_idx) >= (my_term, my_idx)

    def _on_pre_vote_req(self, sim: Simulation, msg: PreVoteReq) -> None:
        quiet = (sim.local_now() - self.last_leader_contact
                 > self.timeouts.election_min_us)
        if (msg.term > self.current_term and quiet and self.role != LEADER
                and self._log_up_to_date(msg.last_idx, msg.last_term)):
            sim.send(self.id, msg.candidate, PreVoteResp(msg.term, self.id))

    def _on_pre_vote_resp(self, sim: Simulation, msg: PreVoteResp) -> None:
        if self.role != FOLLOWER or msg.term != self.current_term + 1:
            return
        self._prevotes.add(msg.voter)
        if len(self._prevotes) >= self.majority:
            self._prevotes = set()
            self._start_candidacy(sim)

    def on_request_vote(self, sim: Simulation, msg: VoteReq) -> None:
        if msg.term > self.current_term:
            self._step_down(sim, msg.term)
        if (msg.term == self.current_term
                and self.voted_for in (None, msg.candidate)
                and self.role != LEADER
                and self._log_up_to_date(msg.last_idx, msg.last_term)):
            self.voted_for = msg.candidate
            self._arm_election_timer(sim)
            sim.send(self.id, msg.candidate, VoteResp(msg.term, self.id, True))

    def _on_vote_resp(self, sim: Simulation, msg: VoteResp) -> None:
        if msg.term > self.current_term:
            self._step_down(sim, msg.term)
            return
        if (self.role != CANDIDATE or msg.term != self.current_term
                or not msg.granted):
            return
        self._votes.add(msg.voter)
        if len(self._votes) >= self.majority:
            self._become_leader(sim)

    # -- replication -------------------------------------------------------------

    def on_append_entries(self, sim: Simulation, msg: AppendEntries) -> None:
        if msg.term < self.current_term:
            return  # stale leader; ignore silently
        if msg.term > self.current_term or self.role != FOLLOWER:
            self._step_down(sim, msg.term)
        self.leader_id = msg.leader
        self.last_leader_contact = sim.local_now()
        self._arm_election_timer(sim)
        self._flush_buffer(sim)

        prev = msg.prev_idx
        if len(self.log) < prev or (prev > 0 and self.log[prev - 1][0] != msg.prev_term):
            sim.send(self.id, msg.leader,
                     AppendResp(self.current_term, self.id, False, self.commit_count))
            return
        idx = prev
        for entry in msg.entries:
            if idx < len(self.log):
                if self.log[idx][0] != entry[0]:
                    if idx < self.commit_count:
                        raise ProtocolBugError("attempted to rewrite a committed entry")
                    for _, rid, _ in self.log[idx:]:
                        self._rid_pos.pop(rid, None)
                    del self.log[idx:]
                    self.log.append(entry)
                    self._rid_pos[entry[1]] = idx
            else:
                self.log.append(entry)
                self._rid_pos[entry[1]] = idx
            self._pending_fwd.pop(entry[1], None)
            idx += 1
        if msg.commit > self.commit_count:
            self.commit_count = min(msg.commit, len(self.log))
        sim.send(self.id, msg.leader,
                 AppendResp(self.current_term, self.id, True, idx))

    def _on_append_resp(self, sim: Simulation, msg: AppendResp) -> None:
        if msg.term > self.current_term:
            self._step_down(sim, msg.term)
            return
        if self.role != LEADER or msg.term != self.current_term:
            return
        self._last_heard[msg.sender] = sim.local_now()
        if msg.success:
            if msg.match > self._match_idx[msg.sender]:
                self._match_idx[msg.sender] = msg.match
            self._next_idx[msg.sender] = max(self._next_idx[msg.sender],
                                             self._match_idx[msg.sender])
            self._advance_commit(sim)
        else:
            self._next_idx[msg.sender] = max(msg.match, self._match_idx[msg.sender])
            self._send_appends(sim, (msg.sender,))

    def _advance_commit(self, sim: Simulation) -> None:
        for n in range(len(self.log), self.commit_count, -1):
            if self.log[n - 1][0] != self.current_term:
                break
            acks = 1 + sum(1 for m in self._match_idx.values() if m >= n)
            if acks >= self.majority:
                newly = self.log[self.commit_count:n]
                self.commit_count = n
                for _, rid, client in newly:
                    if client is not None:
                        sim.send(self.id, client, ClientResp(rid))
                break

    def _send_appends(self, sim: Simulation, targets) -> None:
        for p in targets:
            start = self._next_idx[p]
            entries = tuple(self.log[start:start + _APPEND_BATCH_CAP])
            prev_term = self.log[start - 1][0] if start > 0 else 0
            sim.send(self.id, p, AppendEntries(
                self.current_term, self.id, start, prev_term,
                entries, self.commit_count))

    # -- client path ------------------------------------------------------------

    def on_client_request(self, sim: Simulation, rid: str, client: str) -> None:
        pos = self._rid_pos.get(rid)
        if pos is not None:
            if pos < self.commit_count and self.role == LEADER:
                sim.send(self.id, client, ClientResp(rid))  # duplicate of a done request
            return
        if self.role == LEADER:
            self._append_entry(sim, rid, client)
        elif self.leader_id is not None and self.leader_id != self.id:
            # Forward after a grace period: clients usually reach the leader
            # directly and the append shows up here first, making the
            # forward redundant.
            self._pending_fwd[rid] = client
            if self._fwd_timer is None or self._fwd_timer.cancelled:
                self._fwd_timer = sim.set_timer(
                    self.id, self.timeouts.forward_delay_us, "forward")
        else:
            if len(self._buffer) >= _REQUEST_BUFFER_CAP:
                self.rejected_requests += 1
                return
            self._buffer.append((rid, client))

    def _on_forward_tick(self, sim: Simulation) -> None:
        self._fwd_timer = None
        pending, self._pending_fwd = self._pending_fwd, {}
        if self.role == LEADER:
            for rid, client in pending.items():
                self.on_client_request(sim, rid, client)
            return
        for rid, client in pending.items():
            if rid in self._rid_pos:
                continue
            if self.leader_id is not None and self.leader_id != self.id:
                sim.send(self.id, self.leader_id, Forward(rid, client))
            else:
                self._buffer.append((rid, client))

    def _append_entry(self, sim: Simulation, rid: str, client: str | None) -> None:
        self.log.append((self.current_term, rid, client))
        self._rid_pos[rid] = len(self.log) - 1
        if self.peers:
            self._send_appends(sim, self.peers)
            self._arm_retx(sim)
        self._advance_commit(sim)

    def _flush_buffer(self, sim: Simulation) -> None:
        if not self._buffer:
            return
        pending, self._buffer = self._buffer, []
        for rid, client in pending:
            self.on_client_request(sim, rid, client)
