"""Shared wiring for protocol-level tests: build a cluster simulation
without the scenario harness, so tests control faults and workload directly."""

from __future__ import annotations

from dataclasses import dataclass

from smrbench.bft import BftAudit, BftNode, BftTimeouts
from smrbench.cluster import ClusterConfig, Protocol, ToleranceBounds
from smrbench.faults import FaultEngine, LoadModel
from smrbench.raft import RaftAudit, RaftNode, RaftTimeouts
from smrbench.simnet import LatencyModel, Simulation
from smrbench.workload import ClosedLoopClient


@dataclass
class Bundle:
    sim: Simulation
    nodes: dict
    clients: list
    audit: object
    engine: FaultEngine
    bounds: ToleranceBounds


def build_cluster(protocol: Protocol, n: int, seed: int,
                  latency: LatencyModel | None = None,
                  service_time_us: int = 110,
                  raft_timeouts: RaftTimeouts | None = None,
                  bft_timeouts: BftTimeouts | None = None,
                  load_model: LoadModel | None = None,
                  clients: int = 1,
                  client_start_us: int = 50_000,
                  client_retransmit_us: int = 1_000_000,
                  max_requests: int | None = 3,
                  start_nodes: bool = True) -> Bundle:
    cluster = ClusterConfig(n, protocol)
    bounds = cluster.bounds
    sim = Simulation(seed, latency=latency or LatencyModel(),
                     service_time_us=service_time_us)
    engine = FaultEngine(load_model or LoadModel())
    sim.faults = engine
    if protocol is Protocol.RAFT:
        audit: object = RaftAudit()
        nodes = {i: RaftNode(i, cluster.node_ids, bounds,
                             raft_timeouts or RaftTimeouts(), audit)
                 for i in cluster.node_ids}
    else:
        audit = BftAudit()
        nodes = {i: BftNode(i, cluster.node_ids, bounds,
                            bft_timeouts or BftTimeouts(), audit)
                 for i in cluster.node_ids}
    for i, node in nodes.items():
        sim.add_actor(i, node)
    if start_nodes and protocol is Protocol.RAFT:
        for node in nodes.values():
            node.start(sim)
    client_objs = []
    for c in range(clients):
        client = ClosedLoopClient(c, cluster.node_ids,
                                  start_us=client_start_us,
                                  retransmit_us=client_retransmit_us,
                                  max_requests=max_requests)
        client.start(sim)
        client_objs.append(client)
    return Bundle(sim, nodes, client_objs, audit, engine, bounds)


def run_to_quiescence(bundle: Bundle, horizon_us: int,
                      step_us: int = 200_000) -> None:
    """Advance the simulation until all clients finish or the horizon hits."""
    t = bundle.sim.now
    while t < horizon_us:
        t = min(t + step_us, horizon_us)
        bundle.sim.run_until(t)
        if all(c.done for c in bundle.clients):
            break


def committed_prefix(node) -> list:
    return node.log[:node.commit_count]


def check_raft_safety(bundle: Bundle) -> None:
    """Election safety and log safety over a finished run."""
    terms = [term for term, _ in bundle.audit.leaders]
    assert len(terms) == len(set(terms)), f"two leaders in one term: {bundle.audit.leaders}"
    nodes = list(bundle.nodes.values())
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            common = min(a.commit_count, b.commit_count)
            assert a.log[:common] == b.log[:common], (
                f"divergent committed prefixes between {a.id} and {b.id}")


def check_bft_agreement(bundle: Bundle, correct: set[int]) -> None:
    """No two correct replicas decide different batches for an instance."""
    decided: dict[int, str] = {}
    for node_id, instance, digest in bundle.audit.decisions:
        if node_id not in correct:
            continue
        if instance in decided:
            assert decided[instance] == digest, (
                f"instance {instance} decided as {decided[instance]} and {digest}")
        else:
            decided[instance] = digest
