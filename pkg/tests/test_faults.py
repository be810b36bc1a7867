"""Fault model: delay factors, resource proxies, and injection effects."""

import pytest
from helpers import build_cluster, run_to_quiescence

from smrbench.cluster import Protocol
from smrbench.faults import (FaultEngine, FaultKind, FaultSpec,
                             InvalidFaultError, LoadModel,
                             effective_delay_factor, resources_under_attack)
from smrbench.simnet import LatencyModel, Simulation


def test_no_attack_no_slowdown():
    assert effective_delay_factor(LoadModel(), 0.0) == 1.0


def test_sub_saturation_slope():
    model = LoadModel(base_delay_factor=0.1)
    assert effective_delay_factor(model, 2.0) == pytest.approx(1.2)


def test_post_saturation_jump():
    model = LoadModel()
    below = effective_delay_factor(model, model.saturation_gbps - 0.01)
    above = effective_delay_factor(model, model.saturation_gbps)
    assert above >= model.post_saturation_delay_factor * below * 0.99
    assert effective_delay_factor(model, 5.0) > below


def test_negative_rate_rejected():
    with pytest.raises(InvalidFaultError):
        effective_delay_factor(LoadModel(), -1.0)
    with pytest.raises(InvalidFaultError):
        resources_under_attack(LoadModel(), -1.0, 0.0)


def test_delay_factor_monotone_in_rate():
    model = LoadModel()
    rates = [x / 4 for x in range(0, 29)]
    factors = [effective_delay_factor(model, r) for r in rates]
    assert all(b >= a for a, b in zip(factors, factors[1:]))


def test_default_thresholds_by_cluster_size():
    assert LoadModel.default_for(5).saturation_gbps == 4.25
    assert LoadModel.default_for(7).saturation_gbps == 4.1


def test_fault_spec_validation():
    with pytest.raises(InvalidFaultError):
        FaultSpec(FaultKind.CPU_LOAD, 0, rate_gbps=1.0, start_us=10, stop_us=5)
    with pytest.raises(InvalidFaultError):
        FaultSpec(FaultKind.CPU_LOAD, 0, rate_gbps=-2.0)
    FaultSpec(FaultKind.CRASH, 0)  # crash needs no window


# -- resource proxies ------------------------------------------------------------

def test_idle_baseline_snapshot():
    snap = resources_under_attack(LoadModel(), 0.0, 0.0)
    assert snap.cpu_pct < 10
    assert snap.bandwidth_gbps == 6.0


def test_full_rate_exhausts_bandwidth():
    snap = resources_under_attack(LoadModel(), 6.0, 0.0)
    assert snap.bandwidth_gbps == 0.0


def test_busier_protocol_uses_more_resources():
    model = LoadModel()
    light = resources_under_attack(model, 2.0, 3_000)
    heavy = resources_under_attack(model, 2.0, 9_000)
    assert heavy.cpu_pct >= light.cpu_pct
    assert heavy.ram_mb >= light.ram_mb


def test_resources_monotone_in_rate():
    model = LoadModel()
    rates = [0.0, 2.0, 4.0, 4.5, 5.0, 5.5, 6.0]
    snaps = [resources_under_attack(model, r, 5_000) for r in rates]
    for a, b in zip(snaps, snaps[1:]):
        assert b.cpu_pct >= a.cpu_pct
        assert b.ram_mb >= a.ram_mb
        assert b.bandwidth_gbps <= a.bandwidth_gbps


# -- injection ----------------------------------------------------------------------

def test_fault_edges_toggle_factors():
    sim = Simulation(seed=1)
    engine = FaultEngine(LoadModel(base_delay_factor=0.1))
    sim.faults = engine

    class Idle:
        def on_message(self, s, src, msg):
            pass

        def on_timer(self, s, timer):
            pass

    sim.add_actor(0, Idle())
    engine.apply_fault(sim, FaultSpec(FaultKind.CPU_LOAD, 0, 2.0,
                                      start_us=100, stop_us=200))
    assert engine.cpu_factor(0) == 1.0
    sim.set_timer(0, 150, "probe")
    sim.run_until(150)
    assert engine.cpu_factor(0) == pytest.approx(1.2)
    assert engine.inbound_drop_prob(0) == 0.0  # cpu load never drops messages
    sim.set_timer(0, 100, "probe")
    sim.run_until(300)
    assert engine.cpu_factor(0) == 1.0


def test_flooding_above_saturation_drops_and_delays():
    sim = Simulation(seed=1)
    engine = FaultEngine(LoadModel())
    sim.faults = engine

    class Idle:
        def on_message(self, s, src, msg):
            pass

        def on_timer(self, s, timer):
            pass

    sim.add_actor(0, Idle())
    engine.apply_fault(sim, FaultSpec(FaultKind.NETWORK_FLOODING, 0, 6.0,
                                      start_us=0, stop_us=None))
    sim.set_timer(0, 10, "probe")
    sim.run_until(10)
    assert engine.inbound_drop_prob(0) == pytest.approx(0.95)
    assert engine.out_factor(0) > 1.0
    assert engine.latency_factor() > 1.3  # shared fabric congested
    assert engine.cpu_factor(1) == 1.0  # non-targets untouched


def test_crashed_leader_election_follows(  ):
    bundle = build_cluster(Protocol.RAFT, 3, seed=77, clients=1,
                           max_requests=None, client_start_us=20_000)
    bundle.sim.run_until(1_000_000)
    leader = bundle.audit.leaders[-1][1]
    bundle.engine.apply_fault(bundle.sim, FaultSpec(
        FaultKind.CRASH, leader, 0.0, start_us=1_000_000))
    bundle.sim.run_until(2_000_000)
    replacement = [n for t, n in bundle.audit.leaders if n != leader]
    assert replacement, "crash of the leader must trigger an election"


def test_mild_cpu_load_slows_but_keeps_leadership():
    bundle = build_cluster(Protocol.RAFT, 5, seed=78, clients=2,
                           max_requests=None, client_start_us=200_000)
    bundle.sim.run_until(700_000)
    leader = bundle.audit.leaders[-1][1]
    bundle.engine.apply_fault(bundle.sim, FaultSpec(
        FaultKind.CPU_LOAD, leader, 2.0, start_us=700_000))
    bundle.sim.run_until(2_500_000)
    assert [n for _, n in bundle.audit.leaders] == [leader]
    lat = [r[2] for c in bundle.clients for r in c.records]
    assert lat and max(lat) < 100_000  # slowed, not collapsed


def test_zero_rate_run_matches_no_fault_engine_run():
    def trace_with(engine):
        sim = Simulation(seed=99, record_trace=True)
        if engine is not None:
            sim.faults = engine

        class Echo:
            def on_message(self, s, src, msg):
                if msg < 3:
                    s.send("b" if src == "a" else "a",
                           src, msg + 1)

            def on_timer(self, s, timer):
                pass

        echo = Echo()
        sim.add_actor("a", echo, server=False)
        sim.add_actor("b", echo, server=False)
        sim.send("a", "b", 0)
        sim.run_until(10_000)
        return list(sim.trace)

    assert trace_with(None) == trace_with(FaultEngine(LoadModel()))
