"""Acceptance suite: one test per criterion, one printed verdict line each.

Each criterion runs at its stated tolerance and asserts its stated runtime
budget. Criteria 2 and 3 are randomized property suites over fixed master
seeds; the benchmark criteria (4-7, 9) run the scenario harness at reduced
horizons so the whole suite stays within its budgets.
"""

import random
import statistics
import time
from itertools import combinations

import pytest
from helpers import (build_cluster, check_bft_agreement, check_raft_safety,
                     run_to_quiescence)

from smrbench.cluster import (Protocol, ToleranceBounds, bft_write_quorum,
                              byz_tolerance, crash_tolerance, raft_majority)
from smrbench.faults import FaultKind, FaultSpec
from smrbench.harness import (ScenarioConfig, export_bytes, run_repetition,
                              run_scenario)
from smrbench.scheduler import PriorityWeights, filter_minions, rank_minions
from smrbench.simnet import LatencyModel

CHI_SQUARED_CRIT_1DF_P01 = 6.6349  # chi-squared critical value, df=1, p=0.01


def verdict(number: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def mean_of(records) -> float:
    times = [t for r in records for t in r.consensus_times]
    return statistics.fmean(times) if times else 0.0


# -- criterion 1: quorum math against enumeration ---------------------------------

def test_criterion_01_quorum_math_exhaustive():
    started = time.time()

    def masks(n, size):
        return [sum(1 << i for i in c) for c in combinations(range(n), size)]

    def all_pairs_intersect(n, size):
        if size > n:
            return True
        pool = masks(n, size)
        for i, a in enumerate(pool):
            for b in pool[i:]:
                if not a & b:
                    return False
        return True

    for n in range(1, 14):
        m = raft_majority(n)
        assert all_pairs_intersect(n, m), f"majorities of {m} can miss, n={n}"
        if m > 1:
            assert not all_pairs_intersect(n, m - 1), \
                f"majority {m} is not minimal for n={n}"
        assert crash_tolerance(n) == n - m

    for n in range(4, 14):
        q = bft_write_quorum(n)
        need = byz_tolerance(n) + 1
        pool = masks(n, q)
        worst = min(bin(a & b).count("1")
                    for i, a in enumerate(pool) for b in pool[i:])
        assert worst >= need, f"write quorums intersect in {worst} < {need}, n={n}"

    elapsed = time.time() - started
    verdict(1, True, f"n=1..13 enumerated in {elapsed:.1f}s")
    assert elapsed < 5.0


# -- criterion 2: raft safety under randomized crashes ------------------------------

def test_criterion_02_raft_safety_suite():
    started = time.time()
    master = random.Random(0xC2)
    runs = 1000
    for i in range(runs):
        n = master.choice([3, 5, 7])
        lat_min = master.randint(20, 120)
        lat = LatencyModel(lat_min, lat_min + master.randint(10, 400), 0.0)
        bundle = build_cluster(Protocol.RAFT, n, seed=master.getrandbits(48),
                               latency=lat, clients=1, client_start_us=30_000,
                               max_requests=3)
        for node in master.sample(range(n), master.randint(0, bundle.bounds.f_crash)):
            bundle.engine.apply_fault(bundle.sim, FaultSpec(
                FaultKind.CRASH, node, 0.0, master.randint(0, 1_200_000)))
        run_to_quiescence(bundle, 3_500_000)
        check_raft_safety(bundle)
        assert bundle.audit.leaders, "no leader was ever elected"
        assert all(c.done for c in bundle.clients), "requests left unanswered"
    elapsed = time.time() - started
    verdict(2, True, f"{runs} randomized runs, zero violations, {elapsed:.1f}s")
    assert elapsed < 60.0


# -- criterion 3: bft agreement and liveness under byzantine replicas ----------------

def _byzantine_behaviour(bundle, node, master):
    mode = master.choice(["crash", "mute", "delay", "flood"])
    if mode == "crash":
        bundle.engine.crash_now(node)
    elif mode == "mute":
        bundle.engine.set_muted(node)
    elif mode == "delay":
        bundle.engine.set_processing_factor(node, master.uniform(2.0, 15.0))
    else:
        bundle.engine.apply_fault(bundle.sim, FaultSpec(
            FaultKind.NETWORK_FLOODING, node, master.uniform(1.0, 6.0), 0))


def test_criterion_03_bft_agreement_suite():
    started = time.time()
    master = random.Random(0xC3)
    runs = 1000
    for i in range(runs):
        n = master.choice([4, 5, 7])
        f = byz_tolerance(n)
        at_threshold = i % 2 == 0
        fault_count = f if at_threshold else master.randint(0, f)
        bundle = build_cluster(Protocol.BFT, n, seed=master.getrandbits(48),
                               clients=1, client_start_us=30_000,
                               max_requests=2)
        faulty = set(master.sample(range(n), fault_count))
        for node in faulty:
            _byzantine_behaviour(bundle, node, master)
        run_to_quiescence(bundle, 5_000_000)
        check_bft_agreement(bundle, correct=set(range(n)) - faulty)
        if at_threshold:
            assert all(c.done for c in bundle.clients), \
                f"requests undecided with {fault_count} byzantine of {n}"
            assert bundle.audit.max_regency <= 5, \
                f"needed {bundle.audit.max_regency} regency changes"
    elapsed = time.time() - started
    verdict(3, True, f"{runs} randomized runs, agreement + liveness, {elapsed:.1f}s")
    assert elapsed < 120.0


# -- criteria 4-7, 9 share harness sweeps -------------------------------------------

def _sweep(protocol, n, scenario, rates, reps, horizon):
    cfg = ScenarioConfig(protocol=protocol, n=n, scenario=scenario,
                         attack_rates_gbps=rates, repetitions=reps,
                         seed=0xACCE, horizon_us=horizon)
    by_rate = {}
    for rate in cfg.attack_rates_gbps:
        by_rate[rate] = [run_repetition(cfg, rate, rep) for rep in range(reps)]
    return by_rate


def test_criterion_04_fault_free_ordering():
    started = time.time()
    details = []
    for n, paper_ratio in ((5, 2746.45 / 1701.91), (7, 3161.83 / 2048.25)):
        raft = _sweep(Protocol.RAFT, n, "1", (0.0,), 20, 1_300_000)[0.0]
        bft = _sweep(Protocol.BFT, n, "1", (0.0,), 20, 1_300_000)[0.0]
        raft_mean, bft_mean = mean_of(raft), mean_of(bft)
        ratio = bft_mean / raft_mean
        details.append(f"n={n}: {raft_mean:.0f}us vs {bft_mean:.0f}us "
                       f"ratio={ratio:.2f} (paper {paper_ratio:.2f})")
        assert raft_mean < bft_mean
        assert 1.2 <= ratio <= 3.0
    elapsed = time.time() - started
    verdict(4, True, "; ".join(details) + f"; {elapsed:.0f}s")
    assert elapsed < 30.0


RATES = (0.0, 2.0, 4.0, 4.5, 5.0, 5.5, 6.0)


def test_criterion_05_monotone_degradation():
    started = time.time()
    details = []
    for n in (5, 7):
        for protocol in (Protocol.RAFT, Protocol.BFT):
            sweep = _sweep(protocol, n, "1", RATES, 20, 1_000_000)
            means = [mean_of(sweep[rate]) for rate in RATES]
            for a, b, rate in zip(means, means[1:], RATES[1:]):
                assert b >= a, (f"{protocol.value} n={n}: mean fell to {b:.0f} "
                                f"at {rate} Gbps from {a:.0f}")
            increase = means[-1] / means[0] - 1.0
            details.append(f"{protocol.value}/n={n}: +{increase * 100:.0f}%")
            assert 0.10 <= increase <= 1.00, \
                f"{protocol.value} n={n}: increase {increase:+.0%} out of band"
    elapsed = time.time() - started
    verdict(5, True, ", ".join(details) + f"; {elapsed:.0f}s")
    assert elapsed < 120.0


def test_criterion_06_collapse_threshold():
    started = time.time()
    failures = []
    notes = []
    for n, threshold in ((5, 4.25), (7, 4.1)):
        raft = _sweep(Protocol.RAFT, n, "2", RATES, 10, 2_200_000)
        bft = _sweep(Protocol.BFT, n, "2", RATES, 10, 2_200_000)
        raft_base = mean_of(raft[0.0])
        bft_base = mean_of(bft[0.0])
        for rate in RATES:
            r_mean, b_mean = mean_of(raft[rate]), mean_of(bft[rate])
            if rate < threshold:
                if not r_mean <= 2.0 * raft_base:
                    failures.append(f"raft n={n} rate {rate}: {r_mean:.0f}us > 2x base")
                if any(rec.leader_changes != 0 for rec in raft[rate]):
                    failures.append(f"raft n={n} rate {rate}: leader changes below threshold")
            else:
                if not all(rec.leader_changes >= 1 for rec in raft[rate]):
                    failures.append(f"raft n={n} rate {rate}: a repetition saw no leader change")
                if not r_mean >= 100.0 * raft_base:
                    failures.append(f"raft n={n} rate {rate}: {r_mean / raft_base:.0f}x < 100x")
                else:
                    notes.append(f"raft n={n}@{rate}: {r_mean / raft_base:.0f}x")
            if not b_mean <= 2.0 * bft_base:
                failures.append(
                    f"bft n={n} rate {rate}: {b_mean / bft_base:.0f}x exceeds 2x its base")
            if any(rec.leader_changes != 0 for rec in bft[rate]):
                failures.append(f"bft n={n} rate {rate}: regency changes observed")
    elapsed = time.time() - started
    verdict(6, not failures,
            (("collapse confirmed: " + ", ".join(notes[:4])) if not failures
             else "; ".join(failures[:6])) + f"; {elapsed:.0f}s")
    assert elapsed < 120.0
    assert not failures, "criterion 6 clauses failed: " + "; ".join(failures)


def test_criterion_07_resource_model_shape():
    started = time.time()
    sweeps = {p: _sweep(p, 7, "2", RATES, 2, 1_200_000)
              for p in (Protocol.RAFT, Protocol.BFT)}

    def peak(p, rate, field):
        return statistics.fmean(getattr(r, field) for r in sweeps[p][rate])

    for p in sweeps:
        cpu = [peak(p, rate, "cpu_pct_peak") for rate in RATES]
        ram = [peak(p, rate, "ram_mb_peak") for rate in RATES]
        assert all(b >= a for a, b in zip(cpu, cpu[1:])), f"{p} cpu not monotone: {cpu}"
        assert all(b >= a for a, b in zip(ram, ram[1:])), f"{p} ram not monotone: {ram}"
    for rate in (0.0, 2.0, 4.0):
        assert peak(Protocol.BFT, rate, "cpu_pct_peak") >= \
            peak(Protocol.RAFT, rate, "cpu_pct_peak")
        assert peak(Protocol.BFT, rate, "ram_mb_peak") >= \
            peak(Protocol.RAFT, rate, "ram_mb_peak")
    gap0 = abs(peak(Protocol.BFT, 0.0, "cpu_pct_peak")
               - peak(Protocol.RAFT, 0.0, "cpu_pct_peak"))
    for rate in (4.5, 5.0, 5.5, 6.0):
        gap = abs(peak(Protocol.BFT, rate, "cpu_pct_peak")
                  - peak(Protocol.RAFT, rate, "cpu_pct_peak"))
        assert gap < gap0, f"cpu gap {gap:.1f} at {rate} not below {gap0:.1f}"
    elapsed = time.time() - started
    verdict(7, True, f"monotone proxies, gap closes above 4.5 Gbps; {elapsed:.0f}s")
    assert elapsed < 10.0


def test_criterion_08_scheduler_oracle_equivalence():
    started = time.time()
    from test_scheduler import (minion, oracle_filter, oracle_scores, pod,
                                random_instance)
    rng = random.Random(0xC8)
    for _ in range(500):
        pd, minions = random_instance(rng)
        assert [m.id for m in filter_minions(pd, minions)] == \
            [m.id for m in oracle_filter(pd, minions)]
        candidates = filter_minions(pd, minions)
        if not candidates:
            continue
        weights = PriorityWeights()
        theirs = oracle_scores(pd, candidates, weights)
        best = max(theirs)
        argmax = {c.id for c, s in zip(candidates, theirs)
                  if abs(s - best) < 1e-9}
        chosen = rank_minions(pd, candidates, weights, random.Random(7))
        assert chosen.id in argmax

    draws = random.Random(0x1227)
    counts = {"a": 0, "b": 0}
    pd = pod()
    for _ in range(10_000):
        counts[rank_minions(pd, [minion("a"), minion("b")],
                            PriorityWeights(), draws).id] += 1
    chi2 = sum((c - 5_000) ** 2 / 5_000 for c in counts.values())
    assert chi2 < CHI_SQUARED_CRIT_1DF_P01, f"tie-break skew: chi2={chi2:.2f}"
    elapsed = time.time() - started
    verdict(8, True, f"500 instances + chi2={chi2:.2f}; {elapsed:.1f}s")
    assert elapsed < 10.0


def test_criterion_09_determinism():
    started = time.time()

    def export_once():
        cfg = ScenarioConfig(protocol=Protocol.BFT, n=5, scenario="2",
                             attack_rates_gbps=(0.0, 5.0), repetitions=2,
                             seed=99, horizon_us=1_500_000)
        return export_bytes(run_scenario(cfg), "csv")

    first, second = export_once(), export_once()
    assert first == second
    elapsed = time.time() - started
    verdict(9, True, f"byte-identical CSV across two runs; {elapsed:.1f}s")
    assert elapsed < 30.0
