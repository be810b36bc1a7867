"""Command-line entry points: run benchmarks, compare exports, place pods.

Exit codes: 0 on success, 2 when a configuration is rejected, 1 on I/O
failure. ``SMRBENCH_OUT_DIR`` overrides the directory for relative output
paths.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys

from .cluster import Protocol
from .faults import FaultKind, LoadModel
from .harness import (ConfigError, ExportError, ReportAlignmentError,
                      ScenarioConfig, export, load_records, run_scenario,
                      summarize)
from .scheduler import (PriorityWeights, UnschedulableError, minion_from_dict,
                        place_pod, pod_from_dict, weights_from_dict)
from .simnet import LatencyModel


def _out_path(path: str) -> str:
    base = os.environ.get("SMRBENCH_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _config_from_args(args: argparse.Namespace) -> ScenarioConfig:
    raw: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    if "latency" in raw:
        raw["latency"] = LatencyModel(**raw["latency"])
    if raw.get("load_model"):
        raw["load_model"] = LoadModel(**raw["load_model"])
    if "protocol" in raw:
        raw["protocol"] = Protocol(raw["protocol"])
    if "fault_kind" in raw:
        raw["fault_kind"] = FaultKind(raw["fault_kind"])
    if "attack_rates_gbps" in raw:
        raw["attack_rates_gbps"] = tuple(raw["attack_rates_gbps"])
    if args.protocol:
        raw["protocol"] = Protocol(args.protocol)
    if args.masters is not None:
        raw["n"] = args.masters
    if args.scenario:
        raw["scenario"] = args.scenario
    if args.rates:
        raw["attack_rates_gbps"] = tuple(
            float(r) for r in args.rates.split(",") if r.strip())
    if args.reps is not None:
        raw["repetitions"] = args.reps
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.horizon_us is not None:
        raw["horizon_us"] = args.horizon_us
    if args.clients is not None:
        raw["clients"] = args.clients
    return ScenarioConfig(**raw)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    records = run_scenario(config)
    path = _out_path(args.out)
    export(records, args.format, path)
    answered = sum(r.requests_answered for r in records)
    print(f"wrote {len(records)} records ({answered} answered requests) "
          f"to {path}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    records = load_records(args.a) + load_records(args.b)
    report = summarize(records)
    print(f"{'rate':>6}  {'raft mean':>12}  {'bft mean':>12}  "
          f"{'raft/bft':>9}  {'ld-chg':>6}  {'rg-chg':>6}")
    for row in report.rows:
        print(f"{row.attack_rate_gbps:>6g}  {row.raft_mean_us:>12.2f}  "
              f"{row.bft_mean_us:>12.2f}  {row.ratio_raft_over_bft:>9.3f}  "
              f"{row.raft_leader_changes:>6}  {row.bft_regency_changes:>6}")
    print(f"raft collapsed: {report.raft_collapsed}; "
          f"bft collapsed: {report.bft_collapsed}")
    if args.out:
        payload = {
            "rows": [row.__dict__ for row in report.rows],
            "raft_collapsed": report.raft_collapsed,
            "bft_collapsed": report.bft_collapsed,
        }
        path = _out_path(args.out)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        print(f"wrote comparison to {path}")
    return 0


def _cmd_schedule(args: argparse.Namespace) -> int:
    with open(args.cluster, "r", encoding="utf-8") as fh:
        cluster_raw = json.load(fh)
    with open(args.pods, "r", encoding="utf-8") as fh:
        pods_raw = json.load(fh)
    minions = [minion_from_dict(m) for m in cluster_raw["minions"]]
    pods = [pod_from_dict(p) for p in pods_raw["pods"]]
    weights = (weights_from_dict(pods_raw["weights"])
               if "weights" in pods_raw else PriorityWeights())
    rng = random.Random(args.seed)
    placements = [place_pod(pod, minions, weights, rng) for pod in pods]
    report = {
        "placements": [p.__dict__ for p in placements],
        "pending": [p.pod_id for p in placements if p.status == "pending"],
    }
    text = json.dumps(report, indent=2)
    if args.out:
        path = _out_path(args.out)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote placement report to {path}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smrbench",
        description="Simulate and benchmark replicated master clusters.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark scenario sweep")
    run.add_argument("--protocol", choices=[p.value for p in Protocol])
    run.add_argument("--masters", type=int)
    run.add_argument("--scenario", choices=["1", "2", "custom"])
    run.add_argument("--rates", help="comma-separated Gbps list, e.g. 0,2,4.5")
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--horizon-us", type=int, dest="horizon_us")
    run.add_argument("--clients", type=int)
    run.add_argument("--config", help="JSON file mirroring ScenarioConfig")
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=["csv", "json"], default="csv")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="compare two exported record files")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=_cmd_compare)

    sched = sub.add_parser("schedule", help="place pods onto a minion cluster")
    sched.add_argument("--cluster", required=True)
    sched.add_argument("--pods", required=True)
    sched.add_argument("--seed", type=int, default=0)
    sched.add_argument("--out")
    sched.set_defaults(func=_cmd_schedule)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReportAlignmentError, UnschedulableError) as exc:
        print(f"config rejected: {exc}", file=sys.stderr)
        return 2
    except (ExportError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
