"""smrbench: deterministic consensus-cluster simulator and benchmark harness."""

from .cluster import (ClusterConfig, Protocol, ToleranceBounds, byz_tolerance,
                      bft_write_quorum, crash_tolerance, raft_majority)
from .faults import (FaultEngine, FaultKind, FaultSpec, LoadModel,
                     ResourceSnapshot, effective_delay_factor,
                     resources_under_attack)
from .harness import (ComparisonReport, ConfigError, MetricsRecord,
                      ScenarioConfig, export, run_repetition, run_scenario,
                      summarize)
from .simnet import LatencyModel, Simulation, rng_stream

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig", "Protocol", "ToleranceBounds", "byz_tolerance",
    "bft_write_quorum", "crash_tolerance", "raft_majority",
    "FaultEngine", "FaultKind", "FaultSpec", "LoadModel", "ResourceSnapshot",
    "effective_delay_factor", "resources_under_attack",
    "ComparisonReport", "ConfigError", "MetricsRecord", "ScenarioConfig",
    "export", "run_repetition", "run_scenario", "summarize",
    "LatencyModel", "Simulation", "rng_stream",
    "__version__",
]
