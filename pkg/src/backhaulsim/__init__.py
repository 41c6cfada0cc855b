"""Discrete-time simulator for multi-path scheduling over mmWave backhaul.

The package splits into the radio/queueing primitives (model, queues), the
three per-slot decision layers (learning for path choice, ratealloc for the
convex power/rate subproblem, scheduler for the slot loop and policies),
and a scenario harness (harness, cli) that sweeps arrival rates and seeds
and exports deterministic CSV/JSON artifacts.
"""

__version__ = "0.1.0"

from .model import (Flow, Path, Topology, antenna_gain,
                    enumerate_disjoint_paths, ergodic_rate_mc, link_rate,
                    pathloss_los)
from .queues import (ArrivalModel, DelaySlackState, QueueMatrix,
                     VirtualQueues, little_delay)
from .learning import (LearnerState, bg_strategy, flow_utility,
                       regret_strategy, sample_paths)
from .ratealloc import (ChainSpec, ScaProblem, aux_optimum, grid_reference,
                        original_feasibility, sca_solve, water_fill)
from .scheduler import (POLICIES, CandidateRoute, NetworkModel,
                        SchedulerConfig, SimState, SlotDecision,
                        baseline_step, slot_step)
from .harness import (ConfigError, MetricsLog, RunLog, ScenarioConfig,
                      build_network, ccdf, export, load_runs, load_scenario,
                      run, summarize)

__all__ = [
    "__version__",
    "Flow", "Path", "Topology", "antenna_gain", "enumerate_disjoint_paths",
    "ergodic_rate_mc", "link_rate", "pathloss_los",
    "ArrivalModel", "DelaySlackState", "QueueMatrix", "VirtualQueues",
    "little_delay",
    "LearnerState", "bg_strategy", "flow_utility", "regret_strategy",
    "sample_paths",
    "ChainSpec", "ScaProblem", "aux_optimum", "grid_reference",
    "original_feasibility", "sca_solve", "water_fill",
    "POLICIES", "CandidateRoute", "NetworkModel", "SchedulerConfig",
    "SimState", "SlotDecision", "baseline_step", "slot_step",
    "ConfigError", "MetricsLog", "RunLog", "ScenarioConfig", "build_network",
    "ccdf", "export", "load_runs", "load_scenario", "run", "summarize",
]
