"""coschedlab: a seeded laboratory for learning QoS-safe resource allocation
when latency-critical and best-effort workloads share one node.

The package contains a deterministic contention simulator, a counter feature
pipeline, an SVR tail-latency predictor with rolling bias correction, a small
from-scratch neural engine, a branching dueling double-Q controller with
safety-clipped exploration, PID and measurement-driven RL baselines, and an
experiment harness with a brute-force oracle.
"""

from .config import ExperimentConfig, build_env, load_experiment, load_profiles
from .controller import LoopConfig, run_control_loop
from .harness import compare, oracle_static, run_experiment
from .simenv import AllocationAction, BeProfile, DemandTrace, HpProfile, SimEnv

__version__ = "0.1.0"

__all__ = [
    "AllocationAction",
    "BeProfile",
    "DemandTrace",
    "ExperimentConfig",
    "HpProfile",
    "LoopConfig",
    "SimEnv",
    "__version__",
    "build_env",
    "compare",
    "load_experiment",
    "load_profiles",
    "oracle_static",
    "run_control_loop",
    "run_experiment",
]
