"""Counter snapshots and the normalized feature pipeline.

Raw per-interval counter values are converted to rates, log-transformed with
ln(1+x) (tolerates zero counts), and normalized by median/IQR statistics that
are fitted once on an initial window and then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, InputDomainError

HP_COUNTERS = (
    "inst_retired.any",
    "cpu_clk_unhalted.thread",
    "frontend_retired.latency_ge_32",
    "uops_executed.core_cycles_ge_3",
    "rs_events.empty_cycles",
    "mem_load_retired.l2_miss",
    "cycle_activity.stalls_mem_any",
    "offcore_requests.all_requests",
    "offcore_requests.demand_data_rd",
)

BE_COUNTERS = (
    "inst_retired.any",
    "cpu_clk_unhalted.thread",
    "l2_rqsts.all_demand_miss",
    "l2_rqsts.swpf_miss",
)

IQR_FLOOR = 1e-6

# Feature layout: the 9 HP counter rates followed by lambda_be.
N_FEATURES = len(HP_COUNTERS) + 1


@dataclass(frozen=True)
class CounterSnapshot:
    """Raw counter values accumulated over one interval."""

    hp: np.ndarray  # shape (9,), order of HP_COUNTERS
    be: np.ndarray  # shape (4,), order of BE_COUNTERS
    interval_s: float

    def __post_init__(self):
        hp = np.asarray(self.hp, dtype=float)
        be = np.asarray(self.be, dtype=float)
        object.__setattr__(self, "hp", hp)
        object.__setattr__(self, "be", be)
        if hp.shape != (len(HP_COUNTERS),) or be.shape != (len(BE_COUNTERS),):
            raise InputDomainError("counter snapshot has wrong shape")
        if self.interval_s <= 0:
            raise InputDomainError("interval_s must be positive")
        if np.any(hp < 0) or np.any(be < 0):
            raise InputDomainError("counter values must be nonnegative")

    def hp_rates(self) -> np.ndarray:
        return self.hp / self.interval_s

    def be_rates(self) -> np.ndarray:
        return self.be / self.interval_s

    @staticmethod
    def combine(snapshots: list["CounterSnapshot"]) -> "CounterSnapshot":
        """Aggregate consecutive snapshots into one longer interval."""
        if not snapshots:
            raise InputDomainError("cannot combine zero snapshots")
        return CounterSnapshot(
            hp=np.sum([s.hp for s in snapshots], axis=0),
            be=np.sum([s.be for s in snapshots], axis=0),
            interval_s=sum(s.interval_s for s in snapshots),
        )


@dataclass(frozen=True)
class FeatureVector:
    hp_features: np.ndarray  # shape (9,), normalized
    lambda_be: float  # normalized

    def as_array(self) -> np.ndarray:
        return np.append(self.hp_features, self.lambda_be)


@dataclass(frozen=True)
class NormStats:
    """Per-feature median and IQR in ln(1+rate) space; frozen after fitting."""

    median: np.ndarray  # shape (10,)
    iqr: np.ndarray  # shape (10,), floored at IQR_FLOOR


def lambda_be(snapshot: CounterSnapshot) -> float:
    """Potential-contention rate of the BE workloads.

    C * (l2 demand misses + l2 prefetch misses) / I, computed on per-second
    rates, where C is BE unhalted cycles and I is BE retired instructions.
    Returns 0 when no BE instructions retired.
    """
    i, c, dm, swpf = snapshot.be_rates()
    if i == 0:
        return 0.0
    return float(c * (dm + swpf) / i)


def _log_row(snapshot: CounterSnapshot) -> np.ndarray:
    return np.log1p(np.append(snapshot.hp_rates(), lambda_be(snapshot)))


def fit_norm_stats(snapshots: list[CounterSnapshot]) -> NormStats:
    """Fit per-feature median/IQR on ln(1 + rate). Requires >= 8 snapshots."""
    if len(snapshots) < 8:
        raise CalibrationError(f"need >= 8 snapshots to fit normalization, got {len(snapshots)}")
    x = np.array([_log_row(s) for s in snapshots])
    median = np.median(x, axis=0)
    iqr = np.percentile(x, 75, axis=0) - np.percentile(x, 25, axis=0)
    iqr = np.maximum(iqr, IQR_FLOOR)
    return NormStats(median=median, iqr=iqr)


def featurize(snapshot: CounterSnapshot, stats: NormStats) -> FeatureVector:
    z = (_log_row(snapshot) - stats.median) / stats.iqr
    return FeatureVector(hp_features=z[:-1], lambda_be=float(z[-1]))
