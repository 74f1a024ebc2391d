"""Evaluation metrics over measured tail-latency series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError


@dataclass(frozen=True)
class QosSeries:
    """Time-ordered (t_s, p99_meas_ms) pairs at measurement cadence."""

    t_s: np.ndarray
    p99_ms: np.ndarray
    qos_target_ms: float

    def __post_init__(self):
        t = np.asarray(self.t_s, dtype=float)
        p = np.asarray(self.p99_ms, dtype=float)
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "p99_ms", p)
        if t.size == 0 or t.shape != p.shape:
            raise InputDomainError("series must be nonempty with matching shapes")
        if np.any(p <= 0) or self.qos_target_ms <= 0:
            raise InputDomainError("latencies and target must be positive")

    def ratios(self) -> np.ndarray:
        return self.p99_ms / self.qos_target_ms


def weighted_qos_violation(series: QosSeries) -> float:
    """Mean per-interval percent excess of measured latency over target.

    100 * (mean_t max(P_t/Q, 1) - 1); zero iff every interval meets the target.
    """
    return float(100.0 * (np.mean(np.maximum(series.ratios(), 1.0)) - 1.0))


def qos_guarantee(series: QosSeries) -> float:
    """Percent of intervals meeting the target (ratio <= 1)."""
    return float(100.0 * np.mean(series.ratios() <= 1.0))


def qos_tardiness(series: QosSeries) -> float:
    """Mean ratio among violating intervals; 1.0 by convention if none violate."""
    r = series.ratios()
    viol = r[r > 1.0]
    if viol.size == 0:
        return 1.0
    return float(np.mean(viol))


def violation_severity(series: QosSeries, t1: float, t2: float) -> float:
    """Discrete integral of (p99 - target) dt over [t1, t2), in ms*s.

    Intervals below the target contribute negatively.
    """
    t = series.t_s
    if not (t1 < t2) or t1 < t[0] - (t[1] - t[0] if t.size > 1 else 1.0) or t2 > t[-1] + 1e-9:
        raise InputDomainError("window outside series span")
    # Each sample at t_i represents the interval ending at t_i.
    dt = np.diff(t, prepend=t[0] - (t[1] - t[0] if t.size > 1 else 1.0))
    mask = (t > t1) & (t <= t2)
    return float(np.sum((series.p99_ms[mask] - series.qos_target_ms) * dt[mask]))


def be_performance(be_instr_per_s: np.ndarray, baseline_be_instr_per_s: np.ndarray) -> float:
    """Mean BE throughput normalized to a baseline trace of equal duration."""
    a = np.asarray(be_instr_per_s, dtype=float)
    b = np.asarray(baseline_be_instr_per_s, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InputDomainError("traces must be nonempty")
    return float(np.mean(a) / np.mean(b))
