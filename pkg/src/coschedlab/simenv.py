"""Deterministic, seeded simulator of one compute node co-scheduling a
latency-critical (HP) workload with best-effort (BE) workloads.

The model is intentionally compact but reproduces the qualitative phenomena
that make this control problem hard:

* noisy tail-latency measurements, with noise growing with utilization;
* inertia: shared-resource pressure follows allocation changes through a
  first-order low-pass with time constant tau;
* QoS cliffs: near saturation one allocation step can change true p99 by an
  order of magnitude (utilization-law latency curve with a clamp);
* workload-dependent counter informativeness via per-profile coefficients.

Internally the simulator advances on a fixed tick (default 10 ms); latency
measurements are emitted on a fixed cadence (default 1 s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError
from .features import BE_COUNTERS, HP_COUNTERS, CounterSnapshot

# Allocation tables, indexed by the two branch actions.
HP_MBW_RESTRICT_PCT = (0, 40, 60, 70, 80, 90)
HP_CF_MHZ = (2400, 3000, 3300, 3300, 3300, 3300)
BE_CF_MHZ = (3300, 3000, 2400, 2000, 1400, 800)
BE_MBW_RESTRICT_MIN = 10
BE_MBW_RESTRICT_MAX = 90
N_ACTIONS_PER_BRANCH = 6

RHO_MAX = 0.995


@dataclass(frozen=True)
class AllocationAction:
    mbw_idx: int
    cf_idx: int

    def __post_init__(self):
        if not (0 <= self.mbw_idx <= 5 and 0 <= self.cf_idx <= 5):
            raise InputDomainError(f"action indices out of range: {self}")


@dataclass(frozen=True)
class ResolvedAllocation:
    hp_mbw_restrict_pct: int
    be_mbw_restrict_pct: int
    hp_cf_mhz: int
    be_cf_mhz: int


def resolve_allocation(action: AllocationAction) -> ResolvedAllocation:
    """Map branch indices onto concrete restriction percentages and frequencies.

    The BE bandwidth restriction is the complement of the HP restriction,
    clamped to [10, 90]% so the BE workloads always remain runnable.
    """
    hp_restrict = HP_MBW_RESTRICT_PCT[action.mbw_idx]
    be_restrict = min(max(100 - hp_restrict, BE_MBW_RESTRICT_MIN), BE_MBW_RESTRICT_MAX)
    return ResolvedAllocation(
        hp_mbw_restrict_pct=hp_restrict,
        be_mbw_restrict_pct=be_restrict,
        hp_cf_mhz=HP_CF_MHZ[action.cf_idx],
        be_cf_mhz=BE_CF_MHZ[action.cf_idx],
    )


def all_actions() -> list[AllocationAction]:
    return [AllocationAction(m, c) for m in range(6) for c in range(6)]


@dataclass
class HpProfile:
    """Model parameters for one HP workload analog.

    Parameter values ship in config files and are tuning choices for this
    laboratory, not ground truth for any real workload.
    """

    name: str
    qos_target_ms: float
    base_latency_ms: float
    capacity_rps: float
    cf_scaling: float  # exponent in (0, 1]: throughput sensitivity to HP CF
    mem_sensitivity: float  # in [0, 1]: capacity loss per unit contention
    kappa: float  # latency-law curvature
    work_per_request: float  # HP instructions per served request
    cores: int
    mem_intensity: float  # HP offcore accesses per instruction
    # Capacity multiplier per mbw_idx (HP restriction 0..90%), nonincreasing.
    mbw_capacity_factor: tuple
    counter_coeffs: dict  # keys: frontend, uops, rs, l2, stall
    counter_noise_sigma: float
    measurement_noise: tuple  # (sigma_lo, sigma_hi)
    noise_shape_pow: float = 12.0

    def __post_init__(self):
        if not (self.qos_target_ms > self.base_latency_ms > 0):
            raise InputDomainError("need qos_target_ms > base_latency_ms > 0")
        if self.capacity_rps <= 0:
            raise InputDomainError("capacity_rps must be positive")
        if not (0.0 <= self.mem_sensitivity <= 1.0):
            raise InputDomainError("mem_sensitivity must be in [0, 1]")
        if self.counter_noise_sigma < 0 or any(s < 0 for s in self.measurement_noise):
            raise InputDomainError("noise sigmas must be nonnegative")
        if len(self.mbw_capacity_factor) != 6:
            raise InputDomainError("mbw_capacity_factor needs 6 entries")


@dataclass
class BeProfile:
    mem_intensity_per_thread: float  # bandwidth demand per thread at 3300 MHz
    ipc_base: float
    cf_scaling: float
    pressure_scale: float = 0.6  # maps granted bandwidth onto contention in [0, 1)
    offcore_per_instr: float = 0.05  # BE l2-miss events per instruction
    # Progress loss under bandwidth throttling: instr rate scales as
    # (granted/demand)^throttle_exponent when demand exceeds the grant.
    # Below 1 models partial latency tolerance of the BE workloads.
    throttle_exponent: float = 1.0

    def __post_init__(self):
        if min(self.mem_intensity_per_thread, self.ipc_base, self.cf_scaling) <= 0:
            raise InputDomainError("BE profile fields must be positive")
        if not (0.0 < self.throttle_exponent <= 1.0):
            raise InputDomainError("throttle_exponent must be in (0, 1]")


@dataclass
class DemandTrace:
    kind: str  # "static" or "dynamic-cycle"
    rps_min: float
    rps_max: float
    period_s: float = 120.0
    be_threads_min: int = 3
    be_threads_max: int = 12
    be_cycle_s: float = 60.0

    def __post_init__(self):
        if not (0 < self.rps_min <= self.rps_max):
            raise InputDomainError("need 0 < rps_min <= rps_max")
        if not (1 <= self.be_threads_min <= self.be_threads_max):
            raise InputDomainError("bad BE thread bounds")
        if self.kind not in ("static", "dynamic-cycle"):
            raise InputDomainError(f"unknown trace kind {self.kind!r}")


def demand_at(trace: DemandTrace, t_s: float, rng=None):
    """Demand at simulated time t_s: (hp_load_rps, be_threads).

    The HP waveform is a bounded sinusoid plus a step segment; BE thread count
    follows a triangular staircase (one thread at a time) with period
    be_cycle_s, mimicking gradual job arrivals and completions.
    """
    if t_s < 0:
        raise InputDomainError("t_s must be nonnegative")
    span = trace.be_threads_max - trace.be_threads_min
    frac_be = (t_s % trace.be_cycle_s) / trace.be_cycle_s
    tri = 1.0 - abs(2.0 * frac_be - 1.0)
    be_threads = trace.be_threads_min + int(round(tri * span))
    if trace.kind == "static":
        return trace.rps_min, be_threads
    mid = 0.5 * (trace.rps_min + trace.rps_max)
    amp = 0.5 * (trace.rps_max - trace.rps_min)
    frac = (t_s % trace.period_s) / trace.period_s
    # Phase offset: each period opens below the midpoint and ramps up, so the
    # first half-cycle spans the full load range.
    load = mid + amp * math.sin(2.0 * math.pi * (frac - 1.0 / 6.0))
    if 0.55 <= frac < 0.70:
        load += 0.5 * amp
    load = min(max(load, trace.rps_min), trace.rps_max)
    return load, be_threads


@dataclass
class SimState:
    t_s: float
    hp_load_rps: float
    be_threads: int
    contention: float
    rng_state: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class StepOutcome:
    counters: CounterSnapshot
    p99_meas_ms: float | None  # mean over measurement boundaries in the step
    p99_true_ms: float  # diagnostic only; never fed to controllers
    be_instr_per_s: float
    hp_qos_ratio_true: float


class SimEnv:
    """One simulated node. Owns its generator; instances are independent."""

    def __init__(
        self,
        hp: HpProfile,
        be: BeProfile,
        trace: DemandTrace,
        seed: int,
        tick_s: float = 0.01,
        tau_s: float = 1.5,
        meas_interval_s: float = 1.0,
        noise: bool = True,
    ):
        self.hp = hp
        self.be = be
        self.trace = trace
        self.seed = seed
        self.tick_s = tick_s
        self.tau_s = tau_s
        self.meas_interval_s = meas_interval_s
        self.noise = noise
        self._meas_ticks = max(1, round(meas_interval_s / tick_s))
        self.reset()

    def reset(self) -> SimState:
        self.rng = np.random.default_rng([self.seed, 0x5E])
        self._ticks = 0
        load, th = demand_at(self.trace, 0.0)
        self._pi = 0.0
        self._load = load
        self._threads = th
        return self.state()

    def state(self) -> SimState:
        return SimState(
            t_s=self._ticks * self.tick_s,
            hp_load_rps=self._load,
            be_threads=self._threads,
            contention=self._pi,
            rng_state=self.rng.bit_generator.state,
        )

    # -- model pieces ------------------------------------------------------

    def _be_bandwidth(self, threads, alloc: ResolvedAllocation):
        """(granted bandwidth, demand) in units where full node bandwidth = 1."""
        demand = (
            threads
            * self.be.mem_intensity_per_thread
            * (alloc.be_cf_mhz / 3300.0) ** self.be.cf_scaling
        )
        allow = (100.0 - alloc.be_mbw_restrict_pct) / 100.0
        return min(demand, allow), demand

    def _pi_raw(self, threads, alloc: ResolvedAllocation) -> float:
        granted, _ = self._be_bandwidth(threads, alloc)
        return min(self.be.pressure_scale * granted, 0.999)

    def _capacity(self, alloc: ResolvedAllocation, pi: float) -> float:
        hp = self.hp
        return (
            hp.capacity_rps
            * (alloc.hp_cf_mhz / 3300.0) ** hp.cf_scaling
            * (1.0 - hp.mem_sensitivity * pi)
            * hp.mbw_capacity_factor[HP_MBW_RESTRICT_PCT.index(alloc.hp_mbw_restrict_pct)]
        )

    def _p99_true(self, load, alloc, pi) -> tuple[float, float]:
        mu = max(self._capacity(alloc, pi), 1e-9)
        rho = min(load / mu, RHO_MAX)
        return self.hp.base_latency_ms * (1.0 + self.hp.kappa * rho / (1.0 - rho)), rho

    def _meas_sigma(self, rho) -> float:
        lo, hi = self.hp.measurement_noise
        return lo + (hi - lo) * min(max(rho, 0.0), 1.0) ** self.hp.noise_shape_pow

    def _be_instr_per_s(self, threads, alloc) -> float:
        granted, demand = self._be_bandwidth(threads, alloc)
        if demand <= granted or demand == 0.0:
            eff = 1.0
        else:
            eff = (granted / demand) ** self.be.throttle_exponent
        return threads * alloc.be_cf_mhz * 1e6 * self.be.ipc_base * eff

    # -- stepping ----------------------------------------------------------

    def step(self, action: AllocationAction, dt_s: float):
        """Advance dt_s seconds under a fixed allocation.

        Returns (SimState, StepOutcome). dt_s is rounded to whole ticks.
        """
        if dt_s <= 0:
            raise InputDomainError("dt_s must be positive")
        alloc = resolve_allocation(action)
        n_ticks = max(1, round(dt_s / self.tick_s))
        dt = n_ticks * self.tick_s
        alpha = min(self.tick_s / self.tau_s, 1.0)
        measurements = []
        for _ in range(n_ticks):
            self._ticks += 1
            t = self._ticks * self.tick_s
            self._load, self._threads = demand_at(self.trace, t)
            pi_raw = self._pi_raw(self._threads, alloc)
            self._pi += alpha * (pi_raw - self._pi)
            if self._ticks % self._meas_ticks == 0:
                p99, rho = self._p99_true(self._load, alloc, self._pi)
                if self.noise:
                    p99 *= math.exp(self._meas_sigma(rho) * self.rng.standard_normal())
                measurements.append(p99)
        p99_true, rho = self._p99_true(self._load, alloc, self._pi)
        counters = self._emit_counters(alloc, rho, dt)
        outcome = StepOutcome(
            counters=counters,
            p99_meas_ms=float(np.mean(measurements)) if measurements else None,
            p99_true_ms=p99_true,
            be_instr_per_s=self._be_instr_per_s(self._threads, alloc),
            hp_qos_ratio_true=p99_true / self.hp.qos_target_ms,
        )
        return self.state(), outcome

    def _emit_counters(self, alloc: ResolvedAllocation, rho: float, dt: float) -> CounterSnapshot:
        hp, pi = self.hp, self._pi
        mu = max(self._capacity(alloc, pi), 1e-9)
        served = min(self._load, mu)
        instr = served * hp.work_per_request * (1.0 - 0.3 * pi)
        clk = hp.cores * alloc.hp_cf_mhz * 1e6 * max(rho, 0.02)
        cc = hp.counter_coeffs
        hp_rates = np.array(
            [
                instr,
                clk,
                cc["frontend"] * clk * (0.02 + pi),
                cc["uops"] * clk * (1.0 - 0.6 * pi),
                cc["rs"] * clk * (0.05 + pi),
                instr * cc["l2"] * (0.01 + 0.04 * pi),
                cc["stall"] * clk * (0.03 + pi),
                instr * hp.mem_intensity * (1.0 - alloc.hp_mbw_restrict_pct / 100.0),
                0.0,  # demand reads filled below as a fixed fraction
            ]
        )
        be_instr = self._be_instr_per_s(self._threads, alloc)
        be_rates = np.array(
            [
                be_instr,
                self._threads * alloc.be_cf_mhz * 1e6,
                be_instr * self.be.offcore_per_instr * 0.7,
                be_instr * self.be.offcore_per_instr * 0.3,
            ]
        )
        hp_counts = hp_rates * dt
        be_counts = be_rates * dt
        if self.noise and hp.counter_noise_sigma > 0:
            sig = hp.counter_noise_sigma
            hp_counts = hp_counts * np.exp(sig * self.rng.standard_normal(len(HP_COUNTERS)))
            be_counts = be_counts * np.exp(sig * self.rng.standard_normal(len(BE_COUNTERS)))
        hp_counts[8] = 0.7 * hp_counts[7]
        return CounterSnapshot(hp=hp_counts, be=be_counts, interval_s=dt)
