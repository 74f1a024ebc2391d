"""Comparison controllers: an IPC-driven PID on the memory-bandwidth action,
and the measurement-feedback RL controller (same machinery as the main
controller, slower interval, no predictor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import LoopConfig, LoopResult, run_control_loop
from .errors import InfeasibleScenarioError
from .features import HP_COUNTERS
from .simenv import AllocationAction, SimEnv

# Static CF action for PID: maximizes HP core frequency while leaving BE the
# best frequency compatible with that choice (HP 3300, BE 2400 MHz).
PID_STATIC_CF_IDX = 2

_I_INST = HP_COUNTERS.index("inst_retired.any")
_I_CLK = HP_COUNTERS.index("cpu_clk_unhalted.thread")


def measured_ipc(counters) -> float:
    clk = counters.hp[_I_CLK]
    if clk <= 0:
        return 0.0
    return float(counters.hp[_I_INST] / clk)


@dataclass
class PidConfig:
    kp: float
    ki: float
    kd: float
    setpoint_ipc: float
    base_idx: float  # output bias: calibrated boundary index at zero error
    integral_clamp: float = 8.0
    control_interval_s: float = 0.2
    cf_idx: int = PID_STATIC_CF_IDX


def pid_calibrate(env: SimEnv, kp: float, ki: float, kd: float,
                  sample_interval_s: float = 5.0):
    """Sweep 8 memory-bandwidth settings (indices 0-5 plus repeats of the two
    settings adjacent to the QoS boundary) at the static safe CF, 5 s each.

    The IPC setpoint is 1.02x the lowest IPC among QoS-meeting settings.
    Returns (PidConfig, calibration rows for the trace).
    """
    target = env.hp.qos_target_ms
    records: dict[int, list] = {i: [] for i in range(6)}
    rows = []
    t = 0.0

    def sample(idx):
        nonlocal t
        _, out = env.step(AllocationAction(idx, PID_STATIC_CF_IDX), sample_interval_s)
        t += sample_interval_s
        ipc = measured_ipc(out.counters)
        records[idx].append((ipc, out.p99_meas_ms))
        rows.append([t, "calibration", idx, PID_STATIC_CF_IDX, None, None,
                     out.p99_meas_ms, out.p99_meas_ms / target, None,
                     out.be_instr_per_s, None, "pid"])

    for idx in range(6):
        sample(idx)
    feasible = [i for i in range(6) if np.mean([p for _, p in records[i]]) <= target]
    if not feasible:
        raise InfeasibleScenarioError("no memory-bandwidth setting meets the QoS target")
    boundary = max(feasible)
    # Two repeats around the boundary sharpen the setpoint estimate: 40 s total.
    sample(boundary)
    sample(min(boundary + 1, 5) if boundary < 5 else boundary - 1)
    feasible = [i for i in range(6) if np.mean([p for _, p in records[i]]) <= target]
    if not feasible:
        raise InfeasibleScenarioError("no memory-bandwidth setting meets the QoS target")
    setpoint = 1.02 * min(np.mean([ipc for ipc, _ in records[i]]) for i in feasible)
    cfg = PidConfig(kp=kp, ki=ki, kd=kd, setpoint_ipc=setpoint, base_idx=float(max(feasible)))
    return cfg, rows


@dataclass
class PidMemory:
    integral: float = 0.0
    prev_error: float | None = None


def pid_step(cfg: PidConfig, ipc: float, mem: PidMemory) -> int:
    """Classic positional PID on normalized IPC error, output mapped to the
    nearest memory-bandwidth index. The integral term is clamped (anti-windup).
    """
    error = (ipc - cfg.setpoint_ipc) / cfg.setpoint_ipc
    dt = cfg.control_interval_s
    mem.integral = float(np.clip(mem.integral + error * dt, -cfg.integral_clamp,
                                 cfg.integral_clamp))
    deriv = 0.0 if mem.prev_error is None else (error - mem.prev_error) / dt
    mem.prev_error = error
    out = cfg.base_idx + cfg.kp * error + cfg.ki * mem.integral + cfg.kd * deriv
    return int(np.clip(round(out), 0, 5))


@dataclass
class PidLoopResult:
    rows: list
    config: PidConfig


def run_pid_loop(env: SimEnv, duration_s: float, kp: float = 6.0, ki: float = 1.0,
                 kd: float = 0.05) -> PidLoopResult:
    """Calibrate, then run the 200 ms PID loop for the remaining duration."""
    cfg, rows = pid_calibrate(env, kp, ki, kd)
    t = len(rows) * 5.0
    mem = PidMemory()
    target = env.hp.qos_target_ms
    idx = int(cfg.base_idx)
    dt = cfg.control_interval_s
    n_steps = int(round((duration_s - t) / dt))
    for _ in range(n_steps):
        action = AllocationAction(idx, cfg.cf_idx)
        _, out = env.step(action, dt)
        t = round(t + dt, 9)
        ratio = None if out.p99_meas_ms is None else out.p99_meas_ms / target
        rows.append([t, "regular", action.mbw_idx, action.cf_idx, None, None,
                     out.p99_meas_ms, ratio, None, out.be_instr_per_s, None, "pid"])
        idx = pid_step(cfg, measured_ipc(out.counters), mem)
    return PidLoopResult(rows=rows, config=cfg)


def measurement_rl_loop(env: SimEnv, duration_s: float, seed: int,
                        control_interval_s: float = 5.0) -> LoopResult:
    """The RL baseline: identical controller machinery, but decisions and
    rewards come from five-second QoS measurements and initial samples are
    drawn uniformly at random."""
    cfg = LoopConfig(
        method="rl",
        control_interval_s=control_interval_s,
        feedback="measured",
        sampling="uniform",
    )
    return run_control_loop(env, cfg, duration_s, seed)
