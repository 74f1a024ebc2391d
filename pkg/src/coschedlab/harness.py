"""Experiment harness: run a controller, write trace/summary artifacts, search
for the static oracle allocation, and compare runs across methods."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import measurement_rl_loop, run_pid_loop
from .config import ExperimentConfig, build_env
from .controller import TRACE_COLUMNS, run_control_loop
from .errors import InfeasibleScenarioError, InputDomainError
from .metrics import (
    QosSeries,
    qos_guarantee,
    qos_tardiness,
    violation_severity,
    weighted_qos_violation,
)
from .predictor import RollingBuffers, correct_bias
from .simenv import AllocationAction, all_actions

_NUMERIC = {
    "t_s", "mbw_idx", "cf_idx", "p99_pred_ms", "p99_corrected_ms",
    "p99_meas_ms", "qos_ratio_used", "reward", "be_instr_per_s", "loss",
}
_INT = {"mbw_idx", "cf_idx"}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        # repr of a Python float round-trips exactly; keeps traces bit-identical.
        return repr(float(v))
    return str(v)


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_trace(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            row = {}
            for k, v in raw.items():
                if k in _NUMERIC:
                    row[k] = None if v == "" else (int(v) if k in _INT else float(v))
                else:
                    row[k] = v
            out.append(row)
    return out


def summarize(rows, qos_target_ms: float) -> dict:
    """QoS and BE metrics over the regular-operation phase of a trace.

    Calibration and initial-sampling rows are excluded: the metrics describe
    steady operation, not the startup protocol every method is allowed.
    """
    regular = [r for r in rows if _get(r, "phase") == "regular"]
    if not regular:
        raise InputDomainError("trace contains no regular-phase rows")
    meas = [(_get(r, "t_s"), _get(r, "p99_meas_ms")) for r in regular
            if _get(r, "p99_meas_ms") is not None]
    be = np.array([_get(r, "be_instr_per_s") for r in regular], dtype=float)
    out = {
        "regular_start_s": _get(regular[0], "t_s"),
        "regular_end_s": _get(regular[-1], "t_s"),
        "n_regular_rows": len(regular),
        "n_measurements": len(meas),
        "mean_be_instr_per_s": float(np.mean(be)),
    }
    if meas:
        t = np.array([m[0] for m in meas])
        p = np.array([m[1] for m in meas])
        series = QosSeries(t_s=t, p99_ms=p, qos_target_ms=qos_target_ms)
        out.update(
            weighted_qos_violation_pct=weighted_qos_violation(series),
            qos_guarantee_pct=qos_guarantee(series),
            qos_tardiness=qos_tardiness(series),
            violation_severity_ms_s=violation_severity(series, float(t[0]) - 1e-9, float(t[-1])),
        )
    return out


def _get(row, key):
    if isinstance(row, dict):
        return row[key]
    return row[TRACE_COLUMNS.index(key)]


@dataclass(frozen=True)
class RunArtifacts:
    out_dir: str
    trace_path: str
    summary_path: str
    summary: dict


def run_experiment(cfg: ExperimentConfig, out_dir) -> RunArtifacts:
    """Execute one run and write trace.csv + summary.json under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    env = build_env(cfg)
    t0 = time.monotonic()
    fallback = False
    if cfg.method == "rapid":
        result = run_control_loop(env, cfg.loop, cfg.duration_s, cfg.seed)
        rows, fallback = result.rows, result.predictor_fallback
    elif cfg.method == "rl":
        result = measurement_rl_loop(env, cfg.duration_s, cfg.seed)
        rows = result.rows
    else:
        rows = run_pid_loop(env, cfg.duration_s).rows
    wall = time.monotonic() - t0

    trace_path = os.path.join(out_dir, "trace.csv")
    write_trace(rows, trace_path)
    summary = {
        "profile": cfg.profile,
        "method": cfg.method,
        "seed": cfg.seed,
        "demand_kind": cfg.demand_kind,
        "duration_s": cfg.duration_s,
        "qos_target_ms": env.hp.qos_target_ms,
        "predictor_fallback": fallback,
        "wall_clock_s": wall,
        **summarize(rows, env.hp.qos_target_ms),
        "config": {
            "demand_overrides": dict(cfg.demand_overrides),
            "loop": asdict(cfg.loop),
        },
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return RunArtifacts(str(out_dir), trace_path, summary_path, summary)


# -- oracle -----------------------------------------------------------------

ORACLE_SETTLE_S = 12.0


def oracle_static(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Noise-free brute force over all 36 static allocations.

    Each action runs on a fresh noiseless environment: settle, then evaluate
    one full demand cycle. Feasible means no true-p99 interval above target.
    The best action maximizes mean BE throughput among feasible ones
    (ties break toward more BE bandwidth, then higher BE frequency).
    """
    env0 = build_env(cfg, noise=False)
    cycle_s = env0.trace.be_cycle_s
    if cfg.demand_kind != "static":
        cycle_s = _lcm(env0.trace.period_s, env0.trace.be_cycle_s)
    table = []
    for action in all_actions():
        env = build_env(cfg, noise=False)
        env.step(action, ORACLE_SETTLE_S)
        worst = 0.0
        be_sum = 0.0
        n = int(round(cycle_s / env.meas_interval_s))
        for _ in range(n):
            _, out = env.step(action, env.meas_interval_s)
            worst = max(worst, out.hp_qos_ratio_true)
            be_sum += out.be_instr_per_s
        table.append(
            {
                "mbw_idx": action.mbw_idx,
                "cf_idx": action.cf_idx,
                "worst_qos_ratio": worst,
                "feasible": worst <= 1.0,
                "mean_be_instr_per_s": be_sum / n,
            }
        )
    feasible = [e for e in table if e["feasible"]]
    if not feasible:
        raise InfeasibleScenarioError(
            f"no static allocation meets QoS for profile {cfg.profile!r}"
        )
    best = max(feasible, key=lambda e: (e["mean_be_instr_per_s"], e["mbw_idx"], -e["cf_idx"]))
    result = {
        "profile": cfg.profile,
        "demand_kind": cfg.demand_kind,
        "eval_cycle_s": cycle_s,
        "n_feasible": len(feasible),
        "best": dict(best),
        "actions": table,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "oracle.json"), "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
            f.write("\n")
    return result


def _lcm(a: float, b: float) -> float:
    x = a
    for _ in range(10_000):
        if abs(x / b - round(x / b)) < 1e-9:
            return x
        x += a
    return a * b


# -- derived analyses -------------------------------------------------------

def stability_time(rows, qos_target_ms: float, ceiling_be: float,
                   window_s: float = 60.0, qos_max_pct: float = 0.1,
                   be_frac: float = 0.9):
    """Seconds from regular-phase start until a trailing window is stable.

    Stable: trailing weighted QoS violation <= qos_max_pct percent and
    trailing mean BE throughput >= be_frac * ceiling_be. Returns None when
    the trace never stabilizes.
    """
    regular = [r for r in rows if _get(r, "phase") == "regular"]
    if not regular:
        return None
    start = _get(regular[0], "t_s")
    for r in regular:
        t = _get(r, "t_s")
        if t - start < window_s:
            continue
        win = [x for x in regular if t - window_s < _get(x, "t_s") <= t]
        meas = [(_get(x, "t_s"), _get(x, "p99_meas_ms")) for x in win
                if _get(x, "p99_meas_ms") is not None]
        if not meas:
            continue
        series = QosSeries(
            t_s=np.array([m[0] for m in meas]),
            p99_ms=np.array([m[1] for m in meas]),
            qos_target_ms=qos_target_ms,
        )
        be = np.mean([_get(x, "be_instr_per_s") for x in win])
        if weighted_qos_violation(series) <= qos_max_pct and be >= be_frac * ceiling_be:
            return float(t - start)
    return None


def bias_correction_benefit(cfg: ExperimentConfig, bias_mult: float = 1.3,
                            duration_s: float = 120.0, alpha: float = 0.8) -> dict:
    """MAE of a multiplicatively biased predictor, with and without correction.

    Simulates the scenario under a rotating set of safe allocations, forms a
    synthetic prediction bias_mult * true p99 at every control step, and runs
    the percentile correction against the rolling measurement buffer.
    """
    env = build_env(cfg)
    # Rotate across allocations with distinct latency levels so the rolling
    # percentile buffers see real spread, as they would under a live policy.
    actions = [AllocationAction(m, c) for m, c in ((0, 2), (5, 0))]
    buffers = RollingBuffers()
    dt = 0.2
    hold_steps = 12  # 2.4 s per allocation
    err_raw, err_cor = [], []
    n_steps = int(round(duration_s / dt))
    for i in range(n_steps):
        action = actions[(i // hold_steps) % len(actions)]
        _, out = env.step(action, dt)
        t = (i + 1) * dt
        true_ms = out.p99_true_ms
        pred_ms = bias_mult * true_ms
        if out.p99_meas_ms is not None:
            buffers.add_measurement(t, out.p99_meas_ms)
        buffers.add_prediction(t, pred_ms)
        corrected = correct_bias(pred_ms, buffers, alpha)
        err_raw.append(abs(pred_ms - true_ms))
        err_cor.append(abs(corrected - true_ms))
    mae_raw = float(np.mean(err_raw))
    mae_cor = float(np.mean(err_cor))
    return {
        "mae_biased_ms": mae_raw,
        "mae_corrected_ms": mae_cor,
        "reduction_pct": 100.0 * (1.0 - mae_cor / mae_raw),
    }


# -- cross-run comparison ---------------------------------------------------

def find_summaries(paths) -> list[dict]:
    """Load summary.json from each path; directories are scanned recursively."""
    out = []
    for p in paths:
        if os.path.isfile(p):
            with open(p) as f:
                out.append(json.load(f))
            continue
        for root, _, files in os.walk(p):
            if "summary.json" in files:
                with open(os.path.join(root, "summary.json")) as f:
                    out.append(json.load(f))
    return out


def compare(summaries: list[dict], out_dir=None, baseline_method: str = "rl"):
    """Per-scenario medians across seeds, BE normalized to a baseline method.

    Returns (rows, text table); optionally writes comparison.csv and
    comparison.txt under out_dir.
    """
    if not summaries:
        raise InputDomainError("no summaries to compare")
    groups: dict = {}
    for s in summaries:
        key = (s["profile"], s["demand_kind"], s["method"])
        groups.setdefault(key, []).append(s)
    scenarios = sorted({(p, d) for p, d, _ in groups})
    rows = []
    for profile, demand in scenarios:
        base_key = (profile, demand, baseline_method)
        base_be = None
        if base_key in groups:
            base_be = float(np.median([s["mean_be_instr_per_s"] for s in groups[base_key]]))
        for method in sorted(m for p, d, m in groups if (p, d) == (profile, demand)):
            runs = groups[(profile, demand, method)]
            med_qos = float(np.median([s.get("weighted_qos_violation_pct", np.nan)
                                       for s in runs]))
            med_be = float(np.median([s["mean_be_instr_per_s"] for s in runs]))
            rows.append(
                {
                    "profile": profile,
                    "demand_kind": demand,
                    "method": method,
                    "n_runs": len(runs),
                    "median_weighted_qos_violation_pct": med_qos,
                    "median_mean_be_instr_per_s": med_be,
                    "be_vs_baseline": None if base_be is None else med_be / base_be,
                }
            )
    header = ("profile", "demand", "method", "runs", "qos_viol_%", "be_instr/s", "be_vs_" + baseline_method)
    lines = []
    cells = [header]
    for r in rows:
        cells.append(
            (
                r["profile"], r["demand_kind"], r["method"], str(r["n_runs"]),
                f"{r['median_weighted_qos_violation_pct']:.4f}",
                f"{r['median_mean_be_instr_per_s']:.4g}",
                "-" if r["be_vs_baseline"] is None else f"{r['be_vs_baseline']:.3f}",
            )
        )
    widths = [max(len(str(row[i])) for row in cells) for i in range(len(header))]
    for row in cells:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip())
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        with open(os.path.join(out_dir, "comparison.txt"), "w") as f:
            f.write(text)
    return rows, text
