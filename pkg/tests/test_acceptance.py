"""Acceptance gate: the ten criteria the laboratory must meet, each reported
as one pass/fail line. Tolerances are stated inline; the heavier criteria run
multi-seed simulation sweeps and take a few minutes."""

import statistics
import tempfile
import time

import numpy as np
import pytest

from refimpl import ref_td_target
from test_neural import finite_diff_check, random_net_and_input
from test_predictor import fv as predictor_fv

from coschedlab.config import ExperimentConfig, build_env
from coschedlab.controller import (
    BdqNet,
    GUIDED_SAMPLING_PLAN,
    Transition,
    build_state,
    exploration_probs,
    reward,
    td_targets,
)
from coschedlab.controller import BdqAgent, AgentConfig
from coschedlab.features import featurize, fit_norm_stats
from coschedlab.harness import (
    bias_correction_benefit,
    oracle_static,
    read_trace,
    run_experiment,
    stability_time,
)
from coschedlab.metrics import QosSeries, violation_severity, weighted_qos_violation
from coschedlab.predictor import (
    PredictorStore,
    RollingBuffers,
    TrainSample,
    correct_bias,
    corrected_p99,
    fit,
    predict,
)
from coschedlab.simenv import AllocationAction

SEEDS = (1, 2, 3, 4, 5)
PROFILES = ("redis", "nginx", "ic", "rec")


def run_summary(profile, method, seed, duration_s, demand_kind="static"):
    cfg = ExperimentConfig(profile=profile, method=method, seed=seed,
                           duration_s=duration_s, demand_kind=demand_kind)
    with tempfile.TemporaryDirectory() as d:
        art = run_experiment(cfg, d)
        rows = read_trace(art.trace_path)
    return art.summary, rows


def test_criterion_1_formula_suite(acceptance_report):
    tol = 1e-9
    # Exploration distribution over the (n, epsilon) grid.
    for n in range(6):
        for eps in np.linspace(0.0, 0.95, 20):
            p = exploration_probs(n, float(eps))
            assert np.all(p >= -tol)
            assert abs(p.sum() - 1.0) < tol
            assert np.all(p[min(n + 1, 5) + 1:] == 0.0)  # clipped at +1
    assert np.allclose(exploration_probs(2, 0.3),
                       [0.075, 0.075, 0.7, 0.15, 0.0, 0.0], atol=tol)
    # Reward clip and bounds.
    assert reward(3.0, AllocationAction(2, 2)) == -2.5
    for ratio in np.linspace(0.0, 5.0, 51):
        for m in range(6):
            for c in range(6):
                assert -2.5 - tol <= reward(float(ratio), AllocationAction(m, c)) <= 1.0 + tol
    # Bias-correction identities and the worked value.
    assert abs(corrected_p99(30.0, 10.0, 20.0, 20.0, 0.8) - 30.0) < tol
    assert abs(corrected_p99(30.0, 10.0, 20.0, 40.0, 0.0) - 30.0) < tol
    assert abs(corrected_p99(10.0, 10.0, 20.0, 40.0, 0.8) - 10.0) < tol
    assert abs(corrected_p99(30.0, 10.0, 20.0, 40.0, 0.8) - (10.0 + 20.0 / 1.8)) < tol
    # Weighted-QoS worked value.
    series = QosSeries(t_s=np.arange(1.0, 11.0),
                       p99_ms=np.array([10.0] * 9 + [15.0]), qos_target_ms=10.0)
    assert abs(weighted_qos_violation(series) - 5.0) < tol
    # Severity sign and additivity.
    rect = QosSeries(t_s=np.array([1.0, 2.0]), p99_ms=np.array([20.0, 20.0]),
                     qos_target_ms=10.0)
    assert abs(violation_severity(rect, 0.0, 2.0) - 20.0) < tol
    below = QosSeries(t_s=np.array([1.0]), p99_ms=np.array([10.0]), qos_target_ms=20.0)
    assert abs(violation_severity(below, 0.0, 1.0) + 10.0) < tol
    rng = np.random.default_rng(1)
    s = QosSeries(t_s=np.arange(1.0, 13.0), p99_ms=rng.uniform(5.0, 15.0, 12),
                  qos_target_ms=10.0)
    assert abs(violation_severity(s, 0.5, 12.0)
               - violation_severity(s, 0.5, 7.0) - violation_severity(s, 7.0, 12.0)) < tol
    acceptance_report("criterion 1 (formula suite, 1e-9): PASS")


def test_criterion_2_gradient_check(acceptance_report):
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        net, x = random_net_and_input(rng)
        worst = max(worst, finite_diff_check(net, x))
    elapsed = time.monotonic() - t0
    assert worst <= 1e-4
    assert elapsed < 30.0
    acceptance_report(
        f"criterion 2 (gradient check, 100 nets): PASS "
        f"(max rel err {worst:.2e}, {elapsed:.1f}s)")


def test_criterion_3_td_target_oracle(acceptance_report):
    rng = np.random.default_rng(33)
    n_cases = 0
    worst = 0.0
    while n_cases < 1000:
        online = BdqNet(hidden=3, rng=rng)
        target = BdqNet(hidden=3, rng=rng)
        batch = [
            Transition(rng.normal(size=11),
                       AllocationAction(int(rng.integers(6)), int(rng.integers(6))),
                       float(rng.normal()), rng.normal(size=11),
                       bool(rng.random() < 0.2))
            for _ in range(25)
        ]
        y = td_targets(batch, online, target, discount=0.8)
        for i, tr in enumerate(batch):
            worst = max(worst, abs(y[i] - ref_td_target(tr, online, target, 0.8)))
        n_cases += len(batch)
    assert worst < 1e-9
    acceptance_report(
        f"criterion 3 (TD-target oracle, {n_cases} cases): PASS (max dev {worst:.2e})")


def test_criterion_4_svr_vs_ols(acceptance_report):
    rng = np.random.default_rng(21)
    x = rng.uniform(-1.0, 1.0, size=(20, 2))

    def f(a):
        return np.sin(1.5 * a[:, 0]) + 0.5 * a[:, 1] ** 2 + 0.2 * a[:, 0] * a[:, 1]

    samples = [TrainSample(predictor_fv(p, q), float(v)) for (p, q), v in zip(x, f(x))]
    t0 = time.monotonic()
    model = fit(samples)
    fit_s = time.monotonic() - t0
    x_test = rng.uniform(-1.0, 1.0, size=(300, 2))
    y_test = f(x_test)
    pred = np.array([model.predict_log(predictor_fv(a, b).as_array())
                     for a, b in x_test])
    a_mat = np.column_stack([x, np.ones(20)])
    coef, *_ = np.linalg.lstsq(a_mat, f(x), rcond=None)
    pred_ols = np.column_stack([x_test, np.ones(300)]) @ coef
    mae_svr = float(np.mean(np.abs(pred - y_test)))
    mae_ols = float(np.mean(np.abs(pred_ols - y_test)))
    assert mae_svr <= mae_ols
    assert fit_s < 1.0
    acceptance_report(
        f"criterion 4 (SVR vs OLS at 20 samples): PASS "
        f"(MAE {mae_svr:.4f} vs {mae_ols:.4f}, fit {fit_s * 1e3:.0f}ms)")


def test_criterion_5_bias_correction_benefit(acceptance_report):
    reductions = []
    for seed in SEEDS:
        cfg = ExperimentConfig(profile="redis", method="rapid", seed=seed,
                               duration_s=600.0)
        reductions.append(bias_correction_benefit(cfg)["reduction_pct"])
    med = statistics.median(reductions)
    assert med >= 20.0
    acceptance_report(
        f"criterion 5 (bias correction, +30% bias): PASS "
        f"(median MAE reduction {med:.1f}% >= 20%)")


def test_criterion_6_convergence_speed(acceptance_report):
    oracle = oracle_static(
        ExperimentConfig(profile="redis", method="rapid", seed=1, duration_s=600.0))
    ceiling = oracle["best"]["mean_be_instr_per_s"]
    target_ms = 1.2

    def stability(method, duration_s):
        out = []
        for seed in SEEDS:
            cfg = ExperimentConfig(profile="redis", method=method, seed=seed,
                                   duration_s=duration_s)
            with tempfile.TemporaryDirectory() as d:
                t0 = time.monotonic()
                art = run_experiment(cfg, d)
                wall = time.monotonic() - t0
                assert wall <= 120.0  # each run within 2 minutes wall clock
                st = stability_time(read_trace(art.trace_path), target_ms, ceiling)
            out.append(np.inf if st is None else st)
        return out

    rapid = stability("rapid", 600.0)
    rapid_med = statistics.median(rapid)
    assert rapid_med <= 180.0
    rl = stability("rl", 3600.0)
    rl_med = statistics.median(rl)
    assert rl_med >= 5.0 * rapid_med
    acceptance_report(
        f"criterion 6 (convergence speed): PASS "
        f"(rapid median {rapid_med:.0f}s <= 180s; rl median {rl_med:.0f}s "
        f"= {rl_med / rapid_med:.1f}x)")


def test_criterion_7_dynamic_orderings(acceptance_report):
    # The ordering target is one aggregate number per method over the whole
    # dynamic bundle (4 profiles x 5 seeds pooled), mirroring how the
    # comparison table reports each method.
    t0 = time.monotonic()
    med = {}
    for method in ("rapid", "pid", "rl"):
        qos, be = [], []
        for profile in PROFILES:
            for seed in SEEDS:
                s, _ = run_summary(profile, method, seed, 1200.0, "dynamic-cycle")
                qos.append(s["weighted_qos_violation_pct"])
                be.append(s["mean_be_instr_per_s"])
        med[method] = (statistics.median(qos), statistics.median(be))
    (q_rapid, be_rapid), (q_pid, be_pid), (q_rl, be_rl) = (
        med["rapid"], med["pid"], med["rl"])
    assert be_rapid > be_pid > be_rl, f"BE ordering broken: {med}"
    assert q_rapid < q_pid < q_rl, f"QoS ordering broken: {med}"
    elapsed = time.monotonic() - t0
    assert elapsed <= 3600.0
    acceptance_report(
        f"criterion 7 (dynamic orderings, 4 profiles x 5 seeds pooled): PASS "
        f"(qos {q_rapid:.3f} < {q_pid:.3f} < {q_rl:.3f}; "
        f"be {be_rapid:.3e} > {be_pid:.3e} > {be_rl:.3e}; {elapsed:.0f}s)")


def test_criterion_8_static_qos(acceptance_report):
    worst = 0.0
    for profile in PROFILES:
        for method in ("rapid", "pid"):
            vals = [run_summary(profile, method, seed, 600.0)[0]
                    ["weighted_qos_violation_pct"] for seed in SEEDS]
            worst = max(worst, statistics.median(vals))
    assert worst <= 0.01
    acceptance_report(
        f"criterion 8 (static QoS, rapid+pid): PASS "
        f"(worst median weighted QoS {worst:.5f}% <= 0.01%)")


def test_criterion_9_determinism(acceptance_report):
    import os

    for method, dur in (("rapid", 200.0), ("pid", 120.0), ("rl", 300.0)):
        cfg = dict(profile="redis", method=method, seed=7, duration_s=dur)
        with tempfile.TemporaryDirectory() as d:
            a = run_experiment(ExperimentConfig(**cfg), os.path.join(d, "a"))
            b = run_experiment(ExperimentConfig(**cfg), os.path.join(d, "b"))
            with open(a.trace_path, "rb") as fa, open(b.trace_path, "rb") as fb:
                assert fa.read() == fb.read(), f"trace differs for {method}"
    acceptance_report("criterion 9 (bit-identical traces per seed): PASS")


def test_criterion_10_decision_overhead(acceptance_report):
    # One regular-operation control step: featurize, predict, bias-correct,
    # act. Set up the controller state exactly as the live loop does.
    cfg = ExperimentConfig(profile="redis", method="rapid", seed=1, duration_s=600.0)
    env = build_env(cfg)
    snaps, meas = [], []
    for m, c in GUIDED_SAMPLING_PLAN:
        _, out = env.step(AllocationAction(m, c), 5.0)
        snaps.append(out.counters)
        meas.append(out.p99_meas_ms)
    stats = fit_norm_stats(snaps)
    store = PredictorStore(
        [TrainSample(featurize(s, stats), float(np.log(v)))
         for s, v in zip(snaps, meas)])
    agent = BdqAgent(AgentConfig(), seed=1)
    buffers = RollingBuffers()
    t = 100.0
    durations = []
    for _ in range(300):
        _, out = env.step(AllocationAction(5, 0), 0.2)
        t += 0.2
        t0 = time.perf_counter()
        fvec = featurize(out.counters, stats)
        pred_ms = predict(store.model, fvec)
        buffers.add_prediction(t, pred_ms)
        if out.p99_meas_ms is not None:
            buffers.add_measurement(t, out.p99_meas_ms)
        corrected = correct_bias(pred_ms, buffers)
        state = build_state(fvec, min(corrected / 1.2, 4.0))
        agent.act(state)
        durations.append(time.perf_counter() - t0)
    med_ms = 1e3 * statistics.median(durations)
    assert med_ms <= 5.0
    acceptance_report(
        f"criterion 10 (decision overhead): PASS (median {med_ms:.3f}ms <= 5ms)")
