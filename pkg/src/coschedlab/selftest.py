"""Fast internal consistency checks runnable from the command line."""

from __future__ import annotations

import numpy as np

from . import predictor
from .config import ExperimentConfig, build_env, load_profiles
from .controller import BdqNet, exploration_probs, reward
from .features import FeatureVector
from .metrics import QosSeries, qos_guarantee, weighted_qos_violation
from .neural import AdaBelief, DenseNet
from .simenv import AllocationAction


def _check_exploration():
    for eps in (0.0, 0.2, 0.5):
        for n in range(6):
            p = exploration_probs(n, eps)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= 0)
    p = exploration_probs(2, 0.2)
    assert abs(p[3] - 0.1) < 1e-12 and abs(p[2] - 0.8) < 1e-12


def _check_reward_bounds():
    actions = [AllocationAction(m, c) for m in range(6) for c in range(6)]
    for ratio in np.linspace(0.0, 6.0, 25):
        for a in actions:
            r = reward(float(ratio), a)
            assert -2.5 <= r <= 1.0


def _check_dueling_identity():
    rng = np.random.default_rng(3)
    net = BdqNet(rng=rng)
    x = rng.standard_normal((4, 11))
    q, _ = net.q_values(x)
    v, _ = net.value.forward(net.trunk.forward(x)[0])
    # Mean over a branch's actions equals V: advantages are mean-centered.
    assert np.allclose(q.mean(axis=2), np.repeat(v, 2, axis=1), atol=1e-10)


def _check_gradients():
    rng = np.random.default_rng(5)
    net = DenseNet([3, 4, 2], dropout=0.0, rng=rng)
    x = rng.standard_normal((5, 3))
    out, cache = net.forward(x)
    g = rng.standard_normal(out.shape)
    grads, _ = net.backward(cache, g)
    for p, gp in zip(net.params, grads):
        idx = tuple(rng.integers(s) for s in p.shape) if p.ndim else ()
        eps = 1e-6
        p[idx] += eps
        up = float(np.sum(net.forward(x)[0] * g))
        p[idx] -= 2 * eps
        dn = float(np.sum(net.forward(x)[0] * g))
        p[idx] += eps
        assert abs((up - dn) / (2 * eps) - gp[idx]) < 1e-5


def _check_adabelief_finite():
    net = DenseNet([2, 2], rng=np.random.default_rng(0))
    opt = AdaBelief(lr=1e-2)
    for _ in range(5):
        grads = [np.ones_like(p) for p in net.params]
        opt.step(net.params, grads)
    assert all(np.all(np.isfinite(p)) for p in net.params)


def _check_sim_determinism():
    cfg = ExperimentConfig(profile="redis", method="rapid", seed=7, duration_s=10)
    outs = []
    for _ in range(2):
        env = build_env(cfg)
        vals = []
        for _ in range(10):
            _, out = env.step(AllocationAction(2, 2), 0.5)
            vals.append((out.p99_meas_ms, out.counters.hp.tolist()))
        outs.append(vals)
    assert outs[0] == outs[1]


def _check_metrics():
    s = QosSeries(t_s=np.arange(1.0, 6.0), p99_ms=np.full(5, 0.5), qos_target_ms=1.0)
    assert weighted_qos_violation(s) == 0.0
    assert qos_guarantee(s) == 100.0


def _check_predictor_roundtrip(tmpdir=None):
    rng = np.random.default_rng(11)
    samples = []
    for _ in range(30):
        x = rng.standard_normal(9)
        lam = float(rng.random())
        fv = FeatureVector(hp_features=x, lambda_be=lam)
        samples.append(predictor.TrainSample(fv, float(x[0] + 0.5 * lam)))
    model = predictor.fit(samples)
    got = [predictor.predict(model, s.features) for s in samples[:5]]
    assert all(np.isfinite(got))


def _check_profiles_load():
    profiles = load_profiles()
    assert set(profiles.hp) >= {"redis", "nginx", "ic", "rec"}


CHECKS = (
    ("exploration-distribution", _check_exploration),
    ("reward-bounds", _check_reward_bounds),
    ("dueling-identity", _check_dueling_identity),
    ("dense-gradients", _check_gradients),
    ("adabelief-finite", _check_adabelief_finite),
    ("sim-determinism", _check_sim_determinism),
    ("metrics-sanity", _check_metrics),
    ("predictor-roundtrip", _check_predictor_roundtrip),
    ("profiles-load", _check_profiles_load),
)


def run_selftest(verbose: bool = True) -> int:
    """Run all checks; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
            status = "ok"
        except Exception as e:  # report and continue
            failures += 1
            status = f"FAIL ({type(e).__name__}: {e})"
        if verbose:
            print(f"selftest {name}: {status}")
    return failures
