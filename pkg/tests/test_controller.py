"""Controller tests: state assembly, reward, safety-clipped exploration, the
branching dueling network, TD targets, and training cadence."""

import numpy as np
import pytest

from refimpl import ref_td_target

from coschedlab.controller import (
    AgentConfig,
    BdqAgent,
    BdqNet,
    GUIDED_SAMPLING_PLAN,
    ReplayBuffer,
    Transition,
    build_state,
    exploration_probs,
    explore,
    reward,
    td_targets,
)
from coschedlab.errors import InputDomainError
from coschedlab.features import FeatureVector
from coschedlab.simenv import AllocationAction


def features(vals=None, lam=0.5):
    if vals is None:
        vals = 0.1 * np.arange(9)
    return FeatureVector(hp_features=np.asarray(vals, dtype=float), lambda_be=lam)


# -- state -------------------------------------------------------------------

def test_build_state_layout_and_golden():
    s = build_state(features(), 1.0)
    expect = np.append(0.1 * np.arange(9), [0.5, np.log(2.0)])
    assert s.shape == (11,)
    assert np.allclose(s, expect, atol=1e-12)


def test_build_state_ratio_clip():
    s0 = build_state(features(), 0.0)
    assert s0[-1] == 0.0
    assert build_state(features(), 10.0)[-1] == build_state(features(), 4.0)[-1]
    with pytest.raises(InputDomainError):
        build_state(features(), -0.1)


# -- reward ------------------------------------------------------------------

def test_reward_worked_values():
    # Deep slack with the most BE-generous allocation: full positive reward.
    assert abs(reward(0.4, AllocationAction(5, 0)) - 1.0) < 1e-9
    # At the boundary with the least generous allocation: slack penalty only.
    assert abs(reward(1.0, AllocationAction(0, 5)) - (-0.5)) < 1e-9
    # Violations are clipped at -2.5.
    assert reward(3.0, AllocationAction(2, 2)) == -2.5
    assert abs(reward(1.2, AllocationAction(2, 2)) - (-1.2)) < 1e-9


def test_reward_bounds_over_grid():
    for ratio in np.linspace(0.0, 6.0, 61):
        for m in range(6):
            for c in range(6):
                r = reward(float(ratio), AllocationAction(m, c))
                assert -2.5 <= r <= 1.0


def test_reward_continuous_at_slack_kink():
    a = AllocationAction(3, 3)
    eps = 1e-9
    assert abs(reward(0.5 - eps, a) - reward(0.5 + eps, a)) < 1e-6


def test_reward_boundary_is_not_violation():
    a = AllocationAction(5, 0)
    assert reward(1.0, a) > 0.0  # positive term minus 0.5 slack
    assert reward(1.0 + 1e-12, a) < 0.0


# -- exploration -------------------------------------------------------------

def test_exploration_worked_distribution():
    p = exploration_probs(2, 0.3)
    assert np.allclose(p, [0.075, 0.075, 0.7, 0.15, 0.0, 0.0], atol=1e-12)
    assert abs(p.sum() - 1.0) < 1e-12


def test_exploration_all_mass_folds_on_single_point_grid():
    p = exploration_probs(0, 0.4, top=0)
    assert np.allclose(p, [1.0])


def test_exploration_distribution_properties():
    for n in range(6):
        for eps in (0.0, 0.1, 0.5, 0.99):
            p = exploration_probs(n, eps)
            assert np.all(p >= 0.0)
            assert abs(p.sum() - 1.0) < 1e-12
            support = np.nonzero(p)[0]
            assert support.min() >= 0 and support.max() <= min(n + 1, 5)


def test_exploration_empirical_frequencies():
    rng = np.random.default_rng(17)
    counts = np.zeros(6)
    n_draws = 100_000
    for _ in range(n_draws):
        counts[explore(3, 0.2, False, rng)] += 1
    exact = exploration_probs(3, 0.2)
    assert np.max(np.abs(counts / n_draws - exact)) < 0.01


def test_exploration_risk_reversed_branch():
    # For the reversed branch, +1 in risk space means one step down in raw
    # index space (toward lower BE frequency restriction on the HP side).
    rng = np.random.default_rng(23)
    seen = {explore(5, 0.3, True, rng) for _ in range(500)}
    assert seen == {4, 5}  # greedy raw 5 is risk 0: only offset +1 possible
    assert explore(2, 0.0, True, rng) == 2  # eps 0 is greedy


def test_exploration_validates_inputs():
    with pytest.raises(InputDomainError):
        exploration_probs(2, 1.0)
    with pytest.raises(InputDomainError):
        exploration_probs(7, 0.1)


# -- BDQ network -------------------------------------------------------------

def test_q_zero_parameters():
    net = BdqNet(rng=np.random.default_rng(0))
    for p in net.params:
        p[...] = 0.0
    q, _ = net.q_values(np.zeros(11))
    assert q.shape == (2, 6)
    assert np.all(q == 0.0)


def test_dueling_mean_subtraction_identity():
    rng = np.random.default_rng(1)
    net = BdqNet(rng=rng)
    state = rng.normal(size=11)
    q0, _ = net.q_values(state)
    net.adv[0].params[1][...] += 7.5  # constant shift on one branch's outputs
    q1, _ = net.q_values(state)
    assert np.allclose(q0, q1, atol=1e-12)


def test_q_matches_value_plus_centered_advantage():
    rng = np.random.default_rng(2)
    net = BdqNet(rng=rng)
    state = rng.normal(size=11)
    q, _ = net.q_values(state)
    h, _ = net.trunk.forward(state)
    v, _ = net.value.forward(h)
    for d in range(2):
        a, _ = net.adv[d].forward(h)
        assert np.allclose(q[d], v[0] + a - a.mean(), atol=1e-12)


def test_bdq_backward_matches_finite_differences():
    # Seed chosen so every trunk pre-activation is well away from the ReLU
    # kink, where central differences stop being a valid oracle.
    rng = np.random.default_rng(4)
    net = BdqNet(hidden=4, dropout=0.0, rng=rng)
    states = rng.normal(size=(3, 11))
    q, caches = net.q_values(states)
    grad_q = rng.normal(size=q.shape)

    def loss_of(vec):
        i = 0
        for p in net.params:
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size
        qq, _ = net.q_values(states)
        return float(np.sum(qq * grad_q))

    vec0 = np.concatenate([p.ravel() for p in net.params])
    grads = net.backward(caches, grad_q)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = np.zeros_like(vec0)
    h = 1e-6
    for i in range(vec0.size):
        vp, vm = vec0.copy(), vec0.copy()
        vp[i] += h
        vm[i] -= h
        numeric[i] = (loss_of(vp) - loss_of(vm)) / (2.0 * h)
    loss_of(vec0)  # restore
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    assert np.max(np.abs(analytic - numeric) / denom) <= 1e-4


# -- replay ------------------------------------------------------------------

def make_transition(rng, reward_val=0.0, terminal=False):
    return Transition(rng.normal(size=11), AllocationAction(int(rng.integers(6)),
                      int(rng.integers(6))), reward_val, rng.normal(size=11), terminal)


def test_replay_ring_and_without_replacement():
    rng = np.random.default_rng(4)
    buf = ReplayBuffer(capacity=100)
    for _ in range(150):
        buf.add(make_transition(rng))
    assert len(buf) == 100
    batch = buf.sample(64, rng)
    assert len({id(tr) for tr in batch}) == 64  # no repeats within a batch


# -- TD targets --------------------------------------------------------------

def constant_value_net(v):
    net = BdqNet(rng=np.random.default_rng(0))
    for p in net.params:
        p[...] = 0.0
    net.value.params[1][...] = v
    return net


def test_td_terminal_equals_reward():
    rng = np.random.default_rng(5)
    online, target = BdqNet(rng=rng), BdqNet(rng=rng)
    batch = [make_transition(rng, reward_val=0.7, terminal=True)]
    y = td_targets(batch, online, target)
    assert abs(y[0] - 0.7) < 1e-12


def test_td_hand_built_constant_nets():
    online = constant_value_net(1.5)  # argmax lands anywhere; Q constant
    target = constant_value_net(-2.0)
    rng = np.random.default_rng(6)
    batch = [make_transition(rng, reward_val=0.25)]
    y = td_targets(batch, online, target, discount=0.8)
    assert abs(y[0] - (0.25 + 0.8 * (-2.0))) < 1e-9


def test_td_discount_zero():
    rng = np.random.default_rng(7)
    net = BdqNet(rng=rng)
    batch = [make_transition(rng, reward_val=0.0) for _ in range(5)]
    y = td_targets(batch, net, net, discount=0.0)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_td_against_independent_reference():
    rng = np.random.default_rng(8)
    for _ in range(10):
        online = BdqNet(hidden=3, rng=rng)
        target = BdqNet(hidden=3, rng=rng)
        batch = [make_transition(rng, reward_val=float(rng.normal()),
                                 terminal=bool(rng.random() < 0.2))
                 for _ in range(20)]
        y = td_targets(batch, online, target, discount=0.8)
        for i, tr in enumerate(batch):
            assert abs(y[i] - ref_td_target(tr, online, target, 0.8)) < 1e-9


# -- agent training cadence --------------------------------------------------

def filled_agent(seed=0):
    agent = BdqAgent(AgentConfig(), seed)
    rng = np.random.default_rng(100)
    for _ in range(80):
        agent.observe(make_transition(rng, reward_val=float(rng.normal())))
    return agent


def test_no_training_before_start_step():
    agent = filled_agent()
    before = agent.online.param_vector()
    for _ in range(24):
        agent.train_step()
    assert np.array_equal(agent.online.param_vector(), before)
    agent.train_step()  # step 25: first gradient step
    assert not np.array_equal(agent.online.param_vector(), before)


def test_target_sync_cadence():
    agent = filled_agent()
    for step in range(1, 81):
        agent.train_step()
        online = agent.online.param_vector()
        target = agent.target.param_vector()
        if step in (40, 80):
            assert np.array_equal(online, target)
        elif step in (41, 79):
            assert not np.array_equal(online, target)


def test_training_deterministic_per_seed():
    a, b = filled_agent(seed=3), filled_agent(seed=3)
    for _ in range(30):
        a.train_step()
        b.train_step()
    assert np.array_equal(a.online.param_vector(), b.online.param_vector())
    state = np.zeros(11)
    assert a.act(state) == b.act(state)


def test_greedy_action_deterministic_with_eps_zero():
    agent = BdqAgent(AgentConfig(epsilon=0.0), 1)
    state = np.random.default_rng(9).normal(size=11)
    actions = {agent.act(state) for _ in range(10)}
    assert len(actions) == 1
    assert actions.pop() == agent.greedy_action(state)


def test_guided_plan_covers_extremes():
    plan = set(GUIDED_SAMPLING_PLAN)
    assert len(GUIDED_SAMPLING_PLAN) == 20
    assert {(0, 5), (5, 0), (0, 0), (5, 5)} <= plan
    mbws = {m for m, _ in plan}
    cfs = {c for _, c in plan}
    assert mbws == set(range(6)) and cfs == set(range(6))
