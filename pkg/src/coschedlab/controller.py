"""Online resource-allocation controller.

A branching dueling double-Q network with two six-way action branches (memory
bandwidth, core frequency) over a shared trunk, trained from replay with
AdaBelief. Exploration is safety-clipped: in risk order (increasing = fewer HP
resources) the offset above the greedy action is capped at +1, so a single
exploratory step can never jump far past a QoS cliff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import predictor as pred_mod
from .errors import InputDomainError
from .features import CounterSnapshot, FeatureVector, featurize, fit_norm_stats
from .neural import AdaBelief, DenseNet, clip_global_norm
from .predictor import PredictorStore, RollingBuffers, TrainSample, correct_bias
from .simenv import AllocationAction, SimEnv, resolve_allocation

N_BRANCHES = 2
BRANCH_SIZE = 6
STATE_DIM = 11
QOS_RATIO_CLIP = 4.0
REWARD_CLIP = 2.5
REWARD_GAMMA = 0.33  # CF-vs-MBW weighting in the positive reward
SLACK_THRESHOLD = 0.5

# Risk order: increasing risk index means fewer HP resources. For the MBW
# branch the raw index already has this property; the CF branch is reversed.
BRANCH_RISK_REVERSED = (False, True)


def build_state(features: FeatureVector, qos_ratio: float) -> np.ndarray:
    """11-element controller state: 9 HP features, lambda_be, QoS-ratio feature.

    The ratio is clipped to [0, 4] and mapped through ln(1+x), placing it in
    roughly [0, 1.6] alongside the normalized counter features.
    """
    if qos_ratio < 0:
        raise InputDomainError("qos_ratio must be nonnegative")
    ratio_feat = np.log1p(min(qos_ratio, QOS_RATIO_CLIP))
    return np.append(features.as_array(), ratio_feat)


def reward(qos_ratio: float, action: AllocationAction) -> float:
    """Reward in [-2.5, 1.0].

    Violations (ratio > 1) earn -min(ratio, 2.5). Otherwise the reward pays
    for BE-generous allocations minus a slack penalty that kicks in within
    50% of the target.
    """
    if qos_ratio < 0:
        raise InputDomainError("qos_ratio must be nonnegative")
    if qos_ratio > 1.0:
        return -min(qos_ratio, REWARD_CLIP)
    alloc = resolve_allocation(action)
    r_cf = (alloc.be_cf_mhz - 800.0) / 2500.0
    r_mbw = (90.0 - alloc.be_mbw_restrict_pct) / 80.0
    slack = max(qos_ratio - SLACK_THRESHOLD, 0.0)
    return REWARD_GAMMA * r_cf + (1.0 - REWARD_GAMMA) * r_mbw - slack


def exploration_probs(n: int, epsilon: float, top: int = BRANCH_SIZE - 1) -> np.ndarray:
    """Exact offset distribution over risk indices 0..top for greedy index n.

    P(-j) = eps/(2n) for j=1..n, P(0) = 1-eps, P(+1) = eps/2; the mass of
    impossible offsets folds into offset 0. Returned as probabilities over
    the risk-index grid.
    """
    if not (0.0 <= epsilon < 1.0):
        raise InputDomainError("epsilon must be in [0, 1)")
    if not (0 <= n <= top):
        raise InputDomainError("greedy index outside grid")
    p = np.zeros(top + 1)
    p[n] = 1.0 - epsilon
    if n > 0:
        p[:n] = epsilon / (2.0 * n)
    else:
        p[n] += epsilon / 2.0
    if n < top:
        p[n + 1] = epsilon / 2.0
    else:
        p[n] += epsilon / 2.0
    return p


def explore(greedy_idx: int, epsilon: float, risk_reversed: bool, rng) -> int:
    """Draw an action index around the greedy one in risk-ordered space."""
    top = BRANCH_SIZE - 1
    n = top - greedy_idx if risk_reversed else greedy_idx
    probs = exploration_probs(n, epsilon)
    risk_idx = int(rng.choice(top + 1, p=probs))
    return top - risk_idx if risk_reversed else risk_idx


class BdqNet:
    """Shared trunk (two 16-unit hidden layers), one state-value head, and one
    six-way advantage head per action branch."""

    def __init__(self, state_dim=STATE_DIM, hidden=16, dropout=0.1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.trunk = DenseNet([state_dim, hidden, hidden], out_activation="relu",
                              dropout=dropout, rng=rng)
        self.value = DenseNet([hidden, 1], rng=rng)
        self.adv = [DenseNet([hidden, BRANCH_SIZE], rng=rng) for _ in range(N_BRANCHES)]

    @property
    def nets(self):
        return [self.trunk, self.value, *self.adv]

    @property
    def params(self):
        return [p for net in self.nets for p in net.params]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([net.param_vector() for net in self.nets])

    def clone(self) -> "BdqNet":
        other = BdqNet.__new__(BdqNet)
        other.trunk = self.trunk.clone()
        other.value = self.value.clone()
        other.adv = [a.clone() for a in self.adv]
        return other

    def copy_params_from(self, other: "BdqNet") -> None:
        for mine, theirs in zip(self.nets, other.nets):
            mine.copy_params_from(theirs)

    def q_values(self, states, train=False, rng=None):
        """Per-branch Q arrays via the dueling combination
        Q_d = V + A_d - mean(A_d). Returns (q, caches) with q of shape
        (batch, branches, 6) (or (branches, 6) for a single state)."""
        x = np.asarray(states, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        h, trunk_cache = self.trunk.forward(x, train=train, rng=rng)
        v, value_cache = self.value.forward(h)
        adv_out, adv_caches = [], []
        for net in self.adv:
            a, c = net.forward(h)
            adv_out.append(a)
            adv_caches.append(c)
        q = np.stack(
            [v + a - a.mean(axis=1, keepdims=True) for a in adv_out], axis=1
        )
        caches = (trunk_cache, value_cache, adv_caches)
        return (q[0] if squeeze else q), caches

    def backward(self, caches, grad_q):
        """Gradients of a scalar loss given dL/dQ of shape (batch, branches, 6)."""
        trunk_cache, value_cache, adv_caches = caches
        grad_h = 0.0
        grads_adv = []
        for d, net in enumerate(self.adv):
            g = grad_q[:, d, :]
            # Q_d = V + A_d - mean(A_d): route through the mean subtraction.
            ga = g - g.sum(axis=1, keepdims=True) / BRANCH_SIZE
            pg, gh = net.backward(adv_caches[d], ga)
            grads_adv.append(pg)
            grad_h = grad_h + gh
        gv = grad_q.sum(axis=(1, 2))[:, None]
        pg_value, gh = self.value.backward(value_cache, gv)
        grad_h = grad_h + gh
        pg_trunk, _ = self.trunk.backward(trunk_cache, grad_h)
        return pg_trunk + pg_value + [p for pg in grads_adv for p in pg]


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: AllocationAction
    reward: float
    next_state: np.ndarray
    terminal: bool = False


class ReplayBuffer:
    """Ring buffer with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._data: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._data)

    def add(self, tr: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(tr)
        else:
            self._data[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng) -> list[Transition]:
        idx = rng.choice(len(self._data), size=batch_size, replace=False)
        return [self._data[i] for i in idx]


def td_targets(batch: list[Transition], online: BdqNet, target: BdqNet,
               discount: float = 0.8) -> np.ndarray:
    """Double-Q regression targets, one scalar per transition.

    Next actions come from the online net per branch; the bootstrap value is
    the mean over branches of the target net's Q at those actions.
    """
    next_states = np.array([tr.next_state for tr in batch])
    q_online, _ = online.q_values(next_states)
    a_star = np.argmax(q_online, axis=2)  # (batch, branches)
    q_target, _ = target.q_values(next_states)
    boot = np.take_along_axis(q_target, a_star[:, :, None], axis=2)[:, :, 0].mean(axis=1)
    r = np.array([tr.reward for tr in batch])
    nonterminal = np.array([0.0 if tr.terminal else 1.0 for tr in batch])
    return r + discount * nonterminal * boot


@dataclass
class AgentConfig:
    epsilon: float = 0.2
    discount: float = 0.8
    batch_size: int = 64
    replay_capacity: int = 10_000
    train_start_step: int = 25
    target_sync_every: int = 40
    hidden: int = 16
    dropout: float = 0.1
    lr: float = 1e-2
    weight_decay: float = 1e-3
    clip_norm: float = 0.5


class BdqAgent:
    """Q-learning agent: online/target nets, replay, AdaBelief training."""

    def __init__(self, cfg: AgentConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng([seed, 0xA6])
        self.online = BdqNet(hidden=cfg.hidden, dropout=cfg.dropout, rng=self.rng)
        self.target = self.online.clone()
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.opt = AdaBelief(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.step_count = 0
        self.skipped_batches = 0

    def greedy_action(self, state: np.ndarray) -> AllocationAction:
        q, _ = self.online.q_values(state)
        return AllocationAction(int(np.argmax(q[0])), int(np.argmax(q[1])))

    def act(self, state: np.ndarray) -> AllocationAction:
        g = self.greedy_action(state)
        mbw = explore(g.mbw_idx, self.cfg.epsilon, BRANCH_RISK_REVERSED[0], self.rng)
        cf = explore(g.cf_idx, self.cfg.epsilon, BRANCH_RISK_REVERSED[1], self.rng)
        return AllocationAction(mbw, cf)

    def observe(self, tr: Transition) -> None:
        self.replay.add(tr)

    def train_step(self) -> float | None:
        """One gradient step when due; returns the loss or None if skipped.

        Counts decision steps; training begins at step `train_start_step`
        (and once replay holds a full batch). The target net syncs every
        `target_sync_every` steps.
        """
        self.step_count += 1
        loss = None
        cfg = self.cfg
        if self.step_count >= cfg.train_start_step and len(self.replay) >= cfg.batch_size:
            batch = self.replay.sample(cfg.batch_size, self.rng)
            y = td_targets(batch, self.online, self.target, cfg.discount)
            states = np.array([tr.state for tr in batch])
            q, caches = self.online.q_values(states, train=True, rng=self.rng)
            grad_q = np.zeros_like(q)
            err_sum = 0.0
            b = len(batch)
            for i, tr in enumerate(batch):
                for d, a in enumerate((tr.action.mbw_idx, tr.action.cf_idx)):
                    err = q[i, d, a] - y[i]
                    err_sum += err * err
                    grad_q[i, d, a] = 2.0 * err / (N_BRANCHES * b)
            loss = err_sum / (N_BRANCHES * b)
            if np.isfinite(loss):
                grads = self.online.backward(caches, grad_q)
                grads = clip_global_norm(grads, cfg.clip_norm)
                self.opt.step(self.online.params, grads)
            else:
                self.skipped_batches += 1
                loss = None
        if self.step_count % cfg.target_sync_every == 0:
            self.target.copy_params_from(self.online)
        return loss


# -- control loop ----------------------------------------------------------

# Fixed 20-point guided sampling plan (mbw_idx, cf_idx): both extremes of each
# branch, the safe-to-risky diagonal, and the mid grid, so initial labels land
# on both sides of the QoS boundary for the default scenarios.
GUIDED_SAMPLING_PLAN = (
    (0, 5), (1, 4), (2, 3), (3, 2), (4, 1), (5, 0),
    (0, 0), (5, 5), (0, 3), (5, 2), (3, 5), (2, 0),
    (2, 2), (3, 3), (2, 4), (3, 1), (4, 3), (1, 2),
    (4, 4), (1, 1),
)

TRACE_COLUMNS = (
    "t_s", "phase", "mbw_idx", "cf_idx", "p99_pred_ms", "p99_corrected_ms",
    "p99_meas_ms", "qos_ratio_used", "reward", "be_instr_per_s", "loss",
    "method",
)


@dataclass
class LoopConfig:
    method: str = "rapid"
    control_interval_s: float = 0.2
    sample_interval_s: float = 5.0
    n_init_samples: int = 20
    sampling: str = "guided"  # or "uniform"
    feedback: str = "predicted"  # or "measured"
    bias_alpha: float = 0.8
    buffer_window_s: float = 5.0
    retrain_interval_s: float = 30.0
    agent: AgentConfig = field(default_factory=AgentConfig)


@dataclass
class LoopResult:
    rows: list  # trace rows matching TRACE_COLUMNS
    agent: BdqAgent
    store: PredictorStore | None
    predictor_fallback: bool = False


def run_control_loop(env: SimEnv, cfg: LoopConfig, duration_s: float, seed: int) -> LoopResult:
    """Run one learning controller end to end and collect the per-step trace.

    Phase 1 executes the initial sampling plan at the slow measurement
    cadence, fitting normalization statistics and (for predicted feedback)
    the regressor. Phase 2 runs the fast loop: featurize, predict, correct,
    reward, store, train.
    """
    agent = BdqAgent(cfg.agent, seed)
    plan_rng = np.random.default_rng([seed, 0x7B])
    target = env.hp.qos_target_ms
    rows: list = []

    if cfg.sampling == "guided":
        plan = [AllocationAction(m, c) for m, c in GUIDED_SAMPLING_PLAN[: cfg.n_init_samples]]
    else:
        plan = [
            AllocationAction(int(plan_rng.integers(6)), int(plan_rng.integers(6)))
            for _ in range(cfg.n_init_samples)
        ]

    # Phase 1: initial sampling at the slow cadence.
    snapshots, meas_avgs = [], []
    t = 0.0
    for action in plan:
        _, out = env.step(action, cfg.sample_interval_s)
        t += cfg.sample_interval_s
        snapshots.append(out.counters)
        meas_avgs.append(out.p99_meas_ms)
        ratio = out.p99_meas_ms / target
        rows.append([t, "sampling", action.mbw_idx, action.cf_idx, None, None,
                     out.p99_meas_ms, ratio, reward(min(ratio, QOS_RATIO_CLIP), action),
                     out.be_instr_per_s, None, cfg.method])
    stats = fit_norm_stats(snapshots)
    feats = [featurize(s, stats) for s in snapshots]
    ratios = [m / target for m in meas_avgs]
    states = [build_state(f, min(r, QOS_RATIO_CLIP)) for f, r in zip(feats, ratios)]
    for i in range(len(plan) - 1):
        a = plan[i + 1]
        r = reward(min(ratios[i + 1], QOS_RATIO_CLIP), a)
        agent.observe(Transition(states[i], a, r, states[i + 1]))

    store = None
    fallback = False
    if cfg.feedback == "predicted":
        init_samples = [
            TrainSample(f, float(np.log(m))) for f, m in zip(feats, meas_avgs)
        ]
        try:
            store = PredictorStore(init_samples, retrain_interval_s=cfg.retrain_interval_s)
        except Exception:
            store = None
            fallback = True

    buffers = RollingBuffers(cfg.buffer_window_s)
    state = states[-1]
    dt = cfg.control_interval_s
    n_steps = int(round((duration_s - t) / dt))
    window_snaps: list[CounterSnapshot] = []
    window_meas: list[float] = []
    last_meas_ratio = ratios[-1]

    for _ in range(n_steps):
        action = agent.act(state)
        _, out = env.step(action, dt)
        t = round(t + dt, 9)
        fv = featurize(out.counters, stats)
        pred_ms = corrected_ms = None
        if out.p99_meas_ms is not None:
            buffers.add_measurement(t, out.p99_meas_ms)
            window_meas.append(out.p99_meas_ms)
            last_meas_ratio = out.p99_meas_ms / target
        if store is not None:
            pred_ms = pred_mod.predict(store.model, fv)
            buffers.add_prediction(t, pred_ms)
            corrected_ms = correct_bias(pred_ms, buffers, cfg.bias_alpha)
            ratio_used = corrected_ms / target
        else:
            ratio_used = last_meas_ratio
        ratio_used = min(max(ratio_used, 0.0), QOS_RATIO_CLIP)
        r = reward(ratio_used, action)
        next_state = build_state(fv, ratio_used)
        agent.observe(Transition(state, action, r, next_state))
        loss = agent.train_step()
        rows.append([t, "regular", action.mbw_idx, action.cf_idx, pred_ms, corrected_ms,
                     out.p99_meas_ms, ratio_used, r, out.be_instr_per_s, loss, cfg.method])
        state = next_state

        if store is not None:
            window_snaps.append(out.counters)
            if len(window_snaps) * dt >= cfg.sample_interval_s - 1e-9:
                agg = CounterSnapshot.combine(window_snaps)
                if window_meas:
                    label = float(np.log(np.mean(window_meas)))
                    store.add_sample(TrainSample(featurize(agg, stats), label))
                window_snaps, window_meas = [], []
                try:
                    store.maybe_retrain(t)
                except Exception:
                    fallback = True
                    store = None
    return LoopResult(rows=rows, agent=agent, store=store, predictor_fallback=fallback)
