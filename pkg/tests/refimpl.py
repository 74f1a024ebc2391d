"""Independent reference implementations used as oracles by the tests.

These deliberately avoid the library's own forward/backward machinery: plain
loops and explicit arithmetic only.
"""

import numpy as np


def ref_dense_forward(params, dims, out_relu, x):
    """Forward pass over flat [W0, b0, W1, b1, ...] parameters with loops."""
    h = list(x)
    n_layers = len(dims) - 1
    for layer in range(n_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        z = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            z.append(acc)
        if layer < n_layers - 1 or out_relu:
            z = [max(v, 0.0) for v in z]
        h = z
    return np.array(h)


def ref_bdq_q(net, state):
    """Dueling per-branch Q-values recomputed from raw parameters."""
    h = ref_dense_forward(net.trunk.params, net.trunk.dims, True, state)
    v = ref_dense_forward(net.value.params, net.value.dims, False, h)[0]
    qs = []
    for adv_net in net.adv:
        a = ref_dense_forward(adv_net.params, adv_net.dims, False, h)
        mean_a = sum(a) / len(a)
        qs.append(np.array([v + ai - mean_a for ai in a]))
    return qs


def ref_td_target(tr, online, target, discount):
    """Double-Q branch-mean TD target for a single transition."""
    if tr.terminal:
        return tr.reward
    q_online = ref_bdq_q(online, tr.next_state)
    q_target = ref_bdq_q(target, tr.next_state)
    boot = 0.0
    for d in range(len(q_online)):
        a_star = int(np.argmax(q_online[d]))
        boot += q_target[d][a_star]
    boot /= len(q_online)
    return tr.reward + discount * boot
