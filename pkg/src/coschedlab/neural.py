"""Minimal dense network engine: forward/backward, dropout, gradient clipping,
and the AdaBelief optimizer with decoupled weight decay.

Everything is float64 numpy; determinism matters far more than speed here.
"""

from __future__ import annotations

import numpy as np

from .errors import InputDomainError, TrainingStepError


class DenseNet:
    """Fully connected net with ReLU hidden layers.

    Parameters are stored as a flat list [W0, b0, W1, b1, ...] so optimizers
    and gradient clipping can treat them uniformly. `out_activation` may be
    "identity" (default) or "relu" (used when the net is the shared trunk of a
    larger model). Inverted dropout is applied to every ReLU output in train
    mode, so eval mode needs no rescaling.
    """

    def __init__(self, dims, out_activation="identity", dropout=0.0, rng=None):
        if len(dims) < 2:
            raise InputDomainError("need at least input and output dims")
        if out_activation not in ("identity", "relu"):
            raise InputDomainError(f"unknown activation {out_activation!r}")
        self.dims = list(dims)
        self.out_activation = out_activation
        self.dropout = float(dropout)
        self.params: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.params.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def clone(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.dims = list(self.dims)
        other.out_activation = self.out_activation
        other.dropout = self.dropout
        other.params = [p.copy() for p in self.params]
        return other

    def copy_params_from(self, other: "DenseNet") -> None:
        self.params = [p.copy() for p in other.params]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        i = 0
        for k, p in enumerate(self.params):
            self.params[k] = vec[i : i + p.size].reshape(p.shape).copy()
            i += p.size
        if i != vec.size:
            raise InputDomainError("parameter vector has wrong length")

    def forward(self, x, train=False, rng=None):
        """Returns (output, cache). Input may be (d,) or (batch, d)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.dims[0]:
            raise InputDomainError(f"expected input dim {self.dims[0]}, got {x.shape[1]}")
        acts = [x]
        masks = []
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            is_relu = layer < self.n_layers - 1 or self.out_activation == "relu"
            if is_relu:
                h = np.maximum(z, 0.0)
                if train and self.dropout > 0.0:
                    if rng is None:
                        raise InputDomainError("train-mode dropout needs an rng")
                    mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                    h = h * mask
                    masks.append(mask)
                else:
                    masks.append(None)
            else:
                h = z
                masks.append(None)
            acts.append(h)
        out = h[0] if squeeze else h
        cache = (acts, masks, squeeze)
        return out, cache

    def backward(self, cache, grad_out):
        """Exact gradients for the cached forward pass.

        Returns (param_grads, grad_input) with param_grads matching the layout
        of `self.params`.
        """
        acts, masks, squeeze = cache
        g = np.asarray(grad_out, dtype=float)
        if squeeze:
            g = g[None, :]
        grads = [np.zeros_like(p) for p in self.params]
        for layer in range(self.n_layers - 1, -1, -1):
            w = self.params[2 * layer]
            h_out = acts[layer + 1]
            is_relu = layer < self.n_layers - 1 or self.out_activation == "relu"
            if is_relu:
                if masks[layer] is not None:
                    g = g * masks[layer]
                    # Post-dropout activation is nonzero iff pre-dropout was.
                    g = g * (acts[layer + 1] != 0.0)
                else:
                    g = g * (h_out > 0.0)
            h_in = acts[layer]
            grads[2 * layer] = h_in.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ w.T
        return grads, (g[0] if squeeze else g)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads, max_norm=0.5):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return list(grads)


class AdaBelief:
    """AdaBelief with bias correction and decoupled weight decay.

    m <- b1*m + (1-b1)*g
    s <- b2*s + (1-b2)*(g-m)^2 + eps
    theta <- theta - lr * m_hat / (sqrt(s_hat) + eps), then theta *= (1 - lr*wd)
    """

    def __init__(self, lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-3):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = None
        self._s = None

    def step(self, params, grads):
        """Update params in place; raises TrainingStepError on non-finite grads."""
        if len(params) != len(grads):
            raise InputDomainError("params and grads length mismatch")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingStepError("non-finite gradient")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._s = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, s in zip(params, grads, self._m, self._s):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            diff = g - m
            s *= self.beta2
            s += (1.0 - self.beta2) * diff * diff + self.eps
            m_hat = m / bc1
            s_hat = s / bc2
            p -= self.lr * m_hat / (np.sqrt(s_hat) + self.eps)
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
        return params
