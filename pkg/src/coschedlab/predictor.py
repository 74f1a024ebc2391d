"""Fast tail-latency prediction: RBF support-vector regression over normalized
counter features, plus percentile-based bias correction against a short rolling
window of real measurements.

Labels live in log space (ln p99 ms): the epsilon tube then penalizes relative
errors above ~5%. Predictions are exponentiated at the boundary.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.svm import SVR

from .errors import CalibrationError
from .features import FeatureVector

DEFAULT_C = 5.0
DEFAULT_EPSILON = 0.05
DEFAULT_TOL = 0.05
DENOM_CLAMP = 0.1


@dataclass(frozen=True)
class TrainSample:
    features: FeatureVector
    label_log_ms: float  # ln(p99 ms) from a multi-second measurement average


@dataclass
class RbfSvrModel:
    support_vectors: np.ndarray  # (n_sv, d)
    dual_coef: np.ndarray  # (n_sv,)
    bias: float
    gamma: float  # RBF kernel coefficient exp(-gamma * ||x - sv||^2)
    degenerate: bool = False
    n_train: int = 0

    def predict_log(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if self.degenerate or len(self.support_vectors) == 0:
            return self.bias
        d2 = np.sum((self.support_vectors - x) ** 2, axis=1)
        return float(self.dual_coef @ np.exp(-self.gamma * d2) + self.bias)

    def dump(self, path) -> None:
        with open(path, "w") as f:
            json.dump(
                {
                    "support_vectors": self.support_vectors.tolist(),
                    "dual_coef": self.dual_coef.tolist(),
                    "bias": self.bias,
                    "gamma": self.gamma,
                    "degenerate": self.degenerate,
                    "n_train": self.n_train,
                },
                f,
            )

    @staticmethod
    def load(path) -> "RbfSvrModel":
        with open(path) as f:
            d = json.load(f)
        sv = np.array(d["support_vectors"], dtype=float)
        if sv.size == 0:
            sv = sv.reshape(0, 0)
        return RbfSvrModel(
            support_vectors=sv,
            dual_coef=np.array(d["dual_coef"], dtype=float),
            bias=float(d["bias"]),
            gamma=float(d["gamma"]),
            degenerate=bool(d["degenerate"]),
            n_train=int(d["n_train"]),
        )


def _median_pairwise_gamma(x: np.ndarray) -> float:
    """Kernel width from the median pairwise distance heuristic."""
    n = len(x)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    med = np.median(np.sqrt(d2[np.triu_indices(n, k=1)]))
    if med < 1e-9:
        return 1.0
    return 1.0 / (2.0 * med**2)


def fit(
    samples: list[TrainSample],
    C: float = DEFAULT_C,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_TOL,
) -> RbfSvrModel:
    """Fit the epsilon-insensitive RBF regressor. Requires >= 5 samples.

    Degenerate input (no feature spread) yields a constant model at the label
    median, flagged via `degenerate`.
    """
    if len(samples) < 5:
        raise CalibrationError(f"need >= 5 samples, got {len(samples)}")
    x = np.array([s.features.as_array() for s in samples], dtype=float)
    y = np.array([s.label_log_ms for s in samples], dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CalibrationError("non-finite training data")
    if np.max(np.ptp(x, axis=0)) < 1e-12:
        return RbfSvrModel(
            support_vectors=np.empty((0, x.shape[1])),
            dual_coef=np.empty(0),
            bias=float(np.median(y)),
            gamma=1.0,
            degenerate=True,
            n_train=len(samples),
        )
    gamma = _median_pairwise_gamma(x)
    svr = SVR(kernel="rbf", C=C, epsilon=epsilon, tol=tol, gamma=gamma)
    svr.fit(x, y)
    return RbfSvrModel(
        support_vectors=svr.support_vectors_.copy(),
        dual_coef=svr.dual_coef_.ravel().copy(),
        bias=float(svr.intercept_[0]),
        gamma=gamma,
        n_train=len(samples),
    )


def predict(model: RbfSvrModel, features: FeatureVector) -> float:
    """Predicted p99 in milliseconds (always positive and finite)."""
    log_ms = model.predict_log(features.as_array())
    return float(np.exp(np.clip(log_ms, -50.0, 50.0)))


class RollingBuffers:
    """Last `window_s` seconds of p99 measurements and predictions (ms)."""

    def __init__(self, window_s: float = 5.0):
        self.window_s = window_s
        self._meas = deque()  # (t_s, ms)
        self._pred = deque()

    def add_measurement(self, t_s: float, p99_ms: float) -> None:
        self._meas.append((t_s, p99_ms))
        self._evict(t_s)

    def add_prediction(self, t_s: float, p99_ms: float) -> None:
        self._pred.append((t_s, p99_ms))
        self._evict(t_s)

    def _evict(self, now_s: float) -> None:
        for buf in (self._meas, self._pred):
            while buf and buf[0][0] < now_s - self.window_s:
                buf.popleft()

    @property
    def n_measurements(self) -> int:
        return len(self._meas)

    @property
    def n_predictions(self) -> int:
        return len(self._pred)

    def measurement_values(self) -> np.ndarray:
        return np.array([v for _, v in self._meas])

    def prediction_values(self) -> np.ndarray:
        return np.array([v for _, v in self._pred])


def corrected_p99(pred_ms: float, meas10: float, meas90: float, pred90: float,
                  alpha: float = 0.8) -> float:
    """corrected = meas10 + (pred - meas10) / (1 + alpha*(pred90/meas90 - 1)),
    with the denominator clamped to >= 0.1."""
    denom = max(1.0 + alpha * (pred90 / max(meas90, 1e-12) - 1.0), DENOM_CLAMP)
    return float(meas10 + (pred_ms - meas10) / denom)


def correct_bias(pred_ms: float, buffers: RollingBuffers, alpha: float = 0.8) -> float:
    """Percentile-matching bias correction against the rolling buffers.

    With fewer than 5 entries in either buffer the correction is disabled
    and pred_ms passes through.
    """
    if buffers.n_measurements < 5 or buffers.n_predictions < 5:
        return pred_ms
    meas10 = np.percentile(buffers.measurement_values(), 10)
    meas90 = np.percentile(buffers.measurement_values(), 90)
    pred90 = np.percentile(buffers.prediction_values(), 90)
    return corrected_p99(pred_ms, meas10, meas90, pred90, alpha)


@dataclass
class PredictorStore:
    """Accumulates measurement-aligned samples and retrains on a schedule.

    The training set is the initial samples plus at most `max_recent` of the
    most recently accumulated ones.
    """

    initial_samples: list
    retrain_interval_s: float = 30.0
    max_recent: int = 200
    model: RbfSvrModel | None = None
    _recent: deque = field(default_factory=lambda: deque(maxlen=200), repr=False)
    _last_retrain_s: float = 0.0
    _dirty: bool = False

    def __post_init__(self):
        self._recent = deque(maxlen=self.max_recent)
        if self.model is None:
            self.model = fit(self.initial_samples)

    def add_sample(self, sample: TrainSample) -> None:
        self._recent.append(sample)
        self._dirty = True

    def training_set(self) -> list[TrainSample]:
        return list(self.initial_samples) + list(self._recent)

    def maybe_retrain(self, now_s: float) -> bool:
        """Retrain when the interval elapsed and new samples arrived."""
        if not self._dirty or now_s - self._last_retrain_s < self.retrain_interval_s:
            return False
        self.model = fit(self.training_set())
        self._last_retrain_s = now_s
        self._dirty = False
        return True
