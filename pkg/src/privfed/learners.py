"""The two local learners: logistic regression and a small feed-forward net.

Both are binary classifiers over 10 features trained with minibatch SGD on
binary cross-entropy plus an optional L2 penalty on the weight matrices.

Logistic regression: 10 coefficients + 1 intercept = 11 parameters.

Feed-forward net: 10 -> 5 hidden units (no hidden bias) -> ReLU -> layer
normalization with learnable gain and bias -> 1 output unit with bias.
Parameter count: 50 + 5 + 5 + 5 + 1 = 66.  The layer-norm bias plays the
role of the hidden bias, which is what makes the count come out to 66.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import LayoutError
from .params import ParamSet

LN_EPS = 1e-5  # layer-norm variance epsilon, biased variance estimator
N_FEATURES = 10
N_HIDDEN = 5


class ModelKind(str, Enum):
    LOGISTIC_REGRESSION = "lr"
    FEEDFORWARD_NN = "nn"


LAYOUTS = {
    ModelKind.LOGISTIC_REGRESSION: (("coef", (10,)), ("intercept", (1,))),
    ModelKind.FEEDFORWARD_NN: (
        ("hidden_w", (5, 10)),
        ("ln_gain", (5,)),
        ("ln_bias", (5,)),
        ("out_w", (1, 5)),
        ("out_b", (1,)),
    ),
}

PARAM_COUNTS = {ModelKind.LOGISTIC_REGRESSION: 11, ModelKind.FEEDFORWARD_NN: 66}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    local_epochs: int
    l2_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be nonnegative")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


@dataclass(frozen=True)
class TrainStats:
    steps: int
    mean_loss: float
    wall_time: float


def init_params(kind: ModelKind, seed: int) -> ParamSet:
    """Initial parameters: LR all zeros; NN Xavier-uniform weights, unit
    layer-norm gain, zero biases.  Deterministic for a given seed."""
    kind = ModelKind(kind)
    if kind is ModelKind.LOGISTIC_REGRESSION:
        return ParamSet([(n, s, np.zeros(s)) for n, s in LAYOUTS[kind]])
    rng = np.random.default_rng(seed)
    bound_h = math.sqrt(6.0 / (N_FEATURES + N_HIDDEN))
    bound_o = math.sqrt(6.0 / (N_HIDDEN + 1))
    return ParamSet(
        [
            ("hidden_w", (5, 10), rng.uniform(-bound_h, bound_h, (5, 10))),
            ("ln_gain", (5,), np.ones(5)),
            ("ln_bias", (5,), np.zeros(5)),
            ("out_w", (1, 5), rng.uniform(-bound_o, bound_o, (1, 5))),
            ("out_b", (1,), np.zeros(1)),
        ]
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _nn_intermediates(params: ParamSet, x: np.ndarray):
    w = params.tensor("hidden_w")
    gain = params.tensor("ln_gain")
    bias = params.tensor("ln_bias")
    out_w = params.tensor("out_w").reshape(-1)
    out_b = params.tensor("out_b")[0]
    # einsum keeps each output row an independent fixed-order sum, so the
    # batched path is bitwise identical to evaluating rows one at a time
    pre = np.einsum("nd,hd->nh", x, w)
    hidden = np.maximum(pre, 0.0)
    mean = hidden.mean(axis=1, keepdims=True)
    var = hidden.var(axis=1, keepdims=True)  # biased estimator
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    normed = (hidden - mean) * inv_std
    z = normed * gain + bias
    logit = np.einsum("nh,h->n", z, out_w) + out_b
    return pre, hidden, inv_std, normed, z, logit


def _logits(kind: ModelKind, params: ParamSet, x: np.ndarray) -> np.ndarray:
    if kind is ModelKind.LOGISTIC_REGRESSION:
        coef = params.tensor("coef")
        return np.einsum("nd,d->n", x, coef) + params.tensor("intercept")[0]
    return _nn_intermediates(params, x)[-1]


def forward(kind: ModelKind, params: ParamSet, features) -> float:
    """Single-sample predicted probability of the positive class."""
    kind = ModelKind(kind)
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return float(_sigmoid(_logits(kind, params, x))[0])


def predict_batch(kind: ModelKind, params: ParamSet, features) -> np.ndarray:
    """Probabilities for a feature matrix; row i equals forward() on row i."""
    kind = ModelKind(kind)
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0, dtype=np.float64)
    x = x.reshape(-1, N_FEATURES)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return _sigmoid(_logits(kind, params, x))


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    # mean of softplus(z) - y*z, the numerically stable BCE form
    return float(np.mean((1.0 - labels) * logits + np.logaddexp(0.0, -logits)))


def loss_and_grad(kind: ModelKind, params: ParamSet, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Objective value and its gradient as a ParamSet with matching layout.

    Objective: mean BCE over the batch + (l2/2) * squared norm of the weight
    matrices (coef / hidden_w / out_w; biases and gains are not penalized).
    """
    kind = ModelKind(kind)
    x = np.asarray(x, dtype=np.float64).reshape(-1, N_FEATURES)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    if kind is ModelKind.LOGISTIC_REGRESSION:
        coef = params.tensor("coef")
        logits = _logits(kind, params, x)
        p = _sigmoid(logits)
        dlogit = (p - y) / n
        g_coef = x.T @ dlogit + l2 * coef
        g_b = np.array([dlogit.sum()])
        loss = bce_loss(logits, y) + 0.5 * l2 * float(coef @ coef)
        grad = ParamSet([("coef", (10,), g_coef), ("intercept", (1,), g_b)])
        return loss, grad

    w = params.tensor("hidden_w")
    gain = params.tensor("ln_gain")
    out_w = params.tensor("out_w").reshape(-1)
    pre, hidden, inv_std, normed, z, logits = _nn_intermediates(params, x)
    p = _sigmoid(logits)
    dlogit = (p - y) / n

    g_out_w = z.T @ dlogit + l2 * out_w
    g_out_b = np.array([dlogit.sum()])
    dz = np.outer(dlogit, out_w)
    g_gain = (dz * normed).sum(axis=0)
    g_bias = dz.sum(axis=0)
    dnormed = dz * gain
    # layer-norm backward (biased variance): project out mean and the
    # component along the normalized activations
    dmean = dnormed.mean(axis=1, keepdims=True)
    dproj = (dnormed * normed).mean(axis=1, keepdims=True)
    dhidden = inv_std * (dnormed - dmean - normed * dproj)
    dpre = dhidden * (pre > 0)
    g_w = dpre.T @ x + l2 * w

    loss = bce_loss(logits, y) + 0.5 * l2 * (float(np.sum(w * w)) + float(out_w @ out_w))
    grad = ParamSet(
        [
            ("hidden_w", (5, 10), g_w),
            ("ln_gain", (5,), g_gain),
            ("ln_bias", (5,), g_bias),
            ("out_w", (1, 5), g_out_w.reshape(1, 5)),
            ("out_b", (1,), g_out_b),
        ]
    )
    return loss, grad


def steps_per_round(n_train: int, batch_size: int, local_epochs: int) -> int:
    return local_epochs * math.ceil(n_train / batch_size)


def train_local(kind: ModelKind, params: ParamSet, train, cfg: TrainConfig):
    """Minibatch SGD for ``cfg.local_epochs`` epochs over ``train``.

    Data is reshuffled each epoch with a generator seeded from cfg.seed, so
    identical (seed, data, config) reproduce bitwise-identical parameters.
    Returns the updated ParamSet and a TrainStats with the step count the
    DP filter needs for normalization.
    """
    kind = ModelKind(kind)
    x = np.asarray(train.features, dtype=np.float64)
    y = np.asarray(train.labels, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    expected_layout = [name for name, _ in LAYOUTS[kind]]
    if params.names() != expected_layout:
        raise LayoutError(f"params do not match {kind.value} layout")

    t0 = time.monotonic()
    rng = np.random.default_rng(cfg.seed)
    current = params
    steps = 0
    loss_total = 0.0
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(kind, current, x[idx], y[idx], cfg.l2_penalty)
            current = ParamSet(
                (e.name, e.shape, e.values - cfg.learning_rate * g.values)
                for e, g in zip(current.entries, grad.entries)
            )
            steps += 1
            loss_total += loss
    mean_loss = loss_total / steps if steps else float("nan")
    return current, TrainStats(steps=steps, mean_loss=mean_loss, wall_time=time.monotonic() - t0)
