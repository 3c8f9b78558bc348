"""Independent reference implementations shared by the unit and acceptance
suites.  These stay deliberately naive (scalar loops, O(n^2) counting,
straight-line pipelines) so they cannot share bugs with the vectorized
production paths they check."""

import math

import numpy as np

from privfed.learners import LN_EPS
from privfed.params import flatten, unflatten


def nn_forward_oracle(params, x):
    """Scalar reimplementation of the 66-parameter network forward pass."""
    w = params.tensor("hidden_w")
    gain = params.tensor("ln_gain")
    bias = params.tensor("ln_bias")
    out_w = params.tensor("out_w").reshape(-1)
    out_b = params.tensor("out_b")[0]
    hidden = [max(0.0, sum(w[h][d] * x[d] for d in range(10))) for h in range(5)]
    mean = sum(hidden) / 5.0
    var = sum((h - mean) ** 2 for h in hidden) / 5.0
    z = [(h - mean) / math.sqrt(var + LN_EPS) * g + b for h, g, b in zip(hidden, gain, bias)]
    logit = sum(u * zi for u, zi in zip(out_w, z)) + out_b
    return 1.0 / (1.0 + math.exp(-logit))


def numeric_gradient(kind, params, x, y, l2, h=1e-6):
    """Central finite differences through the full training objective."""
    from privfed.learners import loss_and_grad

    flat, manifest = flatten(params)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        lu, _ = loss_and_grad(kind, unflatten(up, manifest), x, y, l2)
        ld, _ = loss_and_grad(kind, unflatten(down, manifest), x, y, l2)
        grad[i] = (lu - ld) / (2 * h)
    return grad


def svt_reference(delta, steps, cfg, rng):
    """Straight-line SVT pipeline consuming the generator in the documented
    order: one threshold draw, n query draws, then one value draw per
    accepted index.

    The inverse-CDF draw uses numpy's log1p: libm's scalar log1p differs
    from numpy's in the last ulp for some inputs, and the oracle checks the
    pipeline bit for bit, not the libm rounding."""
    n = len(delta)
    x = [min(max(d / steps, -cfg.gamma), cfg.gamma) for d in delta]
    lam = 2.0 * cfg.gamma / cfg.epsilon

    def lap(scale):
        u = rng.uniform(-0.5, 0.5)
        return float(-scale * np.sign(u) * np.log1p(-2.0 * abs(u)))

    threshold = cfg.tau + lap(lam)
    queries = [abs(xi) + lap(2.0 * lam) for xi in x]
    cap = math.ceil(cfg.fraction * n)
    accepted = []
    for i in range(n):
        if queries[i] >= threshold:
            accepted.append(i)
            if len(accepted) >= cap:
                break
    y = [0.0] * n
    b_v = math.sqrt(cfg.noise_var / 2.0)
    for i in accepted:
        y[i] = min(max(x[i] + lap(b_v), -cfg.gamma), cfg.gamma)
    return np.array([v * steps for v in y])


def auc_pairwise_oracle(scores, labels):
    """O(n^2) pairwise AUC count with half-credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))
