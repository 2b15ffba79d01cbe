import math

import numpy as np
import pytest

from lrbench.nn import Dense, Model, backward, forward


QUAD_CURVATURE = 20.0


def quadratic_problem():
    """Two-sample least-squares bowl with curvature 20 in each coordinate.

    Samples (a, 0) and (0, a) with zero targets give, for weights (w1, w2),
    loss = (a^2/4)(w1^2 + w2^2), so each coordinate sees curvature a^2/2.
    Gradient descent on it contracts by |1 - lr * L| per step and diverges
    for lr > 2/L, which makes the best fixed rate and the stability cliff
    known in closed form.
    """
    a = math.sqrt(2.0 * QUAD_CURVATURE)
    x = np.array([[a, 0.0], [0.0, a]])
    y = np.zeros((2, 1))
    return x, y


def quadratic_model(seed=0):
    layer = Dense(2, 1, bias=False, dtype=np.float64,
                  rng=np.random.default_rng(seed))
    return Model([layer], dtype=np.float64, loss="mse")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_diff_grads(model, x, y, h=1e-5, weight_decay=0.0):
    """Central-difference gradients for every parameter, one list per
    parameter array, in the same order as the analytic ones."""
    out = []
    for layer in model.param_layers():
        for p in layer.params:
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                saved = p[i]
                p[i] = saved + h
                logits, caches = forward(model, x)
                up = backward(model, logits, y, caches, weight_decay=weight_decay)
                p[i] = saved - h
                logits, caches = forward(model, x)
                down = backward(model, logits, y, caches, weight_decay=weight_decay)
                p[i] = saved
                g[i] = (up - down) / (2.0 * h)
            out.append(g)
    return out


def max_grad_rel_error(model, x, y, weight_decay=0.0):
    """Worst relative disagreement between analytic and numeric gradients."""
    logits, caches = forward(model, x)
    backward(model, logits, y, caches, weight_decay=weight_decay)
    analytic = [g.copy() for layer in model.param_layers() for g in layer.grads]
    numeric = finite_diff_grads(model, x, y, weight_decay=weight_decay)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
