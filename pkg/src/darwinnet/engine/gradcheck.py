"""Finite-difference verification of the analytic backward pass."""

import numpy as np

from .model import backward, forward


def grad_check(model, batch, loss_fn, epsilon=1e-4):
    """Max relative error between backprop and central finite differences.

    Every parameter is perturbed individually, so the model must be desk
    scale (<= 10^4 parameters). Runs in float64 copies: the check verifies
    the math, not float32 rounding.

    batch is (inputs, targets); loss_fn(output, targets) must return
    (scalar loss, d loss/d output).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if model.parameter_count > 10_000:
        raise ValueError(f"{model.parameter_count} parameters exceeds the "
                         "10k gradient-check budget")
    inputs, targets = batch
    m = model.astype(np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets)
    if np.issubdtype(t.dtype, np.floating):
        t = t.astype(np.float64)

    acts = forward(m, x)
    _, gout = loss_fn(acts[-1], t)
    analytic = backward(m, x, acts, gout)

    worst = 0.0
    for i, p in enumerate(m.params):
        for name, arr in p.items():
            flat = arr.reshape(-1)
            an = analytic[i][name].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                lp, _ = loss_fn(forward(m, x)[-1], t)
                flat[j] = orig - epsilon
                lm, _ = loss_fn(forward(m, x)[-1], t)
                flat[j] = orig
                fd = (lp - lm) / (2 * epsilon)
                denom = max(abs(fd), abs(an[j]))
                if denom < 1e-12:
                    continue                 # both effectively zero
                worst = max(worst, abs(fd - an[j]) / denom)
    return worst
