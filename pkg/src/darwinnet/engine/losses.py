"""Training objectives, each returning (scalar loss, gradient w.r.t. input).

Loss sums accumulate in float64 regardless of the activation dtype.
"""

import numpy as np

from .layers import softmax_forward


def loss_softmax_ce(logits, labels):
    """Mean negative log softmax probability of the true class.

    logits: (N, K); labels: (N,) ints in [0, K).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label outside [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean((logsumexp - z[np.arange(n), labels]).astype(np.float64)))
    probs = softmax_forward(logits)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def loss_pixel_ce(logit_map, mask):
    """Per-pixel softmax cross entropy averaged over every pixel.

    logit_map: (N, K, H, W); mask: (N, H, W) ints in [0, K).
    """
    logit_map = np.asarray(logit_map)
    mask = np.asarray(mask)
    n, k, h, w = logit_map.shape
    if mask.shape != (n, h, w):
        raise ValueError(f"mask shape {mask.shape} does not match map {(n, h, w)}")
    if mask.min() < 0 or mask.max() >= k:
        raise ValueError(f"pixel label outside [0, {k})")
    z = logit_map - logit_map.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))            # (N, H, W)
    picked = np.take_along_axis(z, mask[:, None], axis=1)[:, 0]
    loss = float(np.mean((logsumexp - picked).astype(np.float64)))
    probs = softmax_forward(logit_map)
    grad = probs.copy()
    np.put_along_axis(grad, mask[:, None],
                      np.take_along_axis(grad, mask[:, None], axis=1) - 1.0, axis=1)
    grad /= n * h * w
    return loss, grad.astype(logit_map.dtype)


def loss_sse(output, target):
    """Half sum of squared errors; handy for gradient-check fixtures."""
    d = (output - target).astype(np.float64)
    return float(0.5 * np.sum(d * d)), (output - target).astype(output.dtype)
