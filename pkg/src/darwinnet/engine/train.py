"""Shared minibatch training loop used by every stage."""

from dataclasses import dataclass, field

import numpy as np

from .model import backward, forward
from .optim import SGD


@dataclass
class Hyper:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    patience: int = 0          # 0 disables early stopping
    min_delta: float = 1e-4


@dataclass
class TrainResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    steps: int = 0             # optimizer updates; the deterministic cost measure
    best_epoch: int = -1
    epochs_run: int = 0


def _epoch_loss(model, inputs, targets, loss, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(inputs), batch_size):
        xb = inputs[start:start + batch_size]
        tb = targets[start:start + batch_size]
        out = forward(model, xb)[-1]
        l, _ = loss(out, tb)
        total += l * len(xb)
        count += len(xb)
    return total / max(count, 1)


def fit(model, inputs, targets, loss, hyper, seed, val=None, augment=None):
    """Train in place; returns loss curves and the update count.

    loss(output, target_batch) -> (scalar, grad w.r.t. output). ``val`` is an
    optional (inputs, targets) pair scored after every epoch; when patience
    is set, training stops once the validation loss has not improved by
    min_delta for that many consecutive epochs, and the best-epoch
    parameters are restored. ``augment`` maps (batch, rng) to a transformed
    batch and runs on training batches only.
    """
    rng = np.random.default_rng(seed)
    opt = SGD(model, hyper.lr, hyper.momentum)
    res = TrainResult()
    best_val = np.inf
    best_params = None
    bad_epochs = 0

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(inputs))
        total, count = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            xb = inputs[idx]
            tb = targets[idx]
            if augment is not None:
                xb = augment(xb, rng)
            acts = forward(model, xb)
            l, gout = loss(acts[-1], tb)
            grads = backward(model, xb, acts, gout)
            opt.step(grads)
            total += l * len(idx)
            count += len(idx)
            res.steps += 1
        res.train_loss.append(total / max(count, 1))
        res.epochs_run = epoch + 1

        if val is not None:
            vl = _epoch_loss(model, val[0], val[1], loss, hyper.batch_size)
            res.val_loss.append(vl)
            if vl < best_val - hyper.min_delta:
                best_val = vl
                res.best_epoch = epoch
                best_params = [{k: v.copy() for k, v in p.items()}
                               for p in model.params]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if hyper.patience and bad_epochs >= hyper.patience:
                    break

    if best_params is not None:
        model.params = best_params
    return res
