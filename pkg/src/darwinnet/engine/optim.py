"""Plain SGD with classical momentum: v <- m*v + g, p <- p - lr*v."""

import numpy as np


class TrainingDivergedError(RuntimeError):
    pass


class SGD:
    """Velocity buffers persist across steps for the lifetime of the optimizer."""

    def __init__(self, model, lr, momentum=0.0):
        if not lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self.velocity = [{k: np.zeros_like(v) for k, v in p.items()}
                         for p in model.params]

    def step(self, grads):
        for i, g in enumerate(grads):
            for name, gval in g.items():
                if not np.all(np.isfinite(gval)):
                    raise TrainingDivergedError(
                        f"non-finite gradient in layer {i} ({name})")
                v = self.velocity[i][name]
                v *= self.momentum
                v += gval
                self.model.params[i][name] -= self.lr * v
        return self.model


def sgd_step(model, grads, lr, momentum, state=None):
    """One functional step; pass the returned optimizer back in to keep velocity."""
    if state is None:
        state = SGD(model, lr, momentum)
    state.lr = lr
    state.step(grads)
    return state
