"""
Adam optimizer, plateau learning-rate decay and early stopping.
"""
from dataclasses import dataclass, field

import numpy as np

from casa_forecaster.exceptions import NonFiniteGradient


@dataclass
class OptimState:
    """Adam moments and hyperparameters; moment buffers mirror parameter shapes."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyperparameters(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps,
                'weight_decay': self.weight_decay, 'step': self.step}


def adam_step(params, grads, state):
    """
    One bias-corrected Adam update.

    Args:
        params: Dictionary {name: array}
        grads: Dictionary {name: array} with the same keys and shapes
        state: OptimState, updated in place

    Returns:
        Tuple (new params dictionary, state)
    """
    bad = [name for name, grad in grads.items() if not np.all(np.isfinite(grad))]
    if bad:
        raise NonFiniteGradient(f"non-finite gradient in {', '.join(bad[:5])}", names=bad)

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    updated = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if state.weight_decay:
            grad = grad + state.weight_decay * value
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(value.shape, dtype=np.float64)
            v = np.zeros(value.shape, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        step = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = (value - step).astype(value.dtype)
    return updated, state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, state=None):
        self.state = state or OptimState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)

    @property
    def lr(self):
        return self.state.lr

    def step(self, params, grads):
        updated, self.state = adam_step(params, grads, self.state)
        return updated


class PlateauScheduler:
    """Multiply the learning rate by `factor` after `patience` epochs without val improvement."""

    def __init__(self, optimizer, factor=0.5, patience=3, min_lr=0.0):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = None
        self.bad_epochs = 0

    def step(self, val_loss):
        if self.best is None or val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.optimizer.state.lr = max(self.optimizer.state.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.optimizer.state.lr


class EarlyStopping:
    """
    Stop training when the val loss does not improve.

    Args:
        patience: Epochs without improvement tolerated; 0 stops after the first epoch
        min_delta: Improvement smaller than this does not reset the counter
    """

    def __init__(self, patience=10, min_delta=0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_loss = None
        self.early_stop = False

    def __call__(self, val_loss):
        """Record one epoch; returns True when it is the best so far."""
        improved = self.best_loss is None or self.best_loss - val_loss > self.min_delta
        if improved:
            self.best_loss = val_loss
            self.counter = 0
        else:
            self.counter += 1
        if self.counter >= self.patience:
            self.early_stop = True
        return improved
