"""
Forecast error metrics, averaged over every (window, variate, step) element.
"""
import numpy as np

from casa_forecaster.exceptions import ShapeMismatch


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


class MetricAccumulator:
    """Running sums so metrics over a stream equal metrics over the concatenation."""

    def __init__(self):
        self.squared = 0.0
        self.absolute = 0.0
        self.count = 0

    def update(self, pred, target):
        pred, target = _pair(pred, target)
        diff = pred - target
        self.squared += float(np.sum(diff * diff))
        self.absolute += float(np.sum(np.abs(diff)))
        self.count += diff.size

    @property
    def mse(self):
        return self.squared / self.count if self.count else float('nan')

    @property
    def mae(self):
        return self.absolute / self.count if self.count else float('nan')
