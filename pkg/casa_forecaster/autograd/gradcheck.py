"""
Central finite-difference oracles for the gradient tape.
"""
import logging

import numpy as np

from casa_forecaster.autograd.tensor import Tape, Tensor

logger = logging.getLogger("CASA-Forecaster")


def numerical_gradient(f, x, eps=1e-5):
    """
    Central-difference gradient of a scalar function.

    Args:
        f: Callable taking a Tensor and returning a scalar Tensor
        x: Point of evaluation (array-like, evaluated in 64-bit)
        eps: Perturbation size

    Returns:
        Array with the shape of x
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        original = base[idx]
        base[idx] = original + eps
        plus = f(Tensor(base.copy())).item()
        base[idx] = original - eps
        minus = f(Tensor(base.copy())).item()
        base[idx] = original
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def analytic_gradient(f, x):
    """Gradient of a scalar function at x through the tape."""
    tape = Tape()
    watched = tape.watch(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    tape.backward(f(watched))
    return tape.grad(watched)


def finite_diff_check(f, x, eps=1e-5):
    """
    Compare analytic and central-difference gradients of f at x.

    Args:
        f: Deterministic scalar-valued function of one Tensor
        x: Evaluation point
        eps: Perturbation size

    Returns:
        Maximum over coordinates of |analytic - numeric| / (|analytic| + 1e-8)
    """
    analytic = analytic_gradient(f, x)
    numeric = numerical_gradient(f, x, eps=eps)
    return float(np.max(coordinate_errors(analytic, numeric)))


def coordinate_errors(analytic, numeric):
    """|analytic - numeric| / (|analytic| + 1e-8), coordinate by coordinate."""
    return np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)


def audit_gradients(loss_fn, params, eps=1e-5, zero_tol=1e-9, logger=None):
    """
    Check every scalar of every parameter against central differences.

    The error of a parameter tensor is the largest coordinate_errors entry.
    Coordinates where both gradients are below `zero_tol` (softmax shift
    directions, whose exact gradient is zero) are central-difference
    round-off and count as agreeing.

    Args:
        loss_fn: Callable mapping {name: Tensor} to a scalar Tensor
        params: Dictionary {name: array}, evaluated in 64-bit
        eps: Perturbation size
        zero_tol: Magnitude under which both gradients are treated as zero
        logger: Logger instance for logging

    Returns:
        List of (name, max relative error, max |analytic|) in parameter order
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}

    tape = Tape()
    watched = {name: tape.watch(value) for name, value in params.items()}
    tape.backward(loss_fn(watched))

    def evaluate(name, value):
        constants = {key: Tensor(val) for key, val in params.items()}
        constants[name] = Tensor(value)
        return loss_fn(constants).item()

    results = []
    for name, value in params.items():
        analytic = tape.grad(watched[name])
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = value.copy()
            shifted[idx] = value[idx] + eps
            plus = evaluate(name, shifted)
            shifted[idx] = value[idx] - eps
            minus = evaluate(name, shifted)
            numeric[idx] = (plus - minus) / (2.0 * eps)

        errors = coordinate_errors(analytic, numeric)
        errors[np.maximum(np.abs(analytic), np.abs(numeric)) < zero_tol] = 0.0
        error = float(np.max(errors))
        worst = np.unravel_index(np.argmax(errors), errors.shape)
        logger.debug(f"gradcheck {name}: rel. err {error:.3e} at {worst}")
        results.append((name, error, float(np.max(np.abs(analytic)))))
    return results
