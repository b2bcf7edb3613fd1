"""
Executable row-independence properties of token projections.

An affine projection applied token by token maps row r of its input to row r
of its output and nothing else, whichever way the tokens are laid out
(variates for channel-wise tokens, time steps for point/patch tokens). The
score network mixes all rows. These helpers perturb one input row at a time
and compare the remaining output rows bit for bit.
"""
import numpy as np

from casa_forecaster.autograd.tensor import Tensor
from casa_forecaster.exceptions import ShapeMismatch
from casa_forecaster.models.layers import LinearParams, linear_forward


def _as_callable(proj):
    if isinstance(proj, LinearParams):
        return lambda z: linear_forward(proj, z)
    return proj


def _evaluate(fn, z):
    return np.array(fn(Tensor(z)).data)


def row_perturbation_diffs(proj, z, row, rng=None, magnitude=1.0):
    """
    Perturb one input row and measure the change of every output row.

    Args:
        proj: LinearParams or callable Tensor[R, D] -> Tensor[R, D']
        z: Array [R, D]
        row: Index of the perturbed row
        rng: Generator drawing the perturbation
        magnitude: Standard deviation of the perturbation

    Returns:
        Array [R] with the max abs change of each output row
    """
    fn = _as_callable(proj)
    rng = rng or np.random.default_rng(0)
    z = np.array(z, dtype=np.float64)
    base = _evaluate(fn, z)
    shifted = z.copy()
    shifted[row] = shifted[row] + magnitude * rng.standard_normal(z.shape[1])
    moved = _evaluate(fn, shifted)
    return np.abs(moved - base).reshape(z.shape[0], -1).max(axis=1)


def rows_bit_identical(proj, z, row, rng=None):
    """True iff perturbing `row` leaves every other output row bit-identical."""
    fn = _as_callable(proj)
    rng = rng or np.random.default_rng(0)
    z = np.array(z, dtype=np.float64)
    base = _evaluate(fn, z)
    shifted = z.copy()
    shifted[row] = shifted[row] + rng.standard_normal(z.shape[1])
    moved = _evaluate(fn, shifted)
    others = [r for r in range(z.shape[0]) if r != row]
    return all(np.array_equal(base[r], moved[r]) for r in others)


def variate_independence_check(proj, z, rng=None):
    """
    Channel-wise layout: rows of z are variate tokens.

    Returns:
        True iff every output row depends only on its own input row, for a
        perturbation of each row in turn
    """
    rng = rng or np.random.default_rng(0)
    return all(rows_bit_identical(proj, z, row, rng) for row in range(np.shape(z)[0]))


def prop2_time_independence_check(proj, z, rng=None):
    """
    Point/patch-wise layout: rows of z are time tokens (the transposed view).

    The token-wise projection cannot tell time tokens from variate tokens,
    so this is the variate check run on the time-token view.

    Args:
        proj: LinearParams or callable over Tensor[L', D]
        z: Array [L', D], one row per time token
        rng: Generator drawing the perturbations

    Returns:
        True iff perturbing any time token s leaves every token r != s bit-identical
    """
    time_tokens = np.asarray(z)
    if time_tokens.ndim != 2:
        raise ShapeMismatch(f"time-token view must be [L', D], got shape {time_tokens.shape}")
    return variate_independence_check(proj, time_tokens, rng)
