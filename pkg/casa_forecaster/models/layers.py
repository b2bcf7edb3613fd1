"""
Parameterized layers: affine map, layer normalization, dropout and RevIN.

Parameter records hold Tensors so the same layer code runs on plain
constants (inference) and on tape-watched leaves (training, gradcheck).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from casa_forecaster.autograd import functional as F
from casa_forecaster.autograd.tensor import Tensor, as_tensor
from casa_forecaster.exceptions import InvalidArgument, ShapeMismatch, StateMismatch


@dataclass
class LinearParams:
    weight: Tensor  # [d_in, d_out]
    bias: Tensor  # [d_out]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5


@dataclass
class Conv1dParams:
    weight: Tensor  # [C_out, C_in, k]
    bias: Optional[Tensor] = None


@dataclass
class RevinAffine:
    scale: Tensor  # [N]
    shift: Tensor  # [N]


@dataclass
class RevinState:
    """Statistics captured by revin_normalize, required to invert it."""
    mean: np.ndarray  # [..., N, 1]
    std: np.ndarray  # [..., N, 1]
    eps: float = 1e-5
    affine: Optional[RevinAffine] = None


# Initializers ---------------------------------------------------------------

def init_linear(rng, d_in, d_out, dtype=np.float64):
    """Weights uniform in +-1/sqrt(fan_in), zero bias."""
    bound = 1.0 / np.sqrt(d_in)
    return {
        'weight': rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype),
        'bias': np.zeros(d_out, dtype=dtype),
    }


def init_conv1d(rng, c_in, c_out, kernel_size, bias=True, dtype=np.float64):
    bound = 1.0 / np.sqrt(c_in * kernel_size)
    params = {'weight': rng.uniform(-bound, bound, size=(c_out, c_in, kernel_size)).astype(dtype)}
    if bias:
        params['bias'] = np.zeros(c_out, dtype=dtype)
    return params


def init_layer_norm(dim, dtype=np.float64):
    return {'gamma': np.ones(dim, dtype=dtype), 'beta': np.zeros(dim, dtype=dtype)}


# Layers ---------------------------------------------------------------------

def linear_forward(p, x):
    """
    Affine map x.W + b along the trailing dimension.

    Args:
        p: LinearParams with weight [d_in, d_out] and bias [d_out]
        x: Tensor[..., d_in]

    Returns:
        Tensor[..., d_out]
    """
    x = as_tensor(x)
    d_in = p.weight.shape[0]
    if x.shape[-1] != d_in:
        raise ShapeMismatch(f"linear: trailing dim {x.shape[-1]} != d_in {d_in}")
    return F.add(F.matmul(x, p.weight), p.bias)


def layer_norm(p, x):
    """Per-row standardization followed by the gamma/beta affine."""
    return F.layer_norm(x, p.gamma, p.beta, eps=p.eps)


def dropout(x, rate, training, rng):
    """
    Inverted dropout.

    Args:
        x: Input Tensor
        rate: Drop probability in [0, 1)
        training: Identity when False
        rng: numpy Generator owned by the caller

    Returns:
        x itself at eval time or rate 0, else the masked and rescaled Tensor
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return F.mul(x, Tensor(mask))


def revin_normalize(x, affine=None, eps=1e-5):
    """
    Reversible instance normalization over the time axis of each variate.

    Args:
        x: Tensor[..., N, L] with L >= 2
        affine: Optional RevinAffine with per-variate scale and shift
        eps: Added to the standard deviation

    Returns:
        Tuple (normalized Tensor[..., N, L], RevinState)
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 2:
        raise ShapeMismatch(f"RevIN needs at least 2 time steps, got shape {x.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    std = x.data.std(axis=-1, keepdims=True)
    normed = F.div(F.sub(x, Tensor(mean)), Tensor(std + eps))
    if affine is not None:
        n_vars = x.shape[-2]
        if affine.scale.shape != (n_vars,):
            raise ShapeMismatch(f"RevIN affine expects {n_vars} variates, got {affine.scale.shape}")
        normed = F.add(F.mul(normed, F.reshape(affine.scale, (n_vars, 1))),
                       F.reshape(affine.shift, (n_vars, 1)))
    return normed, RevinState(mean=mean, std=std, eps=eps, affine=affine)


def revin_denormalize(y, state):
    """
    Invert revin_normalize on a forecast of any length.

    Args:
        y: Tensor[..., N, H]
        state: RevinState produced by revin_normalize on the matching input

    Returns:
        Tensor[..., N, H] in the original scale
    """
    if not isinstance(state, RevinState):
        raise StateMismatch("revin_denormalize needs the state returned by revin_normalize")
    y = as_tensor(y)
    if y.shape[:-1] != state.mean.shape[:-1]:
        raise StateMismatch(
            f"RevIN state covers {state.mean.shape[:-1]} but forecast has {y.shape[:-1]}")
    if state.affine is not None:
        n_vars = y.shape[-2]
        y = F.div(F.sub(y, F.reshape(state.affine.shift, (n_vars, 1))),
                  F.reshape(state.affine.scale, (n_vars, 1)))
    return F.add(F.mul(y, Tensor(state.std + state.eps)), Tensor(state.mean))
