"""
Differentiable operations on Tensors.

Every op computes its forward result with numpy, and when one of its inputs
is tracked records a node on that input's tape together with the context its
backward rule needs. Backward rules live in BACKWARD_RULES so they are looked
up at backward time.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from casa_forecaster.autograd.tensor import Tensor, as_tensor, register_rule, unbroadcast
from casa_forecaster.exceptions import InvalidArgument, InvalidKernel, ShapeMismatch

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _tape_of(*inputs):
    tape = None
    for item in inputs:
        if isinstance(item, Tensor) and item.tape is not None:
            if tape is not None and item.tape is not tape:
                raise InvalidArgument("Tensors recorded on different tapes cannot be combined")
            tape = item.tape
    return tape


def _result(op_kind, inputs, ctx, out):
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op_kind, inputs, ctx, out)


def _check_broadcast(a, b, op_kind):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        shape = None
    if shape != a.shape:
        raise ShapeMismatch(f"{op_kind}: cannot broadcast {b.shape} onto {a.shape}")


# Element-wise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    _check_broadcast(a, b, "add")
    return _result("add", (a, b), (a.shape, b.shape), a.data + b.data)


@register_rule("add")
def _add_backward(ctx, grad):
    a_shape, b_shape = ctx
    return unbroadcast(grad, a_shape), unbroadcast(grad, b_shape)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    _check_broadcast(a, b, "sub")
    return _result("sub", (a, b), (a.shape, b.shape), a.data - b.data)


@register_rule("sub")
def _sub_backward(ctx, grad):
    a_shape, b_shape = ctx
    return unbroadcast(grad, a_shape), unbroadcast(-grad, b_shape)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    _check_broadcast(a, b, "mul")
    return _result("mul", (a, b), (a.data, b.data), a.data * b.data)


@register_rule("mul")
def _mul_backward(ctx, grad):
    a, b = ctx
    return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    _check_broadcast(a, b, "div")
    return _result("div", (a, b), (a.data, b.data), a.data / b.data)


@register_rule("div")
def _div_backward(ctx, grad):
    a, b = ctx
    grad_a = grad / b
    grad_b = -grad * a / (b * b)
    return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)
    return _result("scale", (a,), factor, a.data * a.data.dtype.type(factor))


@register_rule("scale")
def _scale_backward(ctx, grad):
    return (grad * grad.dtype.type(ctx),)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result("relu", (a,), mask, np.where(mask, a.data, 0).astype(a.dtype))


@register_rule("relu")
def _relu_backward(ctx, grad):
    return (grad * ctx,)


def gelu(a):
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    return _result("gelu", (a,), (a.data, cdf), (a.data * cdf).astype(a.dtype))


@register_rule("gelu")
def _gelu_backward(ctx, grad):
    x, cdf = ctx
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (grad * (cdf + x * pdf),)


def elementwise(op_kind, a, b=None):
    """
    Dispatch an element-wise op by name.

    Args:
        op_kind: One of add, sub, mul, div, relu, gelu, scale
        a: Left operand
        b: Right operand (Tensor or scalar); the factor for `scale`

    Returns:
        Tensor with the shape of `a`
    """
    if op_kind == "relu":
        return relu(a)
    if op_kind == "gelu":
        return gelu(a)
    if op_kind == "scale":
        return scale(a, b)
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    if op_kind not in binary:
        raise InvalidArgument(f"Unknown element-wise op: {op_kind}")
    return binary[op_kind](a, b)


# Shape ops ------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _result("reshape", (a,), a.shape, out)


@register_rule("reshape")
def _reshape_backward(ctx, grad):
    return (grad.reshape(ctx),)


def swapaxes(a, axis1=-2, axis2=-1):
    a = as_tensor(a)
    out = np.swapaxes(a.data, axis1, axis2)
    return _result("swapaxes", (a,), (axis1, axis2), out)


@register_rule("swapaxes")
def _swapaxes_backward(ctx, grad):
    axis1, axis2 = ctx
    return (np.swapaxes(grad, axis1, axis2),)


# Reductions -----------------------------------------------------------------

def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _result("sum", (a,), (a.shape, axis, keepdims), out)


@register_rule("sum")
def _sum_backward(ctx, grad):
    shape, axis, keepdims = ctx
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad, shape),)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    total = sum(a, axis=axis, keepdims=keepdims)
    count = a.data.size // max(total.data.size, 1)
    return scale(total, 1.0 / count)


# Linear algebra -------------------------------------------------------------

def matmul(a, b):
    """
    Matrix product over the two trailing dimensions, leading dims broadcast.

    Args:
        a: Tensor[..., m, p]
        b: Tensor[..., p, n]

    Returns:
        Tensor[..., m, n]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    return _result("matmul", (a, b), (a.data, b.data), np.matmul(a.data, b.data))


@register_rule("matmul")
def _matmul_backward(ctx, grad):
    a, b = ctx
    grad_a = unbroadcast(np.matmul(grad, np.swapaxes(b, -1, -2)), a.shape)
    if b.ndim == 2:
        # Shared weight: fold every leading dim into the row axis
        grad_b = a.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
    else:
        grad_b = unbroadcast(np.matmul(np.swapaxes(a, -1, -2), grad), b.shape)
    return grad_a, grad_b


def conv1d(x, weight, bias=None):
    """
    1D convolution with zero "same" padding and stride 1.

    Args:
        x: Tensor[C_in, L] or Tensor[B, C_in, L]
        weight: Tensor[C_out, C_in, k], k odd
        bias: Optional Tensor[C_out]

    Returns:
        Tensor[C_out, L] or Tensor[B, C_out, L]
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 3:
        raise ShapeMismatch(f"conv1d: weight must be [C_out, C_in, k], got {weight.shape}")
    c_out, c_in, k = weight.shape
    if k % 2 == 0:
        raise InvalidKernel(f"conv1d: kernel size must be odd, got {k}")
    if x.ndim not in (2, 3) or x.shape[-2] != c_in:
        raise ShapeMismatch(f"conv1d: input {x.shape} does not have {c_in} channels")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeMismatch(f"conv1d: bias must be [{c_out}], got {bias.shape}")

    batched = x.ndim == 3
    data = x.data if batched else x.data[None]
    length = data.shape[-1]
    pad = (k - 1) // 2
    padded = np.pad(data, ((0, 0), (0, 0), (pad, pad)))
    windows = sliding_window_view(padded, k, axis=-1)  # [B, C_in, L, k]
    out = np.tensordot(windows, weight.data, axes=([1, 3], [1, 2]))  # [B, L, C_out]
    out = np.ascontiguousarray(out.transpose(0, 2, 1))
    if bias is not None:
        out = out + bias.data[None, :, None]
    if not batched:
        out = out[0]

    ctx = (windows, weight.data, batched, pad, length, bias is not None)
    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _result("conv1d", inputs, ctx, out)


@register_rule("conv1d")
def _conv1d_backward(ctx, grad):
    windows, weight, batched, pad, length, has_bias = ctx
    if not batched:
        grad = grad[None]
    k = weight.shape[-1]
    grad_weight = np.tensordot(grad, windows, axes=([0, 2], [0, 2]))  # [C_out, C_in, k]
    grad_windows = np.tensordot(grad, weight, axes=([1], [0]))  # [B, L, C_in, k]
    grad_padded = np.zeros(windows.shape[:2] + (length + 2 * pad,), dtype=grad.dtype)
    for j in range(k):
        grad_padded[:, :, j:j + length] += grad_windows[:, :, :, j].transpose(0, 2, 1)
    grad_x = grad_padded[:, :, pad:pad + length]
    if not batched:
        grad_x = grad_x[0]
    if has_bias:
        return grad_x, grad_weight, grad.sum(axis=(0, 2))
    return grad_x, grad_weight


# Normalizations -------------------------------------------------------------

def softmax(x, axis=-1):
    """Numerically stable softmax along one axis."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise InvalidArgument(f"softmax: axis {axis} is invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)
    return _result("softmax", (x,), (out, axis), out)


@register_rule("softmax")
def _softmax_backward(ctx, grad):
    out, axis = ctx
    inner = (grad * out).sum(axis=axis, keepdims=True)
    return (out * (grad - inner),)


def layer_norm(x, gamma, beta, eps=1e-5):
    """
    Standardize along the trailing dimension, then apply the gamma/beta affine.

    Args:
        x: Tensor[..., D]
        gamma: Tensor[D]
        beta: Tensor[D]
        eps: Variance floor

    Returns:
        Tensor[..., D]
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeMismatch(f"layer_norm: gamma/beta must be [{dim}]")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gamma.data + beta.data
    return _result("layer_norm", (x, gamma, beta), (normed, inv_std, gamma.data), out)


@register_rule("layer_norm")
def _layer_norm_backward(ctx, grad):
    normed, inv_std, gamma = ctx
    dim = normed.shape[-1]
    grad_normed = grad * gamma
    grad_x = inv_std / dim * (
        dim * grad_normed
        - grad_normed.sum(axis=-1, keepdims=True)
        - normed * (grad_normed * normed).sum(axis=-1, keepdims=True)
    )
    grad_gamma = unbroadcast(grad * normed, gamma.shape)
    grad_beta = unbroadcast(grad, gamma.shape)
    return grad_x, grad_gamma, grad_beta


# Losses ---------------------------------------------------------------------

def mse_loss(pred, target):
    """Mean squared error over every element."""
    diff = sub(pred, target)
    return mean(mul(diff, diff))
