"""
Conventional channel-wise self-attention, kept as the comparison baseline.
"""
import math
from dataclasses import dataclass

from casa_forecaster.autograd import functional as F
from casa_forecaster.models.layers import LayerNormParams, LinearParams, linear_forward


@dataclass
class BaselineAttnBlockParams:
    q_proj: LinearParams
    k_proj: LinearParams
    v_proj: LinearParams
    ffn_in: LinearParams
    ffn_out: LinearParams
    norm1: LayerNormParams
    norm2: LayerNormParams


def project_qkv(block, z):
    """Affine query/key/value embeddings of the tokens (one row per variate)."""
    return (linear_forward(block.q_proj, z),
            linear_forward(block.k_proj, z),
            linear_forward(block.v_proj, z))


def attention_map(q, k):
    """softmax(Q.K^T / sqrt(d_k)) over the key axis, d_k = D (single head)."""
    scores = F.scale(F.matmul(q, F.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    return F.softmax(scores, axis=-1)


def baseline_attention(block, z):
    """
    Scaled dot-product self-attention across the N tokens.

    Args:
        block: BaselineAttnBlockParams
        z: Tensor[..., N, D]

    Returns:
        Tensor[..., N, D]
    """
    q, k, v = project_qkv(block, z)
    return F.matmul(attention_map(q, k), v)
