"""
CASA forecaster: channel-wise embedding, M encoder blocks whose attention map
is the softmax of a 1D CNN-autoencoder score, and a per-token predictor.

The variates are the convolution channels and the kernel slides along the
hidden dimension, so every score row mixes information from every variate.
"""
import copy
from dataclasses import asdict, dataclass, fields
from typing import List, Optional

import numpy as np

from casa_forecaster.autograd import functional as F
from casa_forecaster.autograd.gradcheck import audit_gradients
from casa_forecaster.autograd.tensor import Tensor, as_tensor
from casa_forecaster.exceptions import ConfigError, ConfigMismatch, ShapeMismatch
from casa_forecaster.models.attention import BaselineAttnBlockParams, baseline_attention
from casa_forecaster.models.layers import (
    Conv1dParams,
    LayerNormParams,
    LinearParams,
    RevinAffine,
    dropout,
    init_conv1d,
    init_layer_norm,
    init_linear,
    layer_norm,
    linear_forward,
    revin_denormalize,
    revin_normalize,
)

SOFTMAX_AXES = {'hidden': -1, 'variate': -2}
ATTENTION_KINDS = ('casa', 'baseline')
DTYPES = {'float64': np.float64, 'float32': np.float32}


@dataclass
class ModelConfig:
    """Hyperparameters of the forecaster (N, L, H, D, M, k, ...)."""
    n_vars: int = 7
    seq_len: int = 96
    pred_len: int = 96
    d_model: int = 128
    n_blocks: int = 2
    kernel_size: int = 3
    hidden_channels: Optional[int] = None  # defaults to d_model
    ffn_dim: Optional[int] = None  # defaults to 2 * d_model
    score_depth: int = 1
    dropout: float = 0.1
    score_dropout: float = 0.0
    softmax_axis: str = 'hidden'
    use_revin: bool = True
    attention: str = 'casa'
    predictor_init: str = 'uniform'
    dtype: str = 'float64'

    def __post_init__(self):
        if self.hidden_channels is None:
            self.hidden_channels = self.d_model
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.d_model

    def validate(self):
        """Raise ConfigError on any inconsistent field."""
        for name in ('n_vars', 'seq_len', 'pred_len', 'd_model', 'n_blocks',
                     'kernel_size', 'hidden_channels', 'ffn_dim', 'score_depth'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"model.kernel_size must be odd, got {self.kernel_size}")
        for name in ('dropout', 'score_dropout'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"model.{name} must be in [0, 1)")
        if self.softmax_axis not in SOFTMAX_AXES:
            raise ConfigError(f"model.softmax_axis must be one of {sorted(SOFTMAX_AXES)}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}")
        if self.predictor_init not in ('uniform', 'zeros'):
            raise ConfigError("model.predictor_init must be 'uniform' or 'zeros'")
        if self.dtype not in DTYPES:
            raise ConfigError(f"model dtype must be one of {sorted(DTYPES)}")
        return self

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    @property
    def score_decoder_bias(self):
        # A per-row bias is a no-op under a softmax taken along that row
        return self.softmax_axis != 'hidden'

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in values.items() if key in known})


@dataclass
class CasaBlockParams:
    score_enc: List[Conv1dParams]
    score_dec: List[Conv1dParams]
    value_proj: LinearParams
    ffn_in: LinearParams
    ffn_out: LinearParams
    norm1: LayerNormParams
    norm2: LayerNormParams


@dataclass
class ModelParams:
    embed: LinearParams
    blocks: list
    predictor: LinearParams
    revin: Optional[RevinAffine] = None


# Parameter layout -----------------------------------------------------------

def _score_channels(config):
    """(c_in, c_out) of every encoder conv followed by every decoder conv."""
    c_hid, depth = config.hidden_channels, config.score_depth
    enc = [(config.n_vars if j == 0 else c_hid, c_hid) for j in range(depth)]
    dec = [(c_hid, config.n_vars if j == depth - 1 else c_hid) for j in range(depth)]
    return enc, dec


def init_params(config, rng):
    """
    Draw an initial parameter set.

    Args:
        config: Validated ModelConfig
        rng: numpy Generator

    Returns:
        Ordered dictionary {name: array}
    """
    dtype = config.np_dtype
    D, k = config.d_model, config.kernel_size
    params = {}

    def put(prefix, values):
        for key, value in values.items():
            params[f"{prefix}.{key}"] = value

    if config.use_revin:
        params['revin.scale'] = np.ones(config.n_vars, dtype=dtype)
        params['revin.shift'] = np.zeros(config.n_vars, dtype=dtype)
    put('embed', init_linear(rng, config.seq_len, D, dtype))

    enc, dec = _score_channels(config)
    for i in range(config.n_blocks):
        prefix = f"blocks.{i}"
        if config.attention == 'casa':
            for j, (c_in, c_out) in enumerate(enc):
                put(f"{prefix}.score_enc.{j}", init_conv1d(rng, c_in, c_out, k, dtype=dtype))
            for j, (c_in, c_out) in enumerate(dec):
                has_bias = j < len(dec) - 1 or config.score_decoder_bias
                put(f"{prefix}.score_dec.{j}", init_conv1d(rng, c_in, c_out, k, bias=has_bias, dtype=dtype))
            put(f"{prefix}.value", init_linear(rng, D, D, dtype))
        else:
            for name in ('query', 'key', 'value'):
                put(f"{prefix}.{name}", init_linear(rng, D, D, dtype))
        put(f"{prefix}.ffn_in", init_linear(rng, D, config.ffn_dim, dtype))
        put(f"{prefix}.ffn_out", init_linear(rng, config.ffn_dim, D, dtype))
        put(f"{prefix}.norm1", init_layer_norm(D, dtype))
        put(f"{prefix}.norm2", init_layer_norm(D, dtype))

    predictor = init_linear(rng, D, config.pred_len, dtype)
    if config.predictor_init == 'zeros':
        predictor['weight'] = np.zeros_like(predictor['weight'])
    put('predictor', predictor)
    return params


def build_tree(config, tensors):
    """
    Arrange a flat {name: Tensor} mapping into the typed parameter records.

    Args:
        config: ModelConfig the names were generated from
        tensors: Dictionary {name: Tensor}

    Returns:
        ModelParams
    """
    def lin(prefix):
        return LinearParams(weight=tensors[f"{prefix}.weight"], bias=tensors[f"{prefix}.bias"])

    def norm(prefix):
        return LayerNormParams(gamma=tensors[f"{prefix}.gamma"], beta=tensors[f"{prefix}.beta"])

    def conv(prefix):
        return Conv1dParams(weight=tensors[f"{prefix}.weight"], bias=tensors.get(f"{prefix}.bias"))

    blocks = []
    for i in range(config.n_blocks):
        prefix = f"blocks.{i}"
        if config.attention == 'casa':
            blocks.append(CasaBlockParams(
                score_enc=[conv(f"{prefix}.score_enc.{j}") for j in range(config.score_depth)],
                score_dec=[conv(f"{prefix}.score_dec.{j}") for j in range(config.score_depth)],
                value_proj=lin(f"{prefix}.value"),
                ffn_in=lin(f"{prefix}.ffn_in"),
                ffn_out=lin(f"{prefix}.ffn_out"),
                norm1=norm(f"{prefix}.norm1"),
                norm2=norm(f"{prefix}.norm2"),
            ))
        else:
            blocks.append(BaselineAttnBlockParams(
                q_proj=lin(f"{prefix}.query"),
                k_proj=lin(f"{prefix}.key"),
                v_proj=lin(f"{prefix}.value"),
                ffn_in=lin(f"{prefix}.ffn_in"),
                ffn_out=lin(f"{prefix}.ffn_out"),
                norm1=norm(f"{prefix}.norm1"),
                norm2=norm(f"{prefix}.norm2"),
            ))

    revin = None
    if config.use_revin:
        revin = RevinAffine(scale=tensors['revin.scale'], shift=tensors['revin.shift'])
    return ModelParams(embed=lin('embed'), blocks=blocks, predictor=lin('predictor'), revin=revin)


# Forward pieces -------------------------------------------------------------

def embed_series(embed, x):
    """
    Channel-wise tokenization: each variate's length-L history becomes one D-dim token.

    Args:
        embed: LinearParams [L -> D]
        x: Tensor[..., N, L]

    Returns:
        Tensor[..., N, D]
    """
    return linear_forward(embed, x)


def score_network(block, z, score_dropout=0.0, training=False, rng=None):
    """
    Inverted-bottleneck 1D CNN autoencoder approximating Q.K^T / sqrt(d_k).

    Args:
        block: CasaBlockParams
        z: Tensor[..., N, D]; variates are channels, the kernel slides along D
        score_dropout: Dropout rate applied after each encoder activation
        training: Enables dropout
        rng: Generator for dropout masks

    Returns:
        Tensor[..., N, D]
    """
    z = as_tensor(z)
    n_vars = block.score_enc[0].weight.shape[1]
    if z.ndim < 2 or z.shape[-2] != n_vars:
        raise ShapeMismatch(f"score network expects {n_vars} variate channels, got shape {z.shape}")
    h = z
    for conv in block.score_enc:
        h = F.gelu(F.conv1d(h, conv.weight, conv.bias))
        h = dropout(h, score_dropout, training, rng)
    for j, conv in enumerate(block.score_dec):
        h = F.conv1d(h, conv.weight, conv.bias)
        if j < len(block.score_dec) - 1:
            h = F.gelu(h)
    return h


def casa_attention(block, z, softmax_axis='hidden', score_dropout=0.0, training=False, rng=None):
    """
    softmax(Score(z)) gated element-wise onto the value projection.

    Args:
        block: CasaBlockParams
        z: Tensor[..., N, D]
        softmax_axis: 'hidden' normalizes each variate row over D, 'variate' each column over N

    Returns:
        Tensor[..., N, D]
    """
    gate = F.softmax(score_network(block, z, score_dropout, training, rng), axis=SOFTMAX_AXES[softmax_axis])
    return F.mul(gate, linear_forward(block.value_proj, z))


def _feed_forward(block, u, rate, training, rng):
    hidden = dropout(F.gelu(linear_forward(block.ffn_in, u)), rate, training, rng)
    return linear_forward(block.ffn_out, hidden)


def _encoder_layer(block, z, mixed, rate, training, rng):
    # Post-norm residual sublayers of the vanilla encoder
    u = layer_norm(block.norm1, F.add(z, dropout(mixed, rate, training, rng)))
    ffn = _feed_forward(block, u, rate, training, rng)
    return layer_norm(block.norm2, F.add(u, dropout(ffn, rate, training, rng)))


def casa_block(block, z, config=None, training=False, rng=None):
    """
    Encoder layer with the attention map replaced by CASA.

    Args:
        block: CasaBlockParams
        z: Tensor[..., N, D]
        config: ModelConfig supplying dropout rates and the softmax axis
        training: Enables dropout
        rng: Generator for dropout masks

    Returns:
        Tensor[..., N, D]
    """
    config = config or ModelConfig()
    mixed = casa_attention(block, z, config.softmax_axis, config.score_dropout, training, rng)
    return _encoder_layer(block, z, mixed, config.dropout, training, rng)


def baseline_block(block, z, config=None, training=False, rng=None):
    """Encoder layer with conventional self-attention across variate tokens."""
    config = config or ModelConfig()
    return _encoder_layer(block, z, baseline_attention(block, z), config.dropout, training, rng)


def mixing_sublayer(config, block, z):
    """The token-mixing op of one block (CASA or baseline attention), without dropout."""
    if config.attention == 'casa':
        return casa_attention(block, z, config.softmax_axis)
    return baseline_attention(block, z)


# Model ----------------------------------------------------------------------

class CasaModel:
    """
    Full forecaster: RevIN -> embedding -> M blocks -> predictor -> RevIN^-1.

    Args:
        config: ModelConfig
        params: Optional {name: array}; drawn from `seed` when omitted
        seed: Seed for the initial parameter draw
    """

    def __init__(self, config, params=None, seed=0):
        self.config = config.validate()
        if params is None:
            params = init_params(config, np.random.default_rng(seed))
        self.params = {name: np.asarray(value, dtype=config.np_dtype) for name, value in params.items()}

    def parameters(self):
        return self.params

    def copy(self):
        return CasaModel(copy.deepcopy(self.config), {k: v.copy() for k, v in self.params.items()})

    def load_params(self, params):
        """Replace parameters after checking every name and shape."""
        if set(params) != set(self.params):
            missing = sorted(set(self.params) ^ set(params))
            raise ShapeMismatch(f"parameter names differ: {missing[:5]}")
        for name, value in params.items():
            if np.shape(value) != self.params[name].shape:
                raise ShapeMismatch(
                    f"parameter {name}: expected {self.params[name].shape}, got {np.shape(value)}")
        self.params = {name: np.asarray(params[name], dtype=self.config.np_dtype) for name in self.params}

    def bind(self, tape=None):
        """
        Wrap parameters as Tensors, watched on `tape` when one is given.

        Returns:
            Tuple (ModelParams, {name: Tensor})
        """
        if tape is None:
            tensors = {name: Tensor(value) for name, value in self.params.items()}
        else:
            tensors = {name: tape.watch(value) for name, value in self.params.items()}
        return build_tree(self.config, tensors), tensors

    def forward(self, x, bound=None, training=False, rng=None):
        return model_forward(self, x, bound=bound, training=training, rng=rng)

    def predict(self, x):
        """Inference forward returning a numpy array."""
        return self.forward(x).numpy()


def model_forward(model, x, bound=None, training=False, rng=None):
    """
    Forecast H steps for one instance or a batch.

    Args:
        model: CasaModel
        x: Tensor or array [N, L] or [B, N, L]
        bound: ModelParams from model.bind(); constants when omitted
        training: Enables dropout
        rng: Generator for dropout masks (required when training with dropout)

    Returns:
        Tensor[N, H] or Tensor[B, N, H]
    """
    config = model.config
    x = as_tensor(x, dtype=config.np_dtype)
    if x.ndim not in (2, 3) or x.shape[-2:] != (config.n_vars, config.seq_len):
        raise ConfigMismatch(
            f"input shape {x.shape} does not match (N, L) = ({config.n_vars}, {config.seq_len})")
    if x.dtype != config.np_dtype:
        x = Tensor(x.data.astype(config.np_dtype))
    if bound is None:
        bound, _ = model.bind()

    state = None
    if config.use_revin:
        x, state = revin_normalize(x, affine=bound.revin)

    z = embed_series(bound.embed, x)
    block_fn = casa_block if config.attention == 'casa' else baseline_block
    for block in bound.blocks:
        z = block_fn(block, z, config, training, rng)
    y = linear_forward(bound.predictor, z)

    if state is not None:
        y = revin_denormalize(y, state)
    return y


# Accounting -----------------------------------------------------------------

def count_parameters(config):
    """
    Exact parameter counts per stage, derived from the config alone.

    Returns:
        Dictionary with revin, embed, block (one block), blocks, predictor, total
    """
    config = copy.deepcopy(config).validate()
    D, k, N = config.d_model, config.kernel_size, config.n_vars
    counts = {'revin': 2 * N if config.use_revin else 0, 'embed': config.seq_len * D + D}

    block = (D * config.ffn_dim + config.ffn_dim) + (config.ffn_dim * D + D) + 4 * D
    if config.attention == 'casa':
        enc, dec = _score_channels(config)
        block += sum(c_in * c_out * k + c_out for c_in, c_out in enc)
        block += sum(c_in * c_out * k for c_in, c_out in dec)
        block += sum(c_out for c_in, c_out in dec[:-1])
        if config.score_decoder_bias:
            block += dec[-1][1]
        block += D * D + D
    else:
        block += 3 * (D * D + D)

    counts['block'] = block
    counts['blocks'] = block * config.n_blocks
    counts['predictor'] = D * config.pred_len + config.pred_len
    counts['total'] = counts['revin'] + counts['embed'] + counts['blocks'] + counts['predictor']
    return counts


def estimate_flops(config, batch=1):
    """
    Multiply-accumulate counts per stage of one forward pass.

    Returns:
        Dictionary {stage: MACs} plus 'total'
    """
    D, N, k = config.d_model, config.n_vars, config.kernel_size
    L, H = config.seq_len, config.pred_len
    hidden = config.hidden_channels or D
    ffn = config.ffn_dim or 2 * D
    depth = config.score_depth
    stages = {
        'revin': 2 * N * L + 2 * N * H,
        'embed': N * L * D,
        'ffn': config.n_blocks * 2 * N * D * ffn,
        'predictor': N * D * H,
    }
    if config.attention == 'casa':
        per_block = 2 * N * hidden * k * D + 2 * (depth - 1) * hidden * hidden * k * D + N * D * D
        stages['mixing'] = config.n_blocks * per_block
    else:
        stages['mixing'] = config.n_blocks * (3 * N * D * D + 2 * N * N * D)
    stages = {key: value * batch for key, value in stages.items()}
    stages['total'] = sum(stages.values())
    return stages


def gradient_audit(config, batch=2, seed=0, eps=1e-5, logger=None):
    """
    Finite-difference audit of every parameter of a freshly drawn model.

    Dropout is disabled and the audit runs in 64-bit.

    Args:
        config: ModelConfig (keep it tiny: every scalar costs two forwards)
        batch: Instances in the audited loss
        seed: Seed for weights, inputs and targets
        eps: Central-difference step
        logger: Logger instance for logging

    Returns:
        List of (name, max relative error, max |analytic|)
    """
    config = ModelConfig.from_dict({**config.to_dict(), 'dropout': 0.0, 'score_dropout': 0.0,
                                    'dtype': 'float64'})
    model = CasaModel(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((batch, config.n_vars, config.seq_len))
    target = Tensor(rng.standard_normal((batch, config.n_vars, config.pred_len)))

    def loss_fn(tensors):
        return F.mse_loss(model_forward(model, x, bound=build_tree(config, tensors)), target)

    return audit_gradients(loss_fn, model.params, eps=eps, logger=logger)
