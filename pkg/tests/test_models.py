"""
Tests for the CASA model: score network, attention, blocks and the full forecaster.
"""
import numpy as np
import pytest
from scipy.stats import norm

from casa_forecaster.autograd import Tape, Tensor
from casa_forecaster.autograd import functional as F
from casa_forecaster.exceptions import ConfigError, ConfigMismatch, ShapeMismatch
from casa_forecaster.models import (
    CasaModel,
    ModelConfig,
    baseline_attention,
    casa_attention,
    casa_block,
    count_parameters,
    embed_series,
    estimate_flops,
    model_forward,
    score_network,
)
from casa_forecaster.models.casa import CasaBlockParams, gradient_audit, init_params
from casa_forecaster.models.layers import Conv1dParams, LinearParams
from casa_forecaster.models.properties import row_perturbation_diffs, variate_independence_check


def tiny_config(**overrides):
    values = dict(n_vars=3, seq_len=8, pred_len=4, d_model=8, n_blocks=1, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values)


def conv_block(enc_weight, dec_weight, value_proj=None, enc_bias=None):
    return CasaBlockParams(
        score_enc=[Conv1dParams(Tensor(enc_weight), None if enc_bias is None else Tensor(enc_bias))],
        score_dec=[Conv1dParams(Tensor(dec_weight), None)],
        value_proj=value_proj, ffn_in=None, ffn_out=None, norm1=None, norm2=None,
    )


def test_config_defaults_and_validation():
    """Test derived widths and rejection of invalid hyperparameters."""
    config = ModelConfig(d_model=16)
    assert config.hidden_channels == 16 and config.ffn_dim == 32
    with pytest.raises(ConfigError):
        ModelConfig(kernel_size=4).validate()
    with pytest.raises(ConfigError):
        ModelConfig(softmax_axis='time').validate()
    with pytest.raises(ConfigError):
        ModelConfig(attention='full').validate()
    with pytest.raises(ConfigError):
        ModelConfig(n_vars=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0).validate()


def test_embedding_is_per_variate():
    """Test that each variate is embedded independently of the others."""
    model = CasaModel(tiny_config(n_vars=4), seed=1)
    bound, _ = model.bind()
    x = np.random.default_rng(0).standard_normal((4, 8))
    z = embed_series(bound.embed, Tensor(x)).numpy()
    assert z.shape == (4, 8)
    single = embed_series(bound.embed, Tensor(x[2:3])).numpy()
    assert np.array_equal(z[2], single[0])
    assert variate_independence_check(bound.embed, x)


def test_score_network_zero_weights():
    """Test that all-zero conv weights and biases give an all-zero score."""
    block = conv_block(np.zeros((8, 4, 3)), np.zeros((4, 8, 3)), enc_bias=np.zeros(8))
    out = score_network(block, Tensor(np.random.default_rng(1).standard_normal((4, 8))))
    assert out.shape == (4, 8)
    assert np.all(out.numpy() == 0.0)


def test_score_network_column_sum_example():
    """Test k=1, one hidden channel and unit weights: every row is GELU of the column sums."""
    rng = np.random.default_rng(2)
    z = rng.standard_normal((3, 5))
    block = conv_block(np.ones((1, 3, 1)), np.ones((3, 1, 1)))
    out = score_network(block, Tensor(z)).numpy()
    column = z.sum(axis=0)
    expected = column * norm.cdf(column)
    for row in out:
        assert np.allclose(row, expected, atol=1e-12)


def test_score_network_mixes_variates():
    """Test that perturbing one variate changes the score of another."""
    model = CasaModel(tiny_config(n_vars=4), seed=3)
    bound, _ = model.bind()
    block = bound.blocks[0]
    z = np.random.default_rng(3).standard_normal((4, 8))
    diffs = row_perturbation_diffs(lambda t: score_network(block, t), z, row=3)
    assert diffs[0] > 1e-8
    with pytest.raises(ShapeMismatch):
        score_network(block, Tensor(np.zeros((5, 8))))


def test_casa_attention_uniform_gate():
    """Test that a zero score gives the value projection divided by D."""
    rng = np.random.default_rng(4)
    value = LinearParams(Tensor(rng.standard_normal((8, 8))), Tensor(rng.standard_normal(8)))
    block = conv_block(np.zeros((8, 4, 3)), np.zeros((4, 8, 3)), value_proj=value)
    z = Tensor(rng.standard_normal((4, 8)))
    out = casa_attention(block, z).numpy()
    v = (z.numpy() @ value.weight.numpy()) + value.bias.numpy()
    assert np.allclose(out, v / 8, atol=1e-12)


def test_casa_attention_bounded_by_values():
    """Test that the softmax gate never amplifies a value entry."""
    model = CasaModel(tiny_config(n_vars=5, d_model=16), seed=5)
    bound, _ = model.bind()
    block = bound.blocks[0]
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = Tensor(rng.standard_normal((2, 5, 16)) * 3)
        out = casa_attention(block, z).numpy()
        values = (z.numpy() @ block.value_proj.weight.numpy()) + block.value_proj.bias.numpy()
        assert np.all(np.abs(out) <= np.abs(values) + 1e-15)
        gate = F.softmax(score_network(block, z), axis=-1).numpy()
        assert np.max(np.abs(gate.sum(axis=-1) - 1.0)) < 1e-12


def test_casa_attention_variate_axis():
    """Test that the variate softmax normalizes each hidden column over N."""
    config = tiny_config(n_vars=4, softmax_axis='variate')
    model = CasaModel(config, seed=6)
    block = model.bind()[0].blocks[0]
    z = Tensor(np.random.default_rng(6).standard_normal((4, 8)))
    gate = F.softmax(score_network(block, z), axis=-2).numpy()
    assert np.max(np.abs(gate.sum(axis=0) - 1.0)) < 1e-12
    assert casa_attention(block, z, softmax_axis='variate').shape == (4, 8)


@pytest.mark.parametrize("n_vars", [1, 7, 21])
@pytest.mark.parametrize("d_model", [8, 64])
def test_casa_block_preserves_shape(n_vars, d_model):
    """Test that a block maps [N, D] and [B, N, D] to the same shape."""
    config = ModelConfig(n_vars=n_vars, seq_len=8, pred_len=4, d_model=d_model, n_blocks=1)
    block = CasaModel(config, seed=7).bind()[0].blocks[0]
    rng = np.random.default_rng(7)
    assert casa_block(block, Tensor(rng.standard_normal((n_vars, d_model))), config).shape == (n_vars, d_model)
    batch = Tensor(rng.standard_normal((3, n_vars, d_model)))
    assert casa_block(block, batch, config).shape == (3, n_vars, d_model)


def test_baseline_attention_single_variate():
    """Test that one token attends only to itself."""
    config = tiny_config(n_vars=1, attention='baseline')
    block = CasaModel(config, seed=8).bind()[0].blocks[0]
    z = Tensor(np.random.default_rng(8).standard_normal((1, 8)))
    v = (z.numpy() @ block.v_proj.weight.numpy()) + block.v_proj.bias.numpy()
    assert np.allclose(baseline_attention(block, z).numpy(), v, atol=1e-14)


def test_model_forward_shapes_and_determinism():
    """Test the forecast shape and that equal seeds give identical outputs."""
    config = ModelConfig(n_vars=7, seq_len=96, pred_len=96, d_model=16, n_blocks=2)
    x = np.random.default_rng(9).standard_normal((7, 96))
    first = CasaModel(config, seed=9).predict(x)
    second = CasaModel(config, seed=9).predict(x)
    assert first.shape == (7, 96)
    assert np.array_equal(first, second)
    batch = CasaModel(config, seed=9).predict(np.stack([x, x + 1]))
    assert batch.shape == (2, 7, 96)
    assert np.allclose(batch[0], first, atol=1e-12)


def test_model_forward_rejects_wrong_shape():
    """Test that an input of the wrong (N, L) raises ConfigMismatch."""
    model = CasaModel(tiny_config(), seed=0)
    with pytest.raises(ConfigMismatch):
        model.predict(np.zeros((4, 8)))
    with pytest.raises(ConfigMismatch):
        model.predict(np.zeros((3, 9)))


def test_zero_predictor_forecasts_window_mean():
    """Test that a zero predictor with RevIN forecasts each variate's input mean."""
    config = tiny_config(n_blocks=3, predictor_init='zeros')
    x = np.random.default_rng(10).standard_normal((2, 3, 8)) * 2 + 5
    out = CasaModel(config, seed=10).predict(x)
    expected = np.repeat(x.mean(axis=-1, keepdims=True), 4, axis=-1)
    assert np.allclose(out, expected, atol=1e-12)


def test_gradients_reach_every_parameter():
    """Test that one backward pass gives every parameter a nonzero gradient."""
    config = tiny_config(n_blocks=2)
    model = CasaModel(config, seed=11)
    rng = np.random.default_rng(11)
    tape = Tape()
    bound, tensors = model.bind(tape)
    pred = model_forward(model, rng.standard_normal((2, 3, 8)), bound=bound)
    tape.backward(F.mse_loss(pred, Tensor(rng.standard_normal((2, 3, 4)))))
    for name, tensor in tensors.items():
        assert np.max(np.abs(tape.grad(tensor))) > 0, name


@pytest.mark.parametrize("overrides", [
    {},
    {'attention': 'baseline'},
    {'softmax_axis': 'variate'},
    {'score_depth': 2, 'hidden_channels': 6},
    {'use_revin': False, 'n_blocks': 2},
    {'predictor_init': 'zeros', 'pred_len': 2},
])
def test_count_parameters_matches_initialization(overrides):
    """Test the analytic counts against the arrays actually drawn."""
    config = tiny_config(**overrides)
    params = init_params(config, np.random.default_rng(0))
    counts = count_parameters(config)
    assert counts['total'] == sum(value.size for value in params.values())
    assert counts['predictor'] == params['predictor.weight'].size + params['predictor.bias'].size


def test_block_parameters_independent_of_horizon():
    """Test that block counts depend on N, D, k and not on L or H."""
    short = count_parameters(ModelConfig(seq_len=96, pred_len=96, d_model=32))
    long = count_parameters(ModelConfig(seq_len=336, pred_len=720, d_model=32))
    assert short['block'] == long['block']
    assert short['embed'] != long['embed']


def test_mixing_cost_scaling():
    """Test that CASA mixing cost is linear in N and the baseline's is superlinear."""
    def mixing(attention, n_vars):
        return estimate_flops(ModelConfig(n_vars=n_vars, d_model=32, attention=attention))['mixing']

    assert mixing('casa', 512) == 2 * mixing('casa', 256)
    assert mixing('baseline', 512) > 2 * mixing('baseline', 256)
    assert estimate_flops(ModelConfig(), batch=4)['total'] == 4 * estimate_flops(ModelConfig())['total']


@pytest.mark.parametrize("overrides", [
    {},
    {'attention': 'baseline'},
    {'softmax_axis': 'variate'},
    {'score_depth': 2},
])
def test_gradient_audit_tiny_model(overrides):
    """Test every parameter of a tiny model against central differences."""
    results = gradient_audit(tiny_config(**overrides), batch=2, seed=0)
    assert results
    worst = max(error for _, error, _ in results)
    assert worst < 1e-4
