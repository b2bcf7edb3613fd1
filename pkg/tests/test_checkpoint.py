"""
Tests for the binary checkpoint format.
"""
import logging
import struct

import numpy as np
import pytest

from casa_forecaster.exceptions import (
    BadMagic,
    CheckpointError,
    CheckpointParseError,
    ShapeMismatch,
    VersionMismatch,
)
from casa_forecaster.models import CasaModel, ModelConfig
from casa_forecaster.training import OptimState, adam_step, load_checkpoint, round_to_storage, save_checkpoint
from casa_forecaster.training.checkpoint import parse_checkpoint, serialize_checkpoint


def float32_model(n_vars=3, seed=0, **overrides):
    values = dict(n_vars=n_vars, seq_len=8, pred_len=4, d_model=8, n_blocks=1, dtype='float32')
    values.update(overrides)
    return CasaModel(ModelConfig(**values), seed=seed)


def test_round_trip_is_bit_exact(tmp_path):
    """Test that a reloaded float32 model gives bit-identical forecasts."""
    model = float32_model()
    path = save_checkpoint(str(tmp_path / "best.ckpt"), model)
    restored = load_checkpoint(path).to_model()
    assert restored.config == model.config
    for name, value in model.params.items():
        assert np.array_equal(restored.params[name], value)
    x = np.random.default_rng(0).standard_normal((2, 3, 8)).astype(np.float32)
    assert np.array_equal(restored.predict(x), model.predict(x))


def test_rounded_64_bit_model_round_trips_exactly(tmp_path, caplog):
    """Test that a 64-bit model rounded to storage precision reloads bit-exactly and without a warning."""
    model = CasaModel(ModelConfig(n_vars=3, seq_len=8, pred_len=4, d_model=8, n_blocks=1), seed=0)
    assert model.config.dtype == 'float64'
    round_to_storage(model)
    assert all(value.dtype == np.float64 for value in model.params.values())
    with caplog.at_level(logging.WARNING, logger="CASA-Forecaster"):
        path = save_checkpoint(str(tmp_path / "best.ckpt"), model, logger=logging.getLogger("CASA-Forecaster"))
    assert 'round_to_storage' not in caplog.text
    restored = load_checkpoint(path).to_model()
    x = np.random.default_rng(0).standard_normal((2, 3, 8))
    assert np.array_equal(restored.predict(x), model.predict(x))


def test_unrounded_64_bit_model_warns(tmp_path, caplog):
    """Test that saving parameters that do not fit 32 bits is reported."""
    model = CasaModel(ModelConfig(n_vars=3, seq_len=8, pred_len=4, d_model=8, n_blocks=1), seed=0)
    with caplog.at_level(logging.WARNING, logger="CASA-Forecaster"):
        save_checkpoint(str(tmp_path / "best.ckpt"), model, logger=logging.getLogger("CASA-Forecaster"))
    assert 'round_to_storage' in caplog.text


def test_identical_inputs_give_identical_bytes():
    """Test that serialization is deterministic and ignores wall-clock fields."""
    model = float32_model(seed=1)
    log_a = [{'epoch': 1, 'train_mse': 0.5, 'val_mse': 0.6, 'lr': 1e-3, 'seconds': 1.2}]
    log_b = [{'epoch': 1, 'train_mse': 0.5, 'val_mse': 0.6, 'lr': 1e-3, 'seconds': 9.9}]
    assert serialize_checkpoint(model, train_log=log_a) == serialize_checkpoint(model, train_log=log_b)
    assert parse_checkpoint(serialize_checkpoint(model, train_log=log_a)).train_log == \
           [{'epoch': 1, 'train_mse': 0.5, 'val_mse': 0.6, 'lr': 1e-3}]


def test_optimizer_state_round_trip():
    """Test that Adam moments and hyperparameters survive serialization."""
    model = float32_model(seed=2)
    grads = {name: np.full(value.shape, 0.25) for name, value in model.params.items()}
    _, state = adam_step(model.params, grads, OptimState(lr=3e-4))
    checkpoint = parse_checkpoint(serialize_checkpoint(model, optim=state))
    assert checkpoint.optim.step == 1
    assert checkpoint.optim.lr == 3e-4
    for name in state.m:
        assert np.allclose(checkpoint.optim.m[name], state.m[name], rtol=1e-6)
        assert np.allclose(checkpoint.optim.v[name], state.v[name], rtol=1e-6)


def test_corrupted_payloads_raise():
    """Test bad magic, unsupported versions, truncation and trailing bytes."""
    payload = serialize_checkpoint(float32_model(seed=3))
    with pytest.raises(BadMagic):
        parse_checkpoint(b"NOPE" + payload[4:])
    with pytest.raises(BadMagic):
        parse_checkpoint(b"CA")
    with pytest.raises(VersionMismatch):
        parse_checkpoint(payload[:4] + struct.pack('<I', 2) + payload[8:])
    for cut in (6, 20, len(payload) // 2, len(payload) - 1):
        with pytest.raises(CheckpointError):
            parse_checkpoint(payload[:cut])
    with pytest.raises(CheckpointParseError):
        parse_checkpoint(payload + b"\x00")


def test_missing_file_raises(tmp_path):
    """Test that a missing checkpoint path raises CheckpointError."""
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


def test_variate_count_mismatch(tmp_path):
    """Test that a 7-variate checkpoint cannot be loaded into a 21-variate config."""
    path = save_checkpoint(str(tmp_path / "ett.ckpt"), float32_model(n_vars=7))
    load_checkpoint(path, expected_config=ModelConfig(n_vars=7, seq_len=8, pred_len=4, d_model=8, n_blocks=1))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, expected_config=ModelConfig(n_vars=21, seq_len=8, pred_len=4, d_model=8, n_blocks=1))


def test_baseline_and_casa_names_differ(tmp_path):
    """Test that a baseline checkpoint does not fit a CASA config."""
    path = save_checkpoint(str(tmp_path / "base.ckpt"), float32_model(attention='baseline'))
    assert load_checkpoint(path).config.attention == 'baseline'
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, expected_config=ModelConfig(n_vars=3, seq_len=8, pred_len=4, d_model=8, n_blocks=1))
