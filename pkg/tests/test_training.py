"""
Tests for the optimizer, the metrics and the training loop.
"""
import numpy as np
import pytest

from casa_forecaster.data import SplitSpec, fit_apply_scaler, make_windows, resolve_split, synthetic_table
from casa_forecaster.exceptions import ConfigError, DivergenceDetected, NonFiniteGradient, ShapeMismatch
from casa_forecaster.models import CasaModel, ModelConfig
from casa_forecaster.training import Adam, EarlyStopping, OptimState, TrainConfig, adam_step, evaluate, train
from casa_forecaster.training.metrics import MetricAccumulator, mae, mse
from casa_forecaster.training.optim import PlateauScheduler
from casa_forecaster.training.trainer import seed_streams


def prepared(n_steps=240, n_vars=2, seed=0, kind='sine', L=8, H=4):
    table = synthetic_table(n_steps, n_vars, seed=seed, kind=kind)
    ranges = resolve_split(table, SplitSpec(), L, H)
    _, scaled = fit_apply_scaler(table, ranges.train)
    return scaled, ranges


def small_model(n_vars=2, L=8, H=4, seed=0, **overrides):
    values = dict(n_vars=n_vars, seq_len=L, pred_len=H, d_model=8, n_blocks=1, dropout=0.0)
    values.update(overrides)
    return CasaModel(ModelConfig(**values), seed=seed)


def test_adam_zero_gradient_keeps_parameters():
    """Test that a zero gradient leaves parameters unchanged and advances the step."""
    params = {'w': np.array([1.0, -2.0])}
    updated, state = adam_step(params, {'w': np.zeros(2)}, OptimState(lr=0.1))
    assert np.array_equal(updated['w'], params['w'])
    assert state.step == 1


def test_adam_first_step_magnitude():
    """Test that the bias-corrected first step has magnitude lr."""
    updated, _ = adam_step({'w': np.array([1.0])}, {'w': np.array([5.0])}, OptimState(lr=0.1))
    assert abs((1.0 - updated['w'][0]) - 0.1) < 1e-6


def test_adam_minimizes_quadratic():
    """Test monotone early descent and convergence on w^2."""
    optimizer = Adam(lr=0.1)
    params = {'w': np.array([1.0])}
    losses = []
    for _ in range(500):
        losses.append(float(params['w'][0] ** 2))
        params = optimizer.step(params, {'w': 2.0 * params['w']})
    assert all(later < earlier for earlier, later in zip(losses[:5], losses[1:6]))
    assert abs(params['w'][0]) < 1e-3
    assert optimizer.state.step == 500


def test_adam_keeps_parameter_dtype():
    """Test that float32 parameters stay float32."""
    params = {'w': np.ones(3, dtype=np.float32)}
    updated, _ = adam_step(params, {'w': np.ones(3)}, OptimState())
    assert updated['w'].dtype == np.float32


def test_adam_rejects_non_finite_gradient():
    """Test that NaN or inf gradients raise and name the parameter."""
    params = {'a': np.ones(2), 'b': np.ones(2)}
    with pytest.raises(NonFiniteGradient) as excinfo:
        adam_step(params, {'a': np.ones(2), 'b': np.array([1.0, np.nan])}, OptimState())
    assert excinfo.value.names == ['b']


def test_early_stopping():
    """Test the patience counter, including patience 0."""
    stopper = EarlyStopping(patience=0)
    assert stopper(1.0)
    assert stopper.early_stop

    stopper = EarlyStopping(patience=2)
    assert stopper(1.0) and stopper(0.9)
    assert not stopper(0.95) and not stopper.early_stop
    assert not stopper(0.95) and stopper.early_stop


def test_plateau_scheduler_halves_learning_rate():
    """Test that the rate halves after three epochs without improvement."""
    optimizer = Adam(lr=1.0)
    scheduler = PlateauScheduler(optimizer, factor=0.5, patience=3)
    assert scheduler.step(1.0) == 1.0
    assert scheduler.step(1.0) == 1.0
    assert scheduler.step(1.0) == 1.0
    assert scheduler.step(1.0) == 0.5


def test_metrics_examples():
    """Test perfect and offset forecasts."""
    target = np.arange(12.0).reshape(2, 3, 2)
    assert mse(target, target) == 0.0 and mae(target, target) == 0.0
    assert mse(target + 1, target) == 1.0 and mae(target - 1, target) == 1.0
    with pytest.raises(ShapeMismatch):
        mse(target, target[0])


def test_metric_accumulator_matches_brute_force():
    """Test streamed metrics against an explicit loop over every element."""
    rng = np.random.default_rng(0)
    preds = rng.standard_normal((7, 3, 5))
    targets = rng.standard_normal((7, 3, 5))
    accumulator = MetricAccumulator()
    for start in range(0, 7, 3):
        accumulator.update(preds[start:start + 3], targets[start:start + 3])

    squared = absolute = 0.0
    for b in range(7):
        for n in range(3):
            for h in range(5):
                diff = preds[b, n, h] - targets[b, n, h]
                squared += diff * diff
                absolute += abs(diff)
    assert abs(accumulator.mse - squared / 105) < 1e-12
    assert abs(accumulator.mae - absolute / 105) < 1e-12


def test_train_config_validation():
    """Test rejection of inconsistent training settings."""
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(epochs=5, patience=6).validate()
    with pytest.raises(ConfigError):
        TrainConfig(loss='mae').validate()
    assert TrainConfig.from_dict({'epochs': 3, 'unknown': 1}).epochs == 3


def test_seed_streams_are_reproducible_and_distinct():
    """Test that equal seeds give equal streams and the three streams differ."""
    first = [rng.random(3) for rng in seed_streams(5)]
    second = [rng.random(3) for rng in seed_streams(5)]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
    assert not np.array_equal(first[0], first[1])


def test_patience_zero_runs_one_epoch():
    """Test that patience 0 stops after exactly one epoch."""
    scaled, ranges = prepared()
    result = train(small_model(), scaled, ranges, TrainConfig(epochs=5, patience=0, batch_size=16))
    assert len(result.log) == 1
    assert result.best_epoch == 1


def test_training_is_deterministic():
    """Test that two runs with the same seed produce identical logs and parameters."""
    scaled, ranges = prepared()
    cfg = TrainConfig(epochs=3, patience=3, batch_size=16, seed=7)
    model_a, model_b = small_model(seed=1, dropout=0.1), small_model(seed=1, dropout=0.1)
    first = train(model_a, scaled, ranges, cfg)
    second = train(model_b, scaled, ranges, cfg)
    assert [(e['train_mse'], e['val_mse']) for e in first.log] == \
           [(e['train_mse'], e['val_mse']) for e in second.log]
    for name in model_a.params:
        assert np.array_equal(model_a.params[name], model_b.params[name])


def test_training_restores_best_parameters():
    """Test that the model ends on the best-val parameters and the log is complete."""
    scaled, ranges = prepared()
    model = small_model()
    result = train(model, scaled, ranges, TrainConfig(epochs=4, patience=4, batch_size=16))
    assert set(result.log[0]) == {'epoch', 'train_mse', 'val_mse', 'lr', 'seconds'}
    assert result.best_val_mse == min(entry['val_mse'] for entry in result.log)
    for name, value in result.best_params.items():
        assert np.array_equal(model.params[name], value)
    again = evaluate(model, scaled, ranges.val, batch_size=16, keep_predictions=False).mse
    assert abs(again - result.best_val_mse) < 1e-12
    assert result.optim_state.step > 0


def test_optimizer_state_is_taken_at_the_best_epoch():
    """Test that the returned Adam state belongs to the best epoch, not the last one."""
    scaled, ranges = prepared()
    result = train(small_model(), scaled, ranges, TrainConfig(epochs=4, patience=4, batch_size=16))
    n_batches = len(list(make_windows(scaled, ranges.train, 8, 4, batch_size=16)))
    assert result.optim_state.step == result.best_epoch * n_batches


def test_resumed_training_continues_the_step_counter():
    """Test that training from a stored Adam state keeps counting its steps."""
    scaled, ranges = prepared()
    model = small_model()
    first = train(model, scaled, ranges, TrainConfig(epochs=2, patience=2, batch_size=16))
    before = first.optim_state.step
    resumed = train(model, scaled, ranges, TrainConfig(epochs=1, patience=1, batch_size=16),
                    optim_state=first.optim_state)
    n_batches = len(list(make_windows(scaled, ranges.train, 8, 4, batch_size=16)))
    assert resumed.optim_state.step == before + n_batches


def test_training_learns_sinusoids():
    """Test that a small model learns phase-shifted sinusoids."""
    scaled, ranges = prepared(n_steps=600, n_vars=2, L=16, H=16)
    model = CasaModel(ModelConfig(n_vars=2, seq_len=16, pred_len=16, d_model=16, n_blocks=1, dropout=0.0),
                      seed=0)
    result = train(model, scaled, ranges, TrainConfig(epochs=30, patience=30, batch_size=16, lr=5e-3))
    assert result.best_val_mse < 0.1 * result.initial_val_mse


def test_divergence_is_reported():
    """Test that a non-finite training loss raises DivergenceDetected."""
    scaled, ranges = prepared()
    values = scaled.values.copy()
    values[10, 0] = np.nan
    with pytest.raises(DivergenceDetected):
        train(small_model(), scaled.with_values(values), ranges, TrainConfig(epochs=2, patience=2))


def test_evaluate_collects_every_window():
    """Test prediction, target and start bookkeeping of an evaluation pass."""
    scaled, ranges = prepared()
    result = evaluate(small_model(), scaled, ranges.test, batch_size=5)
    expected = ranges.test[1] - ranges.test[0] - 8 - 4 + 1
    assert result.predictions.shape == (expected, 2, 4)
    assert result.targets.shape == result.predictions.shape
    assert result.starts.tolist() == list(range(ranges.test[0], ranges.test[0] + expected))
    assert abs(result.mse - mse(result.predictions, result.targets)) < 1e-12
