"""
Training loop: MSE objective, Adam, per-epoch validation and early stopping.
"""
import copy
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from casa_forecaster.autograd import functional as F
from casa_forecaster.autograd.tensor import Tape, Tensor
from casa_forecaster.data.pipeline import make_windows
from casa_forecaster.exceptions import ConfigError, DivergenceDetected
from casa_forecaster.models.casa import model_forward
from casa_forecaster.training.metrics import MetricAccumulator
from casa_forecaster.training.optim import Adam, EarlyStopping, OptimState, PlateauScheduler


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0
    loss: str = 'mse'
    weight_decay: float = 0.0
    lr_factor: float = 0.5
    lr_patience: int = 3
    stride: int = 1

    def validate(self):
        for name in ('epochs', 'batch_size', 'stride', 'lr_patience'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"train.{name} must be a positive integer, got {value!r}")
        if not isinstance(self.patience, (int, np.integer)) or not 0 <= self.patience <= self.epochs:
            raise ConfigError(f"train.patience must be in [0, epochs], got {self.patience!r}")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if not 0 < self.lr_factor <= 1:
            raise ConfigError(f"train.lr_factor must be in (0, 1], got {self.lr_factor}")
        if self.loss != 'mse':
            raise ConfigError(f"only the 'mse' loss is supported, got {self.loss!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in values.items() if key in known})


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    best_val_mse: float
    initial_val_mse: float
    log: list = field(default_factory=list)
    optim_state: Optional[OptimState] = None


@dataclass
class EvalResult:
    mse: float
    mae: float
    predictions: np.ndarray  # [B, N, H]
    targets: np.ndarray
    starts: np.ndarray


def seed_streams(seed):
    """Independent generators for parameter init, window shuffling and dropout masks."""
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(drop)


def train_step(model, batch, optimizer, rng):
    """
    Forward, backward and one Adam update on a single batch.

    Returns:
        Batch MSE before the update
    """
    tape = Tape()
    bound, tensors = model.bind(tape)
    pred = model_forward(model, batch.inputs, bound=bound, training=True, rng=rng)
    loss = F.mse_loss(pred, Tensor(batch.targets, dtype=model.config.np_dtype))
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceDetected(f"train loss became {value}")
    tape.backward(loss)
    grads = {name: tape.grad(tensor) for name, tensor in tensors.items()}
    model.params = optimizer.step(model.params, grads)
    return value


def evaluate(model, table, index_range, batch_size=32, keep_predictions=True, stride=1):
    """
    Metrics of a model over every window of one split, on the scaled series.

    Args:
        model: CasaModel
        table: Standardized SeriesTable
        index_range: (start, stop) of the split
        batch_size: Windows per forward pass
        keep_predictions: Keep the stacked predictions and targets in the result
        stride: Offset between window starts

    Returns:
        EvalResult
    """
    config = model.config
    accumulator = MetricAccumulator()
    preds, targets, starts = [], [], []
    for batch in make_windows(table, index_range, config.seq_len, config.pred_len,
                              stride=stride, batch_size=batch_size):
        pred = model.predict(batch.inputs)
        accumulator.update(pred, batch.targets)
        if keep_predictions:
            preds.append(pred)
            targets.append(batch.targets)
            starts.append(batch.starts)

    if keep_predictions:
        return EvalResult(accumulator.mse, accumulator.mae, np.concatenate(preds),
                          np.concatenate(targets), np.concatenate(starts))
    empty = np.zeros((0, config.n_vars, config.pred_len))
    return EvalResult(accumulator.mse, accumulator.mae, empty, empty, np.zeros(0, dtype=np.int64))


def train(model, table, ranges, cfg, logger=None, optim_state=None):
    """
    Fit a model on the train split with val-based early stopping.

    Args:
        model: CasaModel, updated in place with the best-val parameters
        table: Standardized SeriesTable
        ranges: SplitRanges from resolve_split
        cfg: TrainConfig
        logger: Logger instance for logging
        optim_state: Optional OptimState to resume from (moments, step and lr)

    Returns:
        TrainResult with the per-epoch log (epoch, train_mse, val_mse, lr, seconds)
        and the optimizer state as it was at the best epoch
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    cfg.validate()
    config = model.config
    _, shuffle_rng, dropout_rng = seed_streams(cfg.seed)

    optimizer = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay, state=optim_state)
    scheduler = PlateauScheduler(optimizer, factor=cfg.lr_factor, patience=cfg.lr_patience)
    stopper = EarlyStopping(patience=cfg.patience)

    initial = evaluate(model, table, ranges.val, cfg.batch_size, keep_predictions=False).mse
    logger.info(f"Initial val MSE {initial:.6f}")

    best_params = {name: value.copy() for name, value in model.params.items()}
    best_state = copy.deepcopy(optimizer.state)
    best_epoch, best_val = 0, float('inf')
    log = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        total, count = 0.0, 0
        for batch in make_windows(table, ranges.train, config.seq_len, config.pred_len,
                                  stride=cfg.stride, batch_size=cfg.batch_size, rng=shuffle_rng):
            total += train_step(model, batch, optimizer, dropout_rng) * len(batch)
            count += len(batch)
        train_mse = total / count

        val_mse = evaluate(model, table, ranges.val, cfg.batch_size, keep_predictions=False).mse
        if not np.isfinite(val_mse):
            raise DivergenceDetected(f"val loss became {val_mse} at epoch {epoch}")
        lr = optimizer.lr
        log.append({'epoch': epoch, 'train_mse': train_mse, 'val_mse': val_mse, 'lr': lr,
                    'seconds': time.perf_counter() - started})
        logger.info(f"Epoch {epoch}: train MSE {train_mse:.6f}, val MSE {val_mse:.6f}, lr {lr:.2e}")

        if stopper(val_mse):
            best_params = {name: value.copy() for name, value in model.params.items()}
            best_state = copy.deepcopy(optimizer.state)
            best_epoch, best_val = epoch, val_mse
        if stopper.early_stop:
            logger.info(f"Early stopping after epoch {epoch} (best epoch {best_epoch})")
            break
        scheduler.step(val_mse)

    model.load_params(best_params)
    return TrainResult(best_params=best_params, best_epoch=best_epoch, best_val_mse=best_val,
                       initial_val_mse=initial, log=log, optim_state=best_state)
