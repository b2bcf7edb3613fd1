"""
Optimization loop, metrics and checkpoints.
"""
from casa_forecaster.training.checkpoint import Checkpoint, load_checkpoint, round_to_storage, save_checkpoint
from casa_forecaster.training.optim import Adam, EarlyStopping, OptimState, adam_step
from casa_forecaster.training.trainer import TrainConfig, evaluate, train

__all__ = ['Adam', 'Checkpoint', 'EarlyStopping', 'OptimState', 'TrainConfig', 'adam_step',
           'evaluate', 'load_checkpoint', 'round_to_storage', 'save_checkpoint', 'train']
