"""
Main forecaster class tying data, model, training and analysis together.
"""
import os
import logging
import time
from datetime import datetime

import numpy as np

from casa_forecaster.data.pipeline import fit_apply_scaler, load_csv, make_windows, resolve_split
from casa_forecaster.exceptions import ConfigMismatch
from casa_forecaster.models.casa import CasaModel, count_parameters
from casa_forecaster.training.checkpoint import load_checkpoint, round_to_storage, save_checkpoint
from casa_forecaster.training.trainer import evaluate, seed_streams, train
from casa_forecaster.analysis.predictions import prediction_dump
from casa_forecaster.utils.config import write_resolved_config
from casa_forecaster.utils.io import save_to_csv, save_to_json

CHECKPOINT_NAME = "best.ckpt"


class CasaForecaster:
    """
    End-to-end CASA forecasting run.

    Owns the resolved RunConfig, the output directory and the logger, and
    runs the stages of a run (load, build, train, evaluate, dump) writing
    every artifact into the output directory.
    """

    def __init__(self, config, output_dir=None, log_level=logging.INFO):
        """
        Initialize the forecaster with a resolved configuration.

        Args:
            config: RunConfig from load_config
            output_dir: Directory for artifacts; config.run.out when None
            log_level: Logging level (INFO, DEBUG, ERROR, etc.)
        """
        self.config = config
        self.output_dir = output_dir or config.run.out
        self.table = None
        self.scaled = None
        self.scaler = None
        self.ranges = None
        self.model = None
        self.checkpoint = None

        # Create output directory if it doesn't exist
        os.makedirs(self.output_dir, exist_ok=True)

        # Set up logging
        self._setup_logging(log_level)

    def _setup_logging(self, log_level):
        """Attach a timestamped file handler and a console handler to the run logger."""
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        self.log_file = os.path.join(self.output_dir,
                                     f"casa_forecaster_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
        self.logger = logging.getLogger("CASA-Forecaster")
        self.logger.setLevel(log_level)

        # One run owns the handlers at a time
        self._release_handlers()
        for handler in (logging.FileHandler(self.log_file, encoding='utf-8'), logging.StreamHandler()):
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)

    def _release_handlers(self):
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()

    def close(self):
        """Flush and detach the run's log handlers."""
        self._release_handlers()

    def load_data(self, adopt_n_vars=True):
        """
        Load the dataset, resolve the split and fit the scaler on train.

        Args:
            adopt_n_vars: Take N from the file; otherwise a mismatch with
                model.n_vars raises ConfigMismatch

        Returns:
            Standardized SeriesTable
        """
        data, model = self.config.data, self.config.model
        self.logger.info(f"Loading dataset {data.path}")
        self.table = load_csv(data.path, date_column=data.date_column,
                              delimiter=data.delimiter, logger=self.logger)

        if self.table.n_vars != model.n_vars:
            if not adopt_n_vars:
                raise ConfigMismatch(
                    f"dataset has N={self.table.n_vars} variates, model expects N={model.n_vars}")
            self.logger.info(f"Setting model.n_vars = {self.table.n_vars} from the dataset")
            model.n_vars = self.table.n_vars

        self.ranges = resolve_split(self.table, data.split_spec(), model.seq_len, model.pred_len)
        self.scaler, self.scaled = fit_apply_scaler(self.table, self.ranges.train)
        self.logger.info(f"Split train {self.ranges.train}, val {self.ranges.val}, test {self.ranges.test}")
        return self.scaled

    def build_model(self):
        """
        Draw a fresh model from the run seed.

        Returns:
            CasaModel
        """
        init_rng, _, _ = seed_streams(self.config.train.seed)
        seed = int(init_rng.integers(0, 2 ** 31 - 1))
        self.model = CasaModel(self.config.model, seed=seed)
        counts = count_parameters(self.config.model)
        self.logger.info(f"Built {self.config.model.attention} model with {counts['total']} parameters")
        return self.model

    def load_model(self, checkpoint_path):
        """
        Restore a model from a checkpoint that must fit the loaded dataset.

        Returns:
            CasaModel
        """
        checkpoint = load_checkpoint(checkpoint_path, logger=self.logger)
        stored = checkpoint.config
        if self.table is not None and stored.n_vars != self.table.n_vars:
            raise ConfigMismatch(
                f"checkpoint has N={stored.n_vars}, dataset has N={self.table.n_vars}")
        if (stored.seq_len, stored.pred_len) != (self.config.model.seq_len, self.config.model.pred_len):
            raise ConfigMismatch(
                f"checkpoint has (L, H) = ({stored.seq_len}, {stored.pred_len}), config has "
                f"({self.config.model.seq_len}, {self.config.model.pred_len})")
        self.checkpoint = checkpoint
        self.model = checkpoint.to_model()
        return self.model

    def resume_from(self, checkpoint_path):
        """
        Restore parameters and Adam state of an earlier run of the same model.

        Returns:
            OptimState stored in the checkpoint, None when it holds none
        """
        self.load_model(checkpoint_path)
        stored = self.checkpoint.config
        if stored != self.config.model:
            differing = [key for key, value in stored.to_dict().items()
                         if self.config.model.to_dict().get(key) != value]
            raise ConfigMismatch(f"cannot resume: checkpoint model differs in {', '.join(differing)}")
        if self.checkpoint.optim is None:
            self.logger.warning(f"{checkpoint_path} holds no optimizer state; Adam restarts from zero moments")
        else:
            self.logger.info(f"Resuming from {checkpoint_path} at Adam step {self.checkpoint.optim.step}")
        return self.checkpoint.optim

    def train(self, optim_state=None):
        """
        Train the current model and write checkpoint, epoch log and resolved config.

        The trained parameters are rounded to checkpoint precision before
        anything is scored, so the saved file reproduces every reported metric.

        Args:
            optim_state: Optional OptimState to continue from

        Returns:
            TrainResult
        """
        result = train(self.model, self.scaled, self.ranges, self.config.train, logger=self.logger,
                       optim_state=optim_state)
        round_to_storage(self.model)
        save_checkpoint(os.path.join(self.output_dir, CHECKPOINT_NAME), self.model,
                        optim=result.optim_state, train_log=result.log, logger=self.logger)
        save_to_csv(result.log, 'train_log', self.output_dir, self.logger)
        self.write_config()
        return result

    def write_config(self):
        extra = {}
        if self.ranges is not None:
            extra['split_boundaries'] = self.ranges.boundaries
        return write_resolved_config(self.config, self.output_dir, self.logger, extra=extra)

    def evaluate(self, model=None):
        """
        Test-split MSE/MAE on the scaled series, written to metrics.csv.

        Returns:
            Tuple (metrics row dictionary, EvalResult)
        """
        model = model or self.model
        result = evaluate(model, self.scaled, self.ranges.test, self.config.train.batch_size)
        row = {
            'dataset': self.config.data.name,
            'attention': model.config.attention,
            'L': model.config.seq_len,
            'H': model.config.pred_len,
            'mse': result.mse,
            'mae': result.mae,
            'windows': len(result.starts),
        }
        self.logger.info(f"Test MSE {result.mse:.6f}, MAE {result.mae:.6f}")
        save_to_csv([row], 'metrics', self.output_dir, self.logger)
        return row, result

    def dump_predictions(self, window_index, model=None):
        """Write predictions_<i>.csv for one test window."""
        model = model or self.model
        path = os.path.join(self.output_dir, f"predictions_{window_index}.csv")
        return prediction_dump(model, self.scaled, self.ranges.test, window_index, path,
                               scaler=self.scaler, source=self.table, logger=self.logger)

    def mean_predictor_mse(self):
        """Test MSE of forecasting every window by its input mean."""
        model = self.config.model
        squared, count = 0.0, 0
        for batch in make_windows(self.scaled, self.ranges.test, model.seq_len, model.pred_len,
                                  batch_size=self.config.train.batch_size):
            mean = batch.inputs.mean(axis=-1, keepdims=True)
            squared += float(np.sum((batch.targets - mean) ** 2))
            count += batch.targets.size
        return squared / count

    def run_full_training(self, dump_windows=(), resume=None):
        """
        Run the complete pipeline: load, build, train, evaluate, dump.

        Args:
            dump_windows: Test window indices to write prediction CSVs for
            resume: Optional checkpoint whose parameters and Adam state training continues from

        Returns:
            Dictionary with the metrics row, best epoch and initial val MSE
        """
        start_time = time.time()
        self.logger.info(f"Starting training run in {self.output_dir}")

        self.load_data()
        optim_state = None
        if resume:
            optim_state = self.resume_from(resume)
        else:
            self.build_model()
        result = self.train(optim_state)
        row, _ = self.evaluate()
        for index in dump_windows:
            self.dump_predictions(index)

        summary = dict(row)
        summary.update({'best_epoch': result.best_epoch, 'best_val_mse': result.best_val_mse,
                        'initial_val_mse': result.initial_val_mse, 'epochs_run': len(result.log)})
        save_to_json(summary, 'summary', self.output_dir, self.logger)

        duration = time.time() - start_time
        self.logger.info(f"Training run completed in {duration:.2f} seconds")
        return summary
