from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from app import bernstein, checkpoint, diagnostics
from app.config_store import ConfigStore
from app.data import (
    BatchIterator,
    Dataset,
    DatasetError,
    data_root,
    load_higgs_csv,
    load_mnist_splits,
    split,
    standardize,
    synth_regression,
)
from app.diagnostics import DeadNeuronPolicy, DiagnosticsAccumulator, DiagnosticsRecord
from app.models import DatasetKind, ExperimentConfig, MetricKind, config_fingerprint
from app.network import (
    Network,
    Parameterization,
    Parameters,
    backward,
    bernstein_coefficients,
    build_network,
    forward,
    init_parameters,
    loss_bce_logits,
    loss_mse,
    loss_softmax_ce,
)
from app.numcore import NonFiniteError, Rng
from app.optim import (
    AdamWState,
    EarlyStopState,
    TrainState,
    adamw_step,
    build_scheduler,
    early_stop_update,
    scheduler_step,
)

LOGGER = logging.getLogger(__name__)

FLOOR_SLACK = 1e-12

LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def prepare_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, validation); synthetic regression validates on its training samples."""
    dataset = config.dataset
    if dataset.kind == DatasetKind.SYNTHETIC.value:
        samples = synth_regression(dataset.synthetic, config.seed)
        return samples, samples
    if dataset.kind == DatasetKind.MNIST.value:
        train, test = load_mnist_splits(data_root(dataset.root))
        if dataset.subset_rows is not None:
            train = train.head(dataset.subset_rows)
        return standardize(train, test)
    if dataset.kind == DatasetKind.HIGGS_CSV.value:
        if not dataset.path:
            raise DatasetError("dataset.path is required for higgs_csv")
        path = Path(dataset.path)
        if not path.is_absolute() and not path.exists():
            path = data_root(dataset.root) / path
        rows = load_higgs_csv(path, dataset.max_rows)
        train, validation = split(rows, dataset.train_fraction, config.seed)
        LOGGER.info("HIGGS subset: %d train / %d validation rows", len(train), len(validation))
        return standardize(train, validation)
    raise DatasetError(f"Unknown dataset kind: {dataset.kind}")


def loss_for(dataset: Dataset) -> LossFn:
    if dataset.num_classes is None:
        return loss_mse
    if dataset.num_classes == 2:
        return loss_bce_logits
    return loss_softmax_ce


@dataclass
class Evaluation:
    loss: float
    metric: float
    sup_error: float = float("nan")


@dataclass
class RunResult:
    name: str
    label: str
    fingerprint: str
    records: list[DiagnosticsRecord] = field(default_factory=list)
    best_train_loss: float = float("nan")
    best_metric: float = float("nan")
    best_sup_error: float = float("nan")
    best_mse: float = float("nan")
    epochs_run: int = 0
    stopped_early: bool = False
    floor_violations: int = 0
    diagonal_violations: int = 0
    parameter_count: int = 0
    theoretical_bound: float | None = None
    run_dir: str = ""

    def summary(self) -> str:
        return (
            f"{self.name}: best train loss {self.best_train_loss!r}, "
            f"best validation metric {self.best_metric!r} after {self.epochs_run} epochs"
        )


class Trainer:
    def __init__(
        self,
        config: ExperimentConfig,
        train: Dataset,
        validation: Dataset,
        run_dir: str | Path | None = None,
    ):
        self.config = config
        self.train = train
        self.validation = validation
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.metric = config.metric
        self.loss_fn = loss_for(train)
        self.net: Network = build_network(config.architecture, train.width, train.output_width)
        self.params: Parameters = init_parameters(self.net, Rng(config.seed).derive(0))
        self.policy = DeadNeuronPolicy(config.diagnostics.dead_threshold)
        optimizer = AdamWState.from_config(config.optimizer)
        early_stop = EarlyStopState.from_config(config.early_stop, self.metric) if config.early_stop.enabled else None
        self.state = TrainState(
            optimizer=optimizer,
            scheduler=build_scheduler(config.scheduler, optimizer.lr, self.metric),
            early_stop=early_stop,
        )
        self._bernstein = [
            (path, layer) for path, layer, _ in self.net.activation_layers() if layer.bernstein is not None
        ]
        self._record_index = {path: index for index, (path, _, _) in enumerate(self.net.activation_layers())}

    @property
    def theoretical_bound(self) -> float | None:
        constrained = [layer for _, layer in self._bernstein if layer.parameterization == Parameterization.CONSTRAINED]
        if not constrained:
            return None
        return bernstein.theoretical_lower_bound(constrained[0].bernstein)

    # ------------------------------------------------------------ evaluation

    def _outputs(self, dataset: Dataset) -> np.ndarray:
        if self.metric == MetricKind.LOSS:
            # Regression is scored with full-batch statistics on a throwaway copy.
            output, _ = forward(self.net, self.params.copy(), dataset.features, mode="train")
            return output
        chunks = []
        for start in range(0, len(dataset), 4096):
            output, _ = forward(self.net, self.params, dataset.features[start:start + 4096], mode="eval")
            chunks.append(output)
        return np.concatenate(chunks, axis=0)

    def evaluate(self, dataset: Dataset) -> Evaluation:
        outputs = self._outputs(dataset)
        loss, _ = self.loss_fn(outputs, dataset.targets)
        if self.metric == MetricKind.AUC:
            return Evaluation(loss=loss, metric=diagnostics.compute_auc(outputs[:, 0], dataset.targets))
        if self.metric == MetricKind.ACCURACY:
            return Evaluation(loss=loss, metric=diagnostics.compute_accuracy(outputs, dataset.targets))
        residual = outputs - dataset.targets.reshape(outputs.shape)
        return Evaluation(loss=loss, metric=loss, sup_error=float(np.max(np.abs(residual))))

    # ------------------------------------------------------------ epochs

    def _initial_record(self) -> tuple[DiagnosticsRecord, Evaluation]:
        """Diagnostics of the untrained network; BatchNorm buffers stay untouched."""
        scratch = self.params.copy()
        accumulator = DiagnosticsAccumulator(self.policy, self.config.diagnostics.stride)
        total = 0.0
        for features, targets in BatchIterator(self.train, self.config.batch_size, self.config.seed, shuffle=False):
            output, cache = forward(self.net, scratch, features, mode="train")
            loss, grad = self.loss_fn(output, targets)
            total += loss * features.shape[0]
            grads = backward(self.net, scratch, cache, grad)
            accumulator.add_batch(cache, grads.activation_grads)
        evaluation = self.evaluate(self.validation)
        record = accumulator.finish(0, total / len(self.train), evaluation.metric, self.state.optimizer.lr)
        return record, evaluation

    def _train_epoch(self, epoch: int, batches: BatchIterator) -> DiagnosticsRecord:
        accumulator = DiagnosticsAccumulator(self.policy, self.config.diagnostics.stride)
        total = 0.0
        for batch_index, (features, targets) in enumerate(batches, start=1):
            try:
                output, cache = forward(self.net, self.params, features, mode="train")
                loss, grad = self.loss_fn(output, targets)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss is {loss}")
                grads = backward(self.net, self.params, cache, grad)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch} batch {batch_index}: {exc}") from exc
            accumulator.add_batch(cache, grads.activation_grads)
            adamw_step(self.state.optimizer, self.params, grads.params, epoch)
            total += loss * features.shape[0]
        lr = self.state.optimizer.lr
        return accumulator.finish(epoch, total / len(self.train), float("nan"), lr)

    def _check_bounds(self, record: DiagnosticsRecord, result: RunResult) -> None:
        for path, layer in self._bernstein:
            if layer.parameterization != Parameterization.CONSTRAINED:
                continue
            spec = layer.bernstein
            floor = bernstein.theoretical_lower_bound(spec)
            minimum = record.min_derivative[self._record_index[path]]
            if minimum < floor - FLOOR_SLACK:
                result.floor_violations += 1
                LOGGER.warning("Layer %s epoch %d: min |sigma'| %.6g below floor %.6g", path, record.epoch, minimum, floor)
            coefficients = bernstein_coefficients(layer, self.params, path)
            holds, violating = bernstein.check_diagonal_bound(coefficients, spec)
            if not holds:
                result.diagonal_violations += 1
                LOGGER.warning("Layer %s epoch %d: diagonal bound fails for neurons %s", path, record.epoch, violating)

    def run(self) -> RunResult:
        config = self.config
        fingerprint = config_fingerprint(config)
        result = RunResult(
            name=config.name,
            label=config.architecture.label,
            fingerprint=fingerprint,
            parameter_count=self.params.count(),
            theoretical_bound=self.theoretical_bound,
            run_dir=str(self.run_dir or ""),
        )
        LOGGER.info(
            "Run %s: %s, %d parameters, %d train rows, %d epochs",
            config.name, result.label, result.parameter_count, len(self.train), config.epochs,
        )

        initial, evaluation = self._initial_record()
        result.records.append(initial)
        self._check_bounds(initial, result)
        self._update_best(result, initial, evaluation, epoch=0)

        batches = BatchIterator(self.train, config.batch_size, config.seed)
        for epoch in range(1, config.epochs + 1):
            self.state.epoch = epoch
            record = self._train_epoch(epoch, batches)
            evaluation = self.evaluate(self.validation)
            record.val_metric = evaluation.metric
            result.records.append(record)
            result.epochs_run = epoch
            self._check_bounds(record, result)
            self._update_best(result, record, evaluation, epoch)
            LOGGER.info(
                "Epoch %d: loss %.6g, %s %.6g, lr %.3g, min |sigma'| %.3g, max dead %.3f",
                epoch,
                record.train_loss,
                self.metric.value,
                record.val_metric,
                record.lr,
                min(record.min_derivative) if record.min_derivative else float("nan"),
                max(record.dead_ratio) if record.dead_ratio else 0.0,
            )
            self.state.optimizer.lr = scheduler_step(self.state.scheduler, evaluation.metric)
            if self.state.early_stop is not None and early_stop_update(self.state.early_stop, evaluation.metric):
                LOGGER.warning("Early stop at epoch %d (no improvement for %d epochs)", epoch, self.state.early_stop.patience)
                self.state.stopped_early = True
                result.stopped_early = True
                break

        if self.run_dir is not None:
            self._write_outputs(result)
        LOGGER.info(result.summary())
        return result

    def _update_best(self, result: RunResult, record: DiagnosticsRecord, evaluation: Evaluation, epoch: int) -> None:
        if epoch > 0 or self.config.epochs == 0:
            if math.isnan(result.best_train_loss) or record.train_loss < result.best_train_loss:
                result.best_train_loss = record.train_loss
        if math.isnan(result.best_metric):
            result.best_metric = evaluation.metric
        elif self.metric == MetricKind.LOSS:
            result.best_metric = min(result.best_metric, evaluation.metric)
        else:
            result.best_metric = max(result.best_metric, evaluation.metric)
        if not math.isnan(evaluation.sup_error):
            result.best_sup_error = float(np.fmin(result.best_sup_error, evaluation.sup_error))
            result.best_mse = float(np.fmin(result.best_mse, evaluation.loss))

    def _write_outputs(self, result: RunResult) -> None:
        run_dir = self.run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        ConfigStore.create(run_dir / "config.json", self.config)
        diagnostics.export_metrics_csv(result.records, run_dir / "metrics.csv", result.fingerprint)
        diagnostics.export_heatmap_csv(result.records, run_dir / "heatmap.csv", result.fingerprint)
        diagnostics.export_depth_profile_csv(
            result.records, run_dir / "depth_profile.csv", result.fingerprint, result.theoretical_bound
        )
        if self.config.diagnostics.checkpoint:
            checkpoint.save_checkpoint(run_dir / "final.npz", self.net, self.params)


def train_config(config: ExperimentConfig, run_dir: str | Path | None = None) -> RunResult:
    train, validation = prepare_datasets(config)
    return Trainer(config, train, validation, run_dir).run()
