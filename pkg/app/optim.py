from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from app.models import EarlyStopConfig, MetricKind, OptimizerConfig, SchedulerConfig
from app.network import Parameters
from app.numcore import NonFiniteError, ShapeError

LOGGER = logging.getLogger(__name__)

BATCH_NORM_SUFFIXES = (".gamma", ".beta")
BERNSTEIN_SUFFIXES = (".c0", ".rho", ".coeffs")


@dataclass
class AdamWState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_start_epoch: int = 0
    decay_batch_norm: bool = False
    decay_bernstein: bool = False
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def from_config(config: OptimizerConfig) -> "AdamWState":
        return AdamWState(
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            weight_decay=config.weight_decay,
            decay_start_epoch=config.decay_start_epoch,
            decay_batch_norm=config.decay_batch_norm,
            decay_bernstein=config.decay_bernstein,
        )

    def decays(self, key: str) -> bool:
        if key.endswith(".weight"):
            return True
        if key.endswith(BATCH_NORM_SUFFIXES):
            return self.decay_batch_norm
        if key.endswith(BERNSTEIN_SUFFIXES):
            return self.decay_bernstein
        return False


def adamw_step(state: AdamWState, params: Parameters, grads: dict[str, np.ndarray], epoch: int) -> Parameters:
    """Decoupled-decay Adam update, in place; bumps `params.version`."""
    missing = sorted(set(params.values) - set(grads))
    if missing:
        raise ShapeError(f"no gradient for parameters {missing}")
    for key, value in params.values.items():
        if grads[key].shape != value.shape:
            raise ShapeError(f"gradient shape {grads[key].shape} != parameter shape {value.shape} for {key}")

    state.step += 1
    decay_active = state.weight_decay > 0 and epoch >= state.decay_start_epoch
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for key, value in params.values.items():
        grad = grads[key]
        if decay_active and state.decays(key):
            value *= 1.0 - state.lr * state.weight_decay
        m = state.first_moment.get(key)
        v = state.second_moment.get(key)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[key] = m
        state.second_moment[key] = v
        value -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    params.version += 1
    return params


def _improved(metric: float, best: float | None, maximize: bool, min_delta: float) -> bool:
    if best is None:
        return True
    gain = metric - best if maximize else best - metric
    return gain > 0 and gain >= min_delta


def _check_metric(metric: float) -> float:
    metric = float(metric)
    if not math.isfinite(metric):
        raise NonFiniteError(f"monitored metric is not finite: {metric}")
    return metric


@dataclass
class PlateauState:
    lr: float
    maximize: bool = True
    factor: float = 0.5
    patience: int = 5
    min_delta: float = 0.0
    min_lr: float = 1e-6
    best: float | None = None
    bad_epochs: int = 0


@dataclass
class ExponentialState:
    lr: float
    gamma: float = 0.95
    start_epoch: int = 5
    min_lr: float = 1e-6
    epoch: int = 0


@dataclass
class ConstantState:
    lr: float


SchedulerState = Union[PlateauState, ExponentialState, ConstantState]


def build_scheduler(config: SchedulerConfig, lr: float, metric: MetricKind) -> SchedulerState:
    if config.kind == "plateau":
        return PlateauState(
            lr=lr,
            maximize=metric != MetricKind.LOSS,
            factor=config.factor,
            patience=config.patience,
            min_delta=config.min_delta,
            min_lr=config.min_lr,
        )
    if config.kind == "exponential":
        return ExponentialState(lr=lr, gamma=config.gamma, start_epoch=config.start_epoch, min_lr=config.min_lr)
    return ConstantState(lr=lr)


def scheduler_step(state: SchedulerState, epoch_metric: float) -> float:
    """Advance one finished epoch and return the learning rate for the next one."""
    metric = _check_metric(epoch_metric)
    if isinstance(state, PlateauState):
        if _improved(metric, state.best, state.maximize, state.min_delta):
            state.best = metric
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1
            if state.bad_epochs > state.patience:
                reduced = max(state.lr * state.factor, state.min_lr)
                if reduced < state.lr:
                    LOGGER.warning("Reducing learning rate %.3g -> %.3g", state.lr, reduced)
                state.lr = reduced
                state.bad_epochs = 0
    elif isinstance(state, ExponentialState):
        state.epoch += 1
        if state.epoch >= state.start_epoch:
            state.lr = max(state.lr * state.gamma, state.min_lr)
    return state.lr


@dataclass
class EarlyStopState:
    patience: int
    min_delta: float = 0.0
    maximize: bool = True
    best: float | None = None
    epochs_since_improvement: int = 0

    @staticmethod
    def from_config(config: EarlyStopConfig, metric: MetricKind) -> "EarlyStopState":
        return EarlyStopState(patience=config.patience, min_delta=config.min_delta, maximize=metric != MetricKind.LOSS)


def early_stop_update(state: EarlyStopState, epoch_metric: float) -> bool:
    metric = _check_metric(epoch_metric)
    if _improved(metric, state.best, state.maximize, state.min_delta):
        state.best = metric
        state.epochs_since_improvement = 0
        return False
    state.epochs_since_improvement += 1
    return state.epochs_since_improvement >= state.patience


@dataclass
class TrainState:
    optimizer: AdamWState
    scheduler: SchedulerState
    early_stop: EarlyStopState | None = None
    epoch: int = 0
    stopped_early: bool = False
