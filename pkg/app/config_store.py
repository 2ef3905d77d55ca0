from __future__ import annotations

import copy
import json
import logging
from pathlib import Path
from threading import RLock

from app.models import ACTIVATIONS, ConfigError, ExperimentConfig

LOGGER = logging.getLogger(__name__)

__all__ = ["ConfigError", "ConfigStore", "load_config_set", "validate_config"]


def validate_config(config: ExperimentConfig) -> None:
    if config.epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {config.epochs}")
    if config.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {config.batch_size}")

    dataset = config.dataset
    if not 0 < dataset.train_fraction < 1:
        raise ConfigError(f"dataset.train_fraction must lie in (0, 1), got {dataset.train_fraction}")
    if dataset.max_rows is not None and dataset.max_rows < 2:
        raise ConfigError(f"dataset.max_rows must be >= 2, got {dataset.max_rows}")
    if dataset.subset_rows is not None and dataset.subset_rows < 1:
        raise ConfigError(f"dataset.subset_rows must be >= 1, got {dataset.subset_rows}")
    target = dataset.synthetic
    if not target.upper > target.lower:
        raise ConfigError(f"dataset.synthetic domain is empty: [{target.lower}, {target.upper}]")
    if target.samples < 2:
        raise ConfigError(f"dataset.synthetic.samples must be >= 2, got {target.samples}")
    if target.noise < 0:
        raise ConfigError(f"dataset.synthetic.noise must be >= 0, got {target.noise}")

    arch = config.architecture
    if arch.activation not in ACTIVATIONS:
        raise ConfigError(f"Unknown activation: {arch.activation}")
    if arch.depth < 0 or arch.width < 1:
        raise ConfigError(f"architecture needs depth >= 0 and width >= 1, got {arch.depth} x {arch.width}")
    if any(width < 1 for width in arch.hidden):
        raise ConfigError(f"architecture.hidden widths must be >= 1, got {arch.hidden}")
    if arch.activation == "relu_res" and len(set(arch.hidden_widths)) > 1:
        raise ConfigError(f"relu_res blocks need equal widths, got {arch.hidden_widths}")
    if arch.bn_eps <= 0 or not 0 < arch.bn_momentum <= 1:
        raise ConfigError(f"batch norm needs eps > 0 and momentum in (0, 1], got {arch.bn_eps}, {arch.bn_momentum}")
    if arch.activation == "bernstein":
        bern = arch.bernstein
        if not arch.batch_norm:
            raise ConfigError("Bernstein layers require batch_norm: true")
        if bern.degree < 1:
            raise ConfigError(f"architecture.bernstein.degree must be >= 1, got {bern.degree}")
        if not bern.upper > bern.lower:
            raise ConfigError(f"architecture.bernstein interval is empty: [{bern.lower}, {bern.upper}]")
        step = 1.0 / bern.degree if bern.init_mode == "unit_span" else (bern.upper - bern.lower) / bern.degree
        if not 0 < bern.delta < step:
            raise ConfigError(
                f"architecture.bernstein.delta must lie in (0, {step}) for {bern.init_mode} init, got {bern.delta}"
            )

    opt = config.optimizer
    if opt.lr <= 0:
        raise ConfigError(f"optimizer.lr must be > 0, got {opt.lr}")
    if not (0 <= opt.beta1 < 1 and 0 <= opt.beta2 < 1) or opt.eps <= 0:
        raise ConfigError("optimizer betas must lie in [0, 1) and eps must be > 0")
    if opt.weight_decay < 0:
        raise ConfigError(f"optimizer.weight_decay must be >= 0, got {opt.weight_decay}")

    sched = config.scheduler
    if not 0 < sched.factor < 1:
        raise ConfigError(f"scheduler.factor must lie in (0, 1), got {sched.factor}")
    if not 0 < sched.gamma <= 1:
        raise ConfigError(f"scheduler.gamma must lie in (0, 1], got {sched.gamma}")
    if sched.patience < 0 or sched.min_lr < 0 or sched.min_delta < 0:
        raise ConfigError("scheduler patience, min_lr and min_delta must be >= 0")

    stop = config.early_stop
    if stop.patience < 1 or stop.min_delta < 0:
        raise ConfigError(f"early_stop needs patience >= 1 and min_delta >= 0, got {stop.patience}, {stop.min_delta}")

    diag = config.diagnostics
    if diag.dead_threshold <= 0:
        raise ConfigError(f"diagnostics.dead_threshold must be > 0, got {diag.dead_threshold}")
    if diag.stride < 1:
        raise ConfigError(f"diagnostics.stride must be >= 1, got {diag.stride}")

    sweep = config.sweep
    if any(depth < 0 for depth in sweep.depths) or any(degree < 1 for degree in sweep.degrees):
        raise ConfigError(f"sweep depths must be >= 0 and degrees >= 1, got {sweep.depths}, {sweep.degrees}")


def load_config_set(raw: object) -> list[ExperimentConfig]:
    """A config file holds one experiment object or {"runs": [...]}."""
    if isinstance(raw, dict) and set(raw) == {"runs"}:
        runs = raw["runs"]
        if not isinstance(runs, list):
            raise ConfigError("runs: expected a list of experiment objects")
        configs = [ExperimentConfig.from_dict(item) for item in runs]
    elif isinstance(raw, dict):
        configs = [ExperimentConfig.from_dict(raw)]
    else:
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    for config in configs:
        validate_config(config)
    return configs


class ConfigStore:
    def __init__(self, path: str | Path, create: bool = False):
        self.path = Path(path)
        self._lock = RLock()
        self._configs = self._load_or_create(create)

    @classmethod
    def create(cls, path: str | Path, configs: list[ExperimentConfig] | ExperimentConfig) -> "ConfigStore":
        store = cls.__new__(cls)
        store.path = Path(path)
        store._lock = RLock()
        store._configs = []
        store.save(configs)
        return store

    @property
    def configs(self) -> list[ExperimentConfig]:
        with self._lock:
            return copy.deepcopy(self._configs)

    @property
    def config(self) -> ExperimentConfig:
        with self._lock:
            return copy.deepcopy(self._configs[0])

    def save(self, configs: list[ExperimentConfig] | ExperimentConfig) -> None:
        if isinstance(configs, ExperimentConfig):
            configs = [configs]
        with self._lock:
            for config in configs:
                validate_config(config)
            if len(configs) == 1:
                payload: object = configs[0].to_dict()
            else:
                payload = {"runs": [config.to_dict() for config in configs]}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp_path = self.path.with_suffix(".tmp")
            with tmp_path.open("w", encoding="utf-8") as handle:
                json.dump(payload, handle, indent=2, ensure_ascii=True)
            tmp_path.replace(self.path)
            self._configs = list(configs)

    def _load_or_create(self, create: bool) -> list[ExperimentConfig]:
        if not self.path.exists():
            if not create:
                raise ConfigError(f"Config file not found: {self.path}")
            default = [ExperimentConfig()]
            self.save(default)
            LOGGER.info("Wrote default config to %s", self.path)
            return default

        try:
            with self.path.open("r", encoding="utf-8") as handle:
                raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{self.path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return load_config_set(raw)
