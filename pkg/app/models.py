from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class ConfigError(ValueError):
    pass


class DatasetKind(str, Enum):
    MNIST = "mnist"
    HIGGS_CSV = "higgs_csv"
    SYNTHETIC = "synthetic"


class MetricKind(str, Enum):
    AUC = "auc"
    ACCURACY = "accuracy"
    LOSS = "loss"


ACTIVATIONS = ("bernstein", "relu", "relu_res", "leaky_relu", "selu", "gelu")
SCHEDULERS = ("plateau", "exponential", "none")
SYNTHETIC_FUNCTIONS = ("sin_k", "linear", "sincos_k")


def _check_keys(data: Any, section: str, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    return data


def _int(data: dict, key: str, default: int, section: str) -> int:
    value = data.get(key, default)
    if isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int):
        raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    return value


def _optional_int(data: dict, key: str, default: int | None, section: str) -> int | None:
    if data.get(key, default) is None:
        return None
    return _int(data, key, default, section)


def _float(data: dict, key: str, default: float, section: str) -> float:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    return float(value)


def _bool(data: dict, key: str, default: bool, section: str) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
    return value


def _str(data: dict, key: str, default: str, section: str, choices: tuple[str, ...] | None = None) -> str:
    value = data.get(key, default)
    if not isinstance(value, str):
        raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
    value = value.strip()
    if choices is not None and value not in choices:
        raise ConfigError(f"{section}.{key}: {value!r} is not one of {list(choices)}")
    return value


def _int_list(data: dict, key: str, default: list[int], section: str) -> list[int]:
    value = data.get(key, default)
    if not isinstance(value, list):
        raise ConfigError(f"{section}.{key}: expected a list, got {value!r}")
    return [_int({"item": item}, "item", 0, f"{section}.{key}") for item in value]


def _float_list(data: dict, key: str, default: list[float], section: str) -> list[float]:
    value = data.get(key, default)
    if not isinstance(value, list):
        raise ConfigError(f"{section}.{key}: expected a list, got {value!r}")
    return [_float({"item": item}, "item", 0.0, f"{section}.{key}") for item in value]


def _str_list(data: dict, key: str, default: list[str], section: str) -> list[str]:
    value = data.get(key, default)
    if not isinstance(value, list):
        raise ConfigError(f"{section}.{key}: expected a list, got {value!r}")
    return [_str({"item": item}, "item", "", f"{section}.{key}") for item in value]


@dataclass
class SyntheticTargetConfig:
    function: str = "sin_k"
    k: int = 1
    lower: float = 0.0
    upper: float = 1.0
    samples: int = 256
    noise: float = 0.0
    grid: bool = True

    @property
    def name(self) -> str:
        if self.function == "linear":
            return "linear"
        return self.function.replace("_k", f"_{self.k}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "function": self.function,
            "k": self.k,
            "lower": self.lower,
            "upper": self.upper,
            "samples": self.samples,
            "noise": self.noise,
            "grid": self.grid,
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "SyntheticTargetConfig | None" = None) -> "SyntheticTargetConfig":
        base = base or SyntheticTargetConfig()
        section = "dataset.synthetic"
        _check_keys(data, section, set(base.to_dict()))
        return SyntheticTargetConfig(
            function=_str(data, "function", base.function, section, SYNTHETIC_FUNCTIONS),
            k=_int(data, "k", base.k, section),
            lower=_float(data, "lower", base.lower, section),
            upper=_float(data, "upper", base.upper, section),
            samples=_int(data, "samples", base.samples, section),
            noise=_float(data, "noise", base.noise, section),
            grid=_bool(data, "grid", base.grid, section),
        )

    @staticmethod
    def parse_name(name: str) -> "SyntheticTargetConfig":
        """`sin_4`, `sincos_2` or `linear` as used in sweep target lists."""
        if name == "linear":
            return SyntheticTargetConfig(function="linear")
        stem, _, order = name.rpartition("_")
        if stem not in ("sin", "sincos") or not order.isdigit():
            raise ConfigError(f"Unknown synthetic target: {name!r}")
        return SyntheticTargetConfig(function=f"{stem}_k", k=int(order))


@dataclass
class DatasetConfig:
    kind: str = DatasetKind.SYNTHETIC.value
    root: str = ""
    path: str = ""
    max_rows: int | None = None
    train_fraction: float = 0.8
    subset_rows: int | None = None
    synthetic: SyntheticTargetConfig = field(default_factory=SyntheticTargetConfig)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "root": self.root,
            "path": self.path,
            "max_rows": self.max_rows,
            "train_fraction": self.train_fraction,
            "subset_rows": self.subset_rows,
            "synthetic": self.synthetic.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "DatasetConfig | None" = None) -> "DatasetConfig":
        base = base or DatasetConfig()
        section = "dataset"
        _check_keys(data, section, set(base.to_dict()))
        return DatasetConfig(
            kind=_str(data, "kind", base.kind, section, tuple(kind.value for kind in DatasetKind)),
            root=_str(data, "root", base.root, section),
            path=_str(data, "path", base.path, section),
            max_rows=_optional_int(data, "max_rows", base.max_rows, section),
            train_fraction=_float(data, "train_fraction", base.train_fraction, section),
            subset_rows=_optional_int(data, "subset_rows", base.subset_rows, section),
            synthetic=SyntheticTargetConfig.from_dict(data.get("synthetic", {}), base.synthetic),
        )


@dataclass
class BernsteinConfig:
    degree: int = 9
    delta: float = 0.01
    lower: float = -3.0
    upper: float = 3.0
    init_mode: str = "unit_span"
    share: str = "per_neuron"
    parameterization: str = "constrained"
    straight_through_clamp: bool = False

    @property
    def floor(self) -> float:
        return self.degree * self.delta / (self.upper - self.lower)

    def to_dict(self) -> dict[str, Any]:
        return {
            "degree": self.degree,
            "delta": self.delta,
            "lower": self.lower,
            "upper": self.upper,
            "init_mode": self.init_mode,
            "share": self.share,
            "parameterization": self.parameterization,
            "straight_through_clamp": self.straight_through_clamp,
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "BernsteinConfig | None" = None) -> "BernsteinConfig":
        base = base or BernsteinConfig()
        section = "architecture.bernstein"
        _check_keys(data, section, set(base.to_dict()))
        return BernsteinConfig(
            degree=_int(data, "degree", base.degree, section),
            delta=_float(data, "delta", base.delta, section),
            lower=_float(data, "lower", base.lower, section),
            upper=_float(data, "upper", base.upper, section),
            init_mode=_str(data, "init_mode", base.init_mode, section, ("unit_span", "raw_identity")),
            share=_str(data, "share", base.share, section, ("per_neuron", "per_layer")),
            parameterization=_str(data, "parameterization", base.parameterization, section, ("constrained", "free")),
            straight_through_clamp=_bool(data, "straight_through_clamp", base.straight_through_clamp, section),
        )


@dataclass
class ArchitectureConfig:
    activation: str = "bernstein"
    depth: int = 2
    width: int = 16
    hidden: list[int] = field(default_factory=list)
    batch_norm: bool = True
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    bn_affine: bool = True
    bernstein: BernsteinConfig = field(default_factory=BernsteinConfig)

    @property
    def hidden_widths(self) -> list[int]:
        return list(self.hidden) if self.hidden else [self.width] * self.depth

    @property
    def label(self) -> str:
        if self.activation == "bernstein":
            cfg = self.bernstein
            tag = "" if cfg.parameterization == "constrained" else "_free"
            return f"bern{tag}(n={cfg.degree},delta={cfg.delta},[{cfg.lower},{cfg.upper}])"
        if self.activation == "leaky_relu":
            return f"leaky_relu({self.leaky_slope})"
        if self.activation == "selu" and not self.batch_norm:
            return "selu_no_bn"
        return self.activation

    def to_dict(self) -> dict[str, Any]:
        return {
            "activation": self.activation,
            "depth": self.depth,
            "width": self.width,
            "hidden": list(self.hidden),
            "batch_norm": self.batch_norm,
            "leaky_slope": self.leaky_slope,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
            "bn_affine": self.bn_affine,
            "bernstein": self.bernstein.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "ArchitectureConfig | None" = None) -> "ArchitectureConfig":
        base = base or ArchitectureConfig()
        section = "architecture"
        _check_keys(data, section, set(base.to_dict()))
        return ArchitectureConfig(
            activation=_str(data, "activation", base.activation, section, ACTIVATIONS),
            depth=_int(data, "depth", base.depth, section),
            width=_int(data, "width", base.width, section),
            hidden=_int_list(data, "hidden", base.hidden, section),
            batch_norm=_bool(data, "batch_norm", base.batch_norm, section),
            leaky_slope=_float(data, "leaky_slope", base.leaky_slope, section),
            bn_eps=_float(data, "bn_eps", base.bn_eps, section),
            bn_momentum=_float(data, "bn_momentum", base.bn_momentum, section),
            bn_affine=_bool(data, "bn_affine", base.bn_affine, section),
            bernstein=BernsteinConfig.from_dict(data.get("bernstein", {}), base.bernstein),
        )


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    decay_start_epoch: int = 5
    decay_batch_norm: bool = False
    decay_bernstein: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "decay_start_epoch": self.decay_start_epoch,
            "decay_batch_norm": self.decay_batch_norm,
            "decay_bernstein": self.decay_bernstein,
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "OptimizerConfig | None" = None) -> "OptimizerConfig":
        base = base or OptimizerConfig()
        section = "optimizer"
        _check_keys(data, section, set(base.to_dict()))
        return OptimizerConfig(
            lr=_float(data, "lr", base.lr, section),
            beta1=_float(data, "beta1", base.beta1, section),
            beta2=_float(data, "beta2", base.beta2, section),
            eps=_float(data, "eps", base.eps, section),
            weight_decay=_float(data, "weight_decay", base.weight_decay, section),
            decay_start_epoch=_int(data, "decay_start_epoch", base.decay_start_epoch, section),
            decay_batch_norm=_bool(data, "decay_batch_norm", base.decay_batch_norm, section),
            decay_bernstein=_bool(data, "decay_bernstein", base.decay_bernstein, section),
        )


@dataclass
class SchedulerConfig:
    kind: str = "exponential"
    factor: float = 0.5
    patience: int = 5
    min_delta: float = 0.0
    min_lr: float = 1e-6
    gamma: float = 0.95
    start_epoch: int = 5

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "factor": self.factor,
            "patience": self.patience,
            "min_delta": self.min_delta,
            "min_lr": self.min_lr,
            "gamma": self.gamma,
            "start_epoch": self.start_epoch,
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "SchedulerConfig | None" = None) -> "SchedulerConfig":
        base = base or SchedulerConfig()
        section = "scheduler"
        _check_keys(data, section, set(base.to_dict()))
        return SchedulerConfig(
            kind=_str(data, "kind", base.kind, section, SCHEDULERS),
            factor=_float(data, "factor", base.factor, section),
            patience=_int(data, "patience", base.patience, section),
            min_delta=_float(data, "min_delta", base.min_delta, section),
            min_lr=_float(data, "min_lr", base.min_lr, section),
            gamma=_float(data, "gamma", base.gamma, section),
            start_epoch=_int(data, "start_epoch", base.start_epoch, section),
        )


@dataclass
class EarlyStopConfig:
    enabled: bool = True
    patience: int = 15
    min_delta: float = 1e-3

    def to_dict(self) -> dict[str, Any]:
        return {"enabled": self.enabled, "patience": self.patience, "min_delta": self.min_delta}

    @staticmethod
    def from_dict(data: dict[str, Any], base: "EarlyStopConfig | None" = None) -> "EarlyStopConfig":
        base = base or EarlyStopConfig()
        section = "early_stop"
        _check_keys(data, section, set(base.to_dict()))
        return EarlyStopConfig(
            enabled=_bool(data, "enabled", base.enabled, section),
            patience=_int(data, "patience", base.patience, section),
            min_delta=_float(data, "min_delta", base.min_delta, section),
        )


@dataclass
class DiagnosticsConfig:
    dead_threshold: float = 1e-7
    stride: int = 1
    checkpoint: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {"dead_threshold": self.dead_threshold, "stride": self.stride, "checkpoint": self.checkpoint}

    @staticmethod
    def from_dict(data: dict[str, Any], base: "DiagnosticsConfig | None" = None) -> "DiagnosticsConfig":
        base = base or DiagnosticsConfig()
        section = "diagnostics"
        _check_keys(data, section, set(base.to_dict()))
        return DiagnosticsConfig(
            dead_threshold=_float(data, "dead_threshold", base.dead_threshold, section),
            stride=_int(data, "stride", base.stride, section),
            checkpoint=_bool(data, "checkpoint", base.checkpoint, section),
        )


@dataclass
class SweepConfig:
    depths: list[int] = field(default_factory=list)
    degrees: list[int] = field(default_factory=lambda: [5])
    targets: list[str] = field(default_factory=lambda: ["sin_4"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    matched_relu: bool = True
    leaky_slopes: list[float] = field(default_factory=lambda: [0.005, 0.01, 0.05, 0.1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "depths": list(self.depths),
            "degrees": list(self.degrees),
            "targets": list(self.targets),
            "seeds": list(self.seeds),
            "matched_relu": self.matched_relu,
            "leaky_slopes": list(self.leaky_slopes),
        }

    @staticmethod
    def from_dict(data: dict[str, Any], base: "SweepConfig | None" = None) -> "SweepConfig":
        base = base or SweepConfig()
        section = "sweep"
        _check_keys(data, section, set(base.to_dict()))
        return SweepConfig(
            depths=_int_list(data, "depths", base.depths, section),
            degrees=_int_list(data, "degrees", base.degrees, section),
            targets=_str_list(data, "targets", base.targets, section),
            seeds=_int_list(data, "seeds", base.seeds, section),
            matched_relu=_bool(data, "matched_relu", base.matched_relu, section),
            leaky_slopes=_float_list(data, "leaky_slopes", base.leaky_slopes, section),
        )


@dataclass
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    epochs: int = 200
    batch_size: int = 256
    out_dir: str = "runs"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def metric(self) -> MetricKind:
        if self.dataset.kind == DatasetKind.HIGGS_CSV.value:
            return MetricKind.AUC
        if self.dataset.kind == DatasetKind.MNIST.value:
            return MetricKind.ACCURACY
        return MetricKind.LOSS

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "out_dir": self.out_dir,
            "dataset": self.dataset.to_dict(),
            "architecture": self.architecture.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "scheduler": self.scheduler.to_dict(),
            "early_stop": self.early_stop.to_dict(),
            "diagnostics": self.diagnostics.to_dict(),
            "sweep": self.sweep.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "ExperimentConfig":
        section = "experiment"
        _check_keys(data, section, set(ExperimentConfig().to_dict()))
        dataset_raw = data.get("dataset", {})
        _check_keys(dataset_raw, "dataset", set(DatasetConfig().to_dict()))
        kind = _str(dataset_raw, "kind", DatasetKind.SYNTHETIC.value, "dataset", tuple(k.value for k in DatasetKind))
        base = protocol_defaults(kind)
        return ExperimentConfig(
            name=_str(data, "name", base.name, section),
            seed=_int(data, "seed", base.seed, section),
            epochs=_int(data, "epochs", base.epochs, section),
            batch_size=_int(data, "batch_size", base.batch_size, section),
            out_dir=_str(data, "out_dir", base.out_dir, section),
            dataset=DatasetConfig.from_dict(dataset_raw, base.dataset),
            architecture=ArchitectureConfig.from_dict(data.get("architecture", {}), base.architecture),
            optimizer=OptimizerConfig.from_dict(data.get("optimizer", {}), base.optimizer),
            scheduler=SchedulerConfig.from_dict(data.get("scheduler", {}), base.scheduler),
            early_stop=EarlyStopConfig.from_dict(data.get("early_stop", {}), base.early_stop),
            diagnostics=DiagnosticsConfig.from_dict(data.get("diagnostics", {}), base.diagnostics),
            sweep=SweepConfig.from_dict(data.get("sweep", {}), base.sweep),
        )

    def replace(self, **overrides: Any) -> "ExperimentConfig":
        clone = copy.deepcopy(self)
        for key, value in overrides.items():
            setattr(clone, key, value)
        return clone


def protocol_defaults(kind: str) -> ExperimentConfig:
    """Training protocol of each dataset; every config key overlays one of these."""
    if kind == DatasetKind.HIGGS_CSV.value:
        return ExperimentConfig(
            name="higgs",
            epochs=10,
            batch_size=2048,
            dataset=DatasetConfig(kind=kind, max_rows=100_000, train_fraction=0.8),
            architecture=ArchitectureConfig(depth=50, width=100),
            optimizer=OptimizerConfig(lr=1e-4, weight_decay=1e-4, decay_start_epoch=5),
            scheduler=SchedulerConfig(kind="plateau", factor=0.5, patience=5, min_lr=1e-6),
            early_stop=EarlyStopConfig(enabled=True, patience=20, min_delta=1e-4),
        )
    if kind == DatasetKind.MNIST.value:
        return ExperimentConfig(
            name="mnist",
            epochs=10,
            batch_size=64,
            dataset=DatasetConfig(kind=kind),
            architecture=ArchitectureConfig(depth=50, width=50),
            optimizer=OptimizerConfig(lr=2e-3, weight_decay=1e-4, decay_start_epoch=5),
            scheduler=SchedulerConfig(kind="exponential", gamma=0.95, start_epoch=5),
            early_stop=EarlyStopConfig(enabled=True, patience=15, min_delta=1e-3),
        )
    if kind == DatasetKind.SYNTHETIC.value:
        return ExperimentConfig(
            name="synthetic",
            epochs=200,
            batch_size=256,
            dataset=DatasetConfig(kind=kind),
            architecture=ArchitectureConfig(depth=1, width=16, bernstein=BernsteinConfig(degree=5)),
            optimizer=OptimizerConfig(lr=1e-2, weight_decay=0.0, decay_start_epoch=0),
            scheduler=SchedulerConfig(kind="none"),
            early_stop=EarlyStopConfig(enabled=False, patience=50, min_delta=0.0),
        )
    raise ConfigError(f"Unknown dataset kind: {kind!r}")


def config_fingerprint(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def config_set_fingerprint(configs: list[ExperimentConfig]) -> str:
    canonical = json.dumps([config.to_dict() for config in configs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
