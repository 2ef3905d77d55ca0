from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from app.network import ForwardCache
from app.numcore import row_argmax

LOGGER = logging.getLogger(__name__)

DEFAULT_DEAD_THRESHOLD = 1e-7

METRICS_COLUMNS = [
    "epoch",
    "train_loss",
    "val_metric",
    "lr",
    "first_layer_mag",
    "min_abs_derivative",
    "max_dead_ratio",
    "max_clamp_saturation",
]
HEATMAP_COLUMNS = ["epoch", "layer_index", "dead_ratio", "min_abs_derivative"]
DEPTH_PROFILE_COLUMNS = ["layer_index", "min_abs_derivative", "dead_ratio", "clamp_saturation", "theoretical_bound"]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DeadNeuronPolicy:
    threshold: float = DEFAULT_DEAD_THRESHOLD

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise MetricError(f"dead-neuron threshold must be > 0, got {self.threshold}")


def _derivative_entries(cache: ForwardCache) -> list[tuple[str, np.ndarray]]:
    if cache.mode != "train":
        raise MetricError("activation statistics need a train-mode cache")
    return [(path, cache.entries[path]["derivative"]) for path in cache.activation_paths]


def min_abs_derivative(cache: ForwardCache) -> dict[str, float]:
    """Per activation layer: min over samples and neurons of |sigma'|."""
    return {path: float(np.min(np.abs(d))) if d.size else float("nan") for path, d in _derivative_entries(cache)}


def dead_neuron_ratio(cache: ForwardCache, policy: DeadNeuronPolicy = DeadNeuronPolicy()) -> dict[str, float]:
    ratios = {}
    for path, derivative in _derivative_entries(cache):
        per_neuron = np.mean(np.abs(derivative), axis=0)
        ratios[path] = float(np.count_nonzero(per_neuron < policy.threshold) / per_neuron.size)
    return ratios


def clamp_saturation(cache: ForwardCache) -> dict[str, float]:
    return {path: float(cache.entries[path]["saturation"]) for path in cache.clamp_paths}


def first_layer_mag(grads: Iterable[np.ndarray]) -> float:
    """Mean |dL/d(first activation output)| over every sample and neuron given."""
    total, count = 0.0, 0
    for grad in grads:
        total += float(np.sum(np.abs(grad)))
        count += grad.size
    return total / count if count else 0.0


def compute_auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    positive = labels == 1
    n_pos = int(np.count_nonzero(positive))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC needs both classes, got {n_pos} positive and {n_neg} negative")
    ranks = rankdata(scores)
    return float((np.sum(ranks[positive]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_accuracy(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise MetricError(f"{logits.shape[0]} logit rows for {labels.shape[0]} labels")
    if labels.size == 0:
        raise MetricError("accuracy of an empty set")
    return float(np.mean(row_argmax(logits) == labels))


@dataclass
class DiagnosticsRecord:
    epoch: int
    min_derivative: list[float]
    dead_ratio: list[float]
    clamp_saturation: list[float] = field(default_factory=list)
    first_layer_mag: float = 0.0
    train_loss: float = float("nan")
    val_metric: float = float("nan")
    lr: float = 0.0

    def metrics_row(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_metric": self.val_metric,
            "lr": self.lr,
            "first_layer_mag": self.first_layer_mag,
            "min_abs_derivative": min(self.min_derivative) if self.min_derivative else "",
            "max_dead_ratio": max(self.dead_ratio) if self.dead_ratio else "",
            "max_clamp_saturation": max(self.clamp_saturation) if self.clamp_saturation else "",
        }


class DiagnosticsAccumulator:
    """Reduce per-batch statistics into one record per epoch."""

    def __init__(self, policy: DeadNeuronPolicy = DeadNeuronPolicy(), stride: int = 1):
        self.policy = policy
        self.stride = max(1, stride)
        self.reset()

    def reset(self) -> None:
        self._batch = 0
        self._min: dict[str, float] = {}
        self._dead: dict[str, list[float]] = {}
        self._saturation: dict[str, list[float]] = {}
        self._paths: list[str] = []
        self._clamps: list[str] = []
        self._mag_total = 0.0
        self._mag_count = 0

    def add_batch(self, cache: ForwardCache, activation_grads: dict[str, np.ndarray] | None = None) -> None:
        self._batch += 1
        if (self._batch - 1) % self.stride:
            return
        if not self._paths:
            self._paths = list(cache.activation_paths)
            self._clamps = list(cache.clamp_paths)
        for path, value in min_abs_derivative(cache).items():
            self._min[path] = min(value, self._min.get(path, float("inf")))
        for path, value in dead_neuron_ratio(cache, self.policy).items():
            self._dead.setdefault(path, []).append(value)
        for path, value in clamp_saturation(cache).items():
            self._saturation.setdefault(path, []).append(value)
        if activation_grads and self._paths:
            grad = activation_grads[self._paths[0]]
            self._mag_total += first_layer_mag([grad]) * grad.size
            self._mag_count += grad.size

    def finish(self, epoch: int, train_loss: float, val_metric: float, lr: float) -> DiagnosticsRecord:
        record = DiagnosticsRecord(
            epoch=epoch,
            min_derivative=[self._min.get(path, float("nan")) for path in self._paths],
            dead_ratio=[float(np.mean(self._dead[path])) if self._dead.get(path) else 0.0 for path in self._paths],
            clamp_saturation=[float(np.mean(self._saturation.get(path, [0.0]))) for path in self._clamps],
            first_layer_mag=self._mag_total / self._mag_count if self._mag_count else 0.0,
            train_loss=float(train_loss),
            val_metric=float(val_metric),
            lr=float(lr),
        )
        self.reset()
        return record


# ---------------------------------------------------------------- exports


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path: str | Path, fieldnames: Sequence[str], rows: Iterable[dict[str, Any]], fingerprint: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(value) for key, value in row.items()})
    LOGGER.info("Wrote %s", path)
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def export_metrics_csv(records: Sequence[DiagnosticsRecord], path: str | Path, fingerprint: str) -> Path:
    if not records:
        raise MetricError("no records to export")
    return write_csv(path, METRICS_COLUMNS, (record.metrics_row() for record in records), fingerprint)


def export_heatmap_csv(records: Sequence[DiagnosticsRecord], path: str | Path, fingerprint: str) -> Path:
    if not records:
        raise MetricError("no records to export")
    rows = []
    for record in records:
        for index, (dead, minimum) in enumerate(zip(record.dead_ratio, record.min_derivative), start=1):
            rows.append({"epoch": record.epoch, "layer_index": index, "dead_ratio": dead, "min_abs_derivative": minimum})
    return write_csv(path, HEATMAP_COLUMNS, rows, fingerprint)


def export_depth_profile_csv(
    records: Sequence[DiagnosticsRecord],
    path: str | Path,
    fingerprint: str,
    theoretical_bound: float | None = None,
) -> Path:
    if not records:
        raise MetricError("no records to export")
    final = records[-1]
    saturation = final.clamp_saturation or [""] * len(final.min_derivative)
    rows = [
        {
            "layer_index": index,
            "min_abs_derivative": minimum,
            "dead_ratio": dead,
            "clamp_saturation": saturation[index - 1] if index - 1 < len(saturation) else "",
            "theoretical_bound": "" if theoretical_bound is None else theoretical_bound,
        }
        for index, (minimum, dead) in enumerate(zip(final.min_derivative, final.dead_ratio), start=1)
    ]
    return write_csv(path, DEPTH_PROFILE_COLUMNS, rows, fingerprint)


# ---------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "bernnet"
    return plt


def plot_series(
    path: str | Path,
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    log_y: bool = False,
    reference: float | None = None,
) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        ax.plot(x, values, marker="o", markersize=3, label=label)
    if reference is not None:
        ax.axhline(reference, color="black", linestyle="--", linewidth=1, label="theoretical bound")
    if log_y:
        ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def plot_heatmap(path: str | Path, records: Sequence[DiagnosticsRecord], title: str = "") -> Path:
    plt = _pyplot()
    grid = np.array([record.dead_ratio for record in records], dtype=np.float64).T
    fig, ax = plt.subplots(figsize=(6, 4))
    image = ax.imshow(grid, aspect="auto", origin="lower", vmin=0.0, vmax=1.0, cmap="magma")
    ax.set_xlabel("epoch")
    ax.set_ylabel("layer")
    ax.set_xticks(range(len(records)), [str(record.epoch) for record in records])
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax, label="dead ratio")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
