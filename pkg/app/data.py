from __future__ import annotations

import csv
import gzip
import io
import logging
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.spatial.distance import pdist

from app.models import SyntheticTargetConfig
from app.numcore import Matrix, Rng

LOGGER = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_HEADER = ">IIII"
IDX_LABELS_HEADER = ">II"
GZIP_MAGIC = b"\x1f\x8b"
MNIST_CLASSES = 10
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

HIGGS_COLUMNS = 29
VARIANCE_FLOOR = 1e-8

SyntheticTarget = SyntheticTargetConfig


class DatasetError(ValueError):
    pass


class IdxFormatError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: Matrix
    targets: np.ndarray
    split: str = "full"
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.targets.shape[0]:
            raise DatasetError(f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def output_width(self) -> int:
        if self.num_classes is None:
            return 1 if self.targets.ndim == 1 else self.targets.shape[1]
        return 1 if self.num_classes == 2 else self.num_classes

    def rows(self, index: np.ndarray, split: str | None = None) -> "Dataset":
        return replace(self, features=self.features[index], targets=self.targets[index], split=split or self.split)

    def head(self, count: int) -> "Dataset":
        return self.rows(np.arange(min(count, len(self))))


def data_root(configured: str = "") -> Path:
    return Path(os.getenv("BERNNET_DATA_ROOT") or configured or "data")


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"File not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DatasetError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


# ---------------------------------------------------------------- IDX


def build_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images)
    if images.ndim != 3:
        raise IdxFormatError(f"images must be (count, rows, cols), got shape {images.shape}")
    count, rows, cols = images.shape
    header = struct.pack(IDX_IMAGES_HEADER, IDX_IMAGES_MAGIC, count, rows, cols)
    return header + images.astype(np.uint8).tobytes()


def build_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    return struct.pack(IDX_LABELS_HEADER, IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Rows of flattened uint8 pixels."""
    header_size = struct.calcsize(IDX_IMAGES_HEADER)
    if len(raw) < header_size:
        raise IdxFormatError(f"image file truncated: {len(raw)} bytes, header needs {header_size}")
    magic, count, rows, cols = struct.unpack(IDX_IMAGES_HEADER, raw[:header_size])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"bad image magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})")
    expected = count * rows * cols
    body = raw[header_size:]
    if len(body) < expected:
        raise IdxFormatError(f"image file truncated: {len(body)} pixel bytes, header promises {expected}")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(count, rows * cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    header_size = struct.calcsize(IDX_LABELS_HEADER)
    if len(raw) < header_size:
        raise IdxFormatError(f"label file truncated: {len(raw)} bytes, header needs {header_size}")
    magic, count = struct.unpack(IDX_LABELS_HEADER, raw[:header_size])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"bad label magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})")
    body = raw[header_size:]
    if len(body) < count:
        raise IdxFormatError(f"label file truncated: {len(body)} labels, header promises {count}")
    labels = np.frombuffer(body, dtype=np.uint8, count=count)
    if count and int(labels.max()) >= MNIST_CLASSES:
        bad = int(np.flatnonzero(labels >= MNIST_CLASSES)[0])
        raise IdxFormatError(f"label {int(labels[bad])} at index {bad} is outside 0..{MNIST_CLASSES - 1}")
    return labels


def load_mnist(images_path: str | Path, labels_path: str | Path, split: str = "train") -> Dataset:
    pixels = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    if pixels.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{pixels.shape[0]} images but {labels.shape[0]} labels")
    LOGGER.info("Loaded %d MNIST images from %s", pixels.shape[0], images_path)
    return Dataset(
        features=pixels.astype(np.float64) / 255.0,
        targets=labels.astype(np.int64),
        split=split,
        num_classes=MNIST_CLASSES,
    )


def _find_file(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise DatasetError(f"MNIST file {stem} not found under {root}")


def load_mnist_splits(root: str | Path) -> tuple[Dataset, Dataset]:
    """Canonical 60k/10k split: train files vs t10k files."""
    root = Path(root)
    splits = []
    for split, (images, labels) in MNIST_FILES.items():
        splits.append(load_mnist(_find_file(root, images), _find_file(root, labels), split=split))
    return splits[0], splits[1]


def mnist_available(root: str | Path) -> bool:
    root = Path(root)
    try:
        for images, labels in MNIST_FILES.values():
            _find_file(root, images)
            _find_file(root, labels)
    except DatasetError:
        return False
    return True


# ---------------------------------------------------------------- HIGGS


def load_higgs_csv(path: str | Path, max_rows: int | None = None) -> Dataset:
    """Label followed by 28 features per row; values are returned unnormalized."""
    text = _read_bytes(path).decode("ascii", errors="replace")
    rows: list[list[float]] = []
    for line_number, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if max_rows is not None and len(rows) >= max_rows:
            break
        if not record:
            continue
        if len(record) != HIGGS_COLUMNS:
            raise DatasetError(f"{path}:{line_number}: expected {HIGGS_COLUMNS} columns, found {len(record)}")
        values = []
        for column, field in enumerate(record):
            try:
                values.append(float(field))
            except ValueError:
                raise DatasetError(f"{path}:{line_number}: column {column} is not numeric: {field!r}") from None
        if values[0] not in (0.0, 1.0):
            raise DatasetError(f"{path}:{line_number}: label must be 0 or 1, got {record[0]!r}")
        rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    LOGGER.info("Loaded %d HIGGS rows from %s", table.shape[0], path)
    return Dataset(features=table[:, 1:].copy(), targets=table[:, 0].astype(np.int64), num_classes=2)


# ---------------------------------------------------------------- splits and scaling


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < fraction < 1:
        raise DatasetError(f"split fraction must lie in (0, 1), got {fraction}")
    count = len(dataset)
    order = Rng(seed).permutation(count)
    cut = int(np.floor(fraction * count + 0.5))
    return dataset.rows(order[:cut], "train"), dataset.rows(order[cut:], "validation")


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray


def feature_stats(train: Dataset) -> FeatureStats:
    mean = np.mean(train.features, axis=0)
    var = np.mean((train.features - mean) ** 2, axis=0)
    return FeatureStats(mean=mean, std=np.sqrt(np.maximum(var, VARIANCE_FLOOR)))


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Z-score every split with statistics of `train` only."""
    stats = feature_stats(train)
    return tuple(
        replace(item, features=(item.features - stats.mean) / stats.std) for item in (train, *others)
    )


class BatchIterator:
    def __init__(self, dataset: Dataset, batch_size: int, seed: int, shuffle: bool = True):
        if batch_size < 1:
            raise DatasetError(f"batch size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = Rng(seed)
        self.shuffle = shuffle
        self.epoch = 0

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return self.rng.derive(epoch).permutation(len(self.dataset))

    def __iter__(self) -> Iterator[tuple[Matrix, np.ndarray]]:
        self.epoch += 1
        order = self.order(self.epoch)
        for start in range(0, len(order), self.batch_size):
            index = order[start:start + self.batch_size]
            yield self.dataset.features[index], self.dataset.targets[index]


# ---------------------------------------------------------------- synthetic targets


def target_values(target: SyntheticTarget, x: np.ndarray) -> np.ndarray:
    """(N, outputs) values of the target function at x."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    phase = 2.0 * np.pi * target.k * x
    if target.function == "sin_k":
        return np.sin(phase)[:, None]
    if target.function == "sincos_k":
        return np.stack([np.sin(phase), np.cos(phase)], axis=1)
    if target.function == "linear":
        return x[:, None].copy()
    raise DatasetError(f"Unknown synthetic target function: {target.function!r}")


def synth_regression(target: SyntheticTarget, seed: int) -> Dataset:
    if not target.upper > target.lower:
        raise DatasetError(f"empty domain [{target.lower}, {target.upper}]")
    rng = Rng(seed)
    if target.grid:
        x = np.linspace(target.lower, target.upper, target.samples)
    else:
        x = rng.derive(1).uniform(target.lower, target.upper, target.samples)
    y = target_values(target, x)
    if target.noise > 0:
        y = y + rng.derive(2).normal(y.shape[0], y.shape[1], 0.0, target.noise)
    return Dataset(features=x.reshape(-1, 1), targets=y, split="train")


def modulus_estimate(x, y, delta: float) -> float:
    """Largest |f(a) - f(b)| over sample pairs with |a - b| <= delta; sup-norm across outputs."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    if x.shape[0] < 2 or x.shape[0] != y.shape[0]:
        raise DatasetError(f"need >= 2 paired samples, got {x.shape[0]} inputs and {y.shape[0]} values")
    if not delta > 0:
        raise DatasetError(f"delta must be > 0, got {delta}")
    gaps = pdist(x, metric="chebyshev")
    swings = pdist(y, metric="chebyshev")
    close = gaps <= delta * (1.0 + 1e-12)
    return float(np.max(swings[close])) if np.any(close) else 0.0
