from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import numpy.typing as npt

Matrix = npt.NDArray[np.float64]

_validation = os.getenv("BERNNET_VALIDATE", "1").strip().lower() not in {"0", "false", "no", "off"}


class NumericError(ValueError):
    pass


class ShapeError(NumericError):
    pass


class NonFiniteError(NumericError):
    pass


def validation_enabled() -> bool:
    return _validation


def _set_validation(enabled: bool) -> None:
    global _validation
    _validation = bool(enabled)


@contextmanager
def validation_mode(enabled: bool) -> Iterator[None]:
    previous = _validation
    _set_validation(enabled)
    try:
        yield
    finally:
        _set_validation(previous)


def check_finite(value: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(value)):
        bad = int(np.size(value) - np.count_nonzero(np.isfinite(value)))
        raise NonFiniteError(f"{what}: {bad} non-finite entries")
    return value


def as_matrix(data, what: str = "matrix") -> Matrix:
    """Return a C-contiguous 2-D float64 copy-free view when possible."""
    array = np.ascontiguousarray(data, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise ShapeError(f"{what}: expected 2-D data, got {array.ndim}-D")
    if _validation:
        check_finite(array, what)
    return array


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a, b)
    if _validation:
        check_finite(out, "matmul")
    return out


def column_sum(a: Matrix) -> np.ndarray:
    return np.sum(a, axis=0)


def column_mean(a: Matrix) -> np.ndarray:
    return np.sum(a, axis=0) / a.shape[0]


def row_argmax(a: Matrix) -> np.ndarray:
    return np.argmax(a, axis=1)


class Rng:
    """Seeded generator: NumPy Philox-4x64-10 (counter based) keyed through SeedSequence.

    Normal draws use NumPy's ziggurat sampler. For a given NumPy release the
    stream is identical on every platform.
    """

    def __init__(self, seed: int, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        entropy = [self.seed, *self.keys]
        self._generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def derive(self, *keys: int) -> "Rng":
        return Rng(self.seed, *self.keys, *keys)

    def normal(self, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> Matrix:
        if stddev < 0:
            raise NumericError(f"stddev must be >= 0, got {stddev}")
        draws = self._generator.standard_normal((rows, cols))
        return mean + stddev * draws

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def permutation(self, count: int) -> np.ndarray:
        return self._generator.permutation(count)


def rng_normal(rng: Rng, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> Matrix:
    return rng.normal(rows, cols, mean, stddev)
