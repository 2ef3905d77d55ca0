from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit


class BernsteinDomainError(ValueError):
    pass


class InitMode(str, Enum):
    UNIT_SPAN = "unit_span"
    RAW_IDENTITY = "raw_identity"


@dataclass(frozen=True)
class BernsteinActivationSpec:
    n: int
    l: float = -3.0
    u: float = 3.0
    delta: float = 0.01

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise BernsteinDomainError(f"degree must be an integer >= 1, got {self.n}")
        if not self.u > self.l:
            raise BernsteinDomainError(f"interval upper bound must exceed lower: [{self.l}, {self.u}]")
        if not self.delta > 0:
            raise BernsteinDomainError(f"margin delta must be > 0, got {self.delta}")

    @property
    def width(self) -> float:
        return self.u - self.l

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.l) / (self.u - self.l)

    def to_dict(self) -> dict:
        return {"n": self.n, "l": self.l, "u": self.u, "delta": self.delta}

    @staticmethod
    def from_dict(data: dict) -> "BernsteinActivationSpec":
        return BernsteinActivationSpec(
            n=int(data["n"]),
            l=float(data["l"]),
            u=float(data["u"]),
            delta=float(data["delta"]),
        )


@dataclass
class ConstrainedCoefficients:
    """Base value c0 and latent steps rho; rho has one more trailing axis than c0."""

    c0: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        self.c0 = np.asarray(self.c0, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.ndim != self.c0.ndim + 1 or self.rho.shape[:-1] != self.c0.shape:
            raise BernsteinDomainError(f"rho shape {self.rho.shape} does not match c0 shape {self.c0.shape}")

    @property
    def degree(self) -> int:
        return self.rho.shape[-1]


@dataclass(frozen=True)
class DerivativeBounds:
    m_lower: np.ndarray | float
    m_upper: np.ndarray | float


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise BernsteinDomainError(f"softplus inverse needs y > 0, got {y.min() if y.ndim else float(y)}")
    out = y + np.log(-np.expm1(-y))
    return out if out.ndim else float(out)


def _check_range(spec: BernsteinActivationSpec, x: np.ndarray) -> None:
    if x.size and (np.min(x) < spec.l or np.max(x) > spec.u):
        low, high = float(np.min(x)), float(np.max(x))
        raise BernsteinDomainError(f"input outside [{spec.l}, {spec.u}]: observed range [{low}, {high}]")


def _basis_on_t(t: np.ndarray, degree: int) -> np.ndarray:
    # Triangular recurrence b_{j,k} = (1-t) b_{j-1,k} + t b_{j-1,k-1}.
    s = 1.0 - t
    basis = np.zeros(t.shape + (degree + 1,), dtype=np.float64)
    basis[..., 0] = 1.0
    for j in range(1, degree + 1):
        basis[..., j] = t * basis[..., j - 1]
        for k in range(j - 1, 0, -1):
            basis[..., k] = s * basis[..., k] + t * basis[..., k - 1]
        basis[..., 0] = s * basis[..., 0]
    return basis


def basis_eval_all(spec: BernsteinActivationSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_range(spec, x)
    return _basis_on_t(spec.normalize(x), spec.n)


def _check_coefficients(c: np.ndarray, spec: BernsteinActivationSpec) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != spec.n + 1:
        raise BernsteinDomainError(f"expected {spec.n + 1} coefficients, got {c.shape[-1]}")
    return c


def poly_eval(c, spec: BernsteinActivationSpec, x):
    c = _check_coefficients(c, spec)
    out = np.sum(basis_eval_all(spec, x) * c, axis=-1)
    return out if out.ndim else float(out)


def poly_derivative(c, spec: BernsteinActivationSpec, x):
    c = _check_coefficients(c, spec)
    x = np.asarray(x, dtype=np.float64)
    _check_range(spec, x)
    lower = _basis_on_t(spec.normalize(x), spec.n - 1)
    out = spec.n / spec.width * np.sum(np.diff(c, axis=-1) * lower, axis=-1)
    return out if out.ndim else float(out)


def reconstruct_coefficients(cc: ConstrainedCoefficients, delta: float) -> np.ndarray:
    steps = softplus(cc.rho) + delta
    cumulative = np.cumsum(steps, axis=-1)
    base = cc.c0[..., None]
    return np.concatenate([base, base + cumulative], axis=-1)


def init_rho(spec: BernsteinActivationSpec, mode: InitMode | str = InitMode.UNIT_SPAN) -> ConstrainedCoefficients:
    mode = InitMode(mode)
    if mode == InitMode.UNIT_SPAN:
        step, c0 = 1.0 / spec.n, 0.0
    else:
        step, c0 = spec.width / spec.n, spec.l
    if not spec.delta < step:
        raise BernsteinDomainError(f"delta {spec.delta} too large for {mode.value} init (needs delta < {step})")
    rho = np.full(spec.n, softplus_inverse(step - spec.delta))
    return ConstrainedCoefficients(c0=np.asarray(c0), rho=rho)


def identity_coefficients(spec: BernsteinActivationSpec, mode: InitMode | str = InitMode.UNIT_SPAN) -> np.ndarray:
    return reconstruct_coefficients(init_rho(spec, mode), spec.delta)


def derivative_bounds(c, spec: BernsteinActivationSpec) -> DerivativeBounds:
    c = _check_coefficients(c, spec)
    steps = np.diff(c, axis=-1)
    scale = spec.n / spec.width
    lower, upper = scale * np.min(steps, axis=-1), scale * np.max(steps, axis=-1)
    if lower.ndim == 0:
        return DerivativeBounds(float(lower), float(upper))
    return DerivativeBounds(lower, upper)


def theoretical_lower_bound(spec: BernsteinActivationSpec) -> float:
    return spec.n * spec.delta / spec.width


def upper_bound_check(c, spec: BernsteinActivationSpec, samples: int) -> bool:
    """|sigma'| <= 2n max|c_k| at `samples` evenly spaced points of [l, u]."""
    if samples < 1:
        raise BernsteinDomainError(f"samples must be >= 1, got {samples}")
    c = _check_coefficients(c, spec)
    points = np.linspace(spec.l, spec.u, samples)
    slopes = np.abs(poly_derivative(c, spec, points))
    return bool(np.all(slopes <= 2 * spec.n * np.max(np.abs(c))))


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = np.sum(grad, axis=tuple(range(extra)))
    return grad


def activation_backward(cc: ConstrainedCoefficients, spec: BernsteinActivationSpec, x, upstream):
    """Gradients of sum(upstream * sigma(x)) w.r.t. x, c0 and rho.

    Parameter gradients are summed over the leading sample axes of x so they
    take the shapes of cc.c0 and cc.rho.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    c = reconstruct_coefficients(cc, spec.delta)
    basis = basis_eval_all(spec, x)
    grad_x = upstream * poly_derivative(c, spec, x)
    grad_c0 = _reduce_to(upstream * np.sum(basis, axis=-1), cc.c0.shape)
    # tail[..., j] = sum_{k > j} b_{n,k}
    tail = np.cumsum(basis[..., :0:-1], axis=-1)[..., ::-1]
    grad_rho = _reduce_to(upstream[..., None] * tail, cc.rho.shape) * expit(cc.rho)
    return grad_x, grad_c0, grad_rho


def free_coefficient_backward(c, spec: BernsteinActivationSpec, x, upstream):
    c = _check_coefficients(c, spec)
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    grad_x = upstream * poly_derivative(c, spec, x)
    grad_c = _reduce_to(upstream[..., None] * basis_eval_all(spec, x), c.shape)
    return grad_x, grad_c


def check_diagonal_bound(layer_coeffs, spec: BernsteinActivationSpec, atol: float = 1e-12) -> tuple[bool, list[int]]:
    coeffs = np.atleast_2d(_check_coefficients(layer_coeffs, spec))
    floor = theoretical_lower_bound(spec)
    bounds = derivative_bounds(coeffs, spec)
    increasing = np.asarray(bounds.m_lower) >= floor - atol
    decreasing = np.asarray(bounds.m_upper) <= -floor + atol
    violating = np.flatnonzero(~(increasing | decreasing))
    return violating.size == 0, [int(i) for i in violating]
