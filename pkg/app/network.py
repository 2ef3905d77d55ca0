from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Union

import numpy as np
from scipy.special import expit, logsumexp, ndtr

from app import bernstein
from app.bernstein import (
    BernsteinActivationSpec,
    ConstrainedCoefficients,
    InitMode,
)
from app.models import ArchitectureConfig
from app.numcore import Matrix, Rng, ShapeError, as_matrix, check_finite, column_mean, column_sum, matmul, validation_enabled

LOGGER = logging.getLogger(__name__)

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805
FAULT_SCALE = 1.1


class NetworkError(ValueError):
    pass


class StaleCacheError(NetworkError):
    pass


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    SELU = "selu"
    GELU = "gelu"
    BERNSTEIN = "bernstein"


class CoefficientSharing(str, Enum):
    PER_NEURON = "per_neuron"
    PER_LAYER = "per_layer"


class Parameterization(str, Enum):
    CONSTRAINED = "constrained"
    FREE = "free"


@dataclass(frozen=True)
class LinearSpec:
    in_features: int
    out_features: int
    kind: str = field(default="linear", init=False)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}


@dataclass(frozen=True)
class BatchNormSpec:
    features: int
    eps: float = 1e-5
    momentum: float = 0.1
    affine: bool = True
    kind: str = field(default="batch_norm", init=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "features": self.features,
            "eps": self.eps,
            "momentum": self.momentum,
            "affine": self.affine,
        }


@dataclass(frozen=True)
class ClampSpec:
    l: float
    u: float
    straight_through: bool = False
    kind: str = field(default="clamp", init=False)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "l": self.l, "u": self.u, "straight_through": self.straight_through}


@dataclass(frozen=True)
class ActivationSpec:
    activation: ActivationKind
    slope: float = 0.01
    bernstein: BernsteinActivationSpec | None = None
    share: CoefficientSharing = CoefficientSharing.PER_NEURON
    parameterization: Parameterization = Parameterization.CONSTRAINED
    init_mode: InitMode = InitMode.UNIT_SPAN
    kind: str = field(default="activation", init=False)

    def __post_init__(self) -> None:
        if self.activation == ActivationKind.BERNSTEIN and self.bernstein is None:
            raise NetworkError("Bernstein activation needs a BernsteinActivationSpec")

    @property
    def label(self) -> str:
        if self.activation == ActivationKind.LEAKY_RELU:
            return f"leaky_relu({self.slope})"
        if self.activation == ActivationKind.BERNSTEIN:
            spec = self.bernstein
            return f"bernstein(n={spec.n},delta={spec.delta},[{spec.l},{spec.u}])"
        return self.activation.value

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "activation": self.activation.value,
            "slope": self.slope,
            "bernstein": self.bernstein.to_dict() if self.bernstein else None,
            "share": self.share.value,
            "parameterization": self.parameterization.value,
            "init_mode": self.init_mode.value,
        }


@dataclass(frozen=True)
class ResidualSpec:
    inner: tuple
    kind: str = field(default="residual", init=False)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "inner": [layer.to_dict() for layer in self.inner]}


LayerSpec = Union[LinearSpec, BatchNormSpec, ClampSpec, ActivationSpec, ResidualSpec]


def layer_from_dict(data: dict[str, Any]) -> LayerSpec:
    kind = data.get("kind")
    if kind == "linear":
        return LinearSpec(int(data["in"]), int(data["out"]))
    if kind == "batch_norm":
        return BatchNormSpec(
            features=int(data["features"]),
            eps=float(data["eps"]),
            momentum=float(data["momentum"]),
            affine=bool(data["affine"]),
        )
    if kind == "clamp":
        return ClampSpec(float(data["l"]), float(data["u"]), bool(data["straight_through"]))
    if kind == "activation":
        raw_spec = data.get("bernstein")
        return ActivationSpec(
            activation=ActivationKind(data["activation"]),
            slope=float(data["slope"]),
            bernstein=BernsteinActivationSpec.from_dict(raw_spec) if raw_spec else None,
            share=CoefficientSharing(data["share"]),
            parameterization=Parameterization(data["parameterization"]),
            init_mode=InitMode(data["init_mode"]),
        )
    if kind == "residual":
        return ResidualSpec(tuple(layer_from_dict(item) for item in data["inner"]))
    raise NetworkError(f"Unknown layer kind: {kind!r}")


def _walk_widths(layers: tuple, width: int, prefix: str, allow_unguarded: bool) -> int:
    for index, layer in enumerate(layers):
        path = f"{prefix}{index}"
        if isinstance(layer, LinearSpec):
            if layer.in_features != width:
                raise NetworkError(f"Layer {path}: expects width {layer.in_features}, receives {width}")
            width = layer.out_features
        elif isinstance(layer, BatchNormSpec):
            if layer.features != width:
                raise NetworkError(f"Layer {path}: batch norm over {layer.features} features, receives {width}")
        elif isinstance(layer, ResidualSpec):
            inner_width = _walk_widths(layer.inner, width, f"{path}.", allow_unguarded)
            if inner_width != width:
                raise NetworkError(f"Layer {path}: residual block maps width {width} to {inner_width}")
        elif isinstance(layer, ActivationSpec) and layer.activation == ActivationKind.BERNSTEIN and not allow_unguarded:
            guard = layers[max(index - 2, 0):index]
            if (
                len(guard) != 2
                or not isinstance(guard[0], BatchNormSpec)
                or not isinstance(guard[1], ClampSpec)
            ):
                raise NetworkError(f"Layer {path}: Bernstein activation must follow BatchNorm then Clamp")
            clamp = guard[1]
            if (clamp.l, clamp.u) != (layer.bernstein.l, layer.bernstein.u):
                raise NetworkError(
                    f"Layer {path}: clamp [{clamp.l}, {clamp.u}] differs from Bernstein interval "
                    f"[{layer.bernstein.l}, {layer.bernstein.u}]"
                )
    return width


@dataclass(frozen=True)
class Network:
    input_width: int
    layers: tuple = ()
    allow_unguarded_bernstein: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        _walk_widths(self.layers, self.input_width, "", self.allow_unguarded_bernstein)

    @property
    def output_width(self) -> int:
        return _walk_widths(self.layers, self.input_width, "", True)

    def activation_layers(self) -> list[tuple[str, ActivationSpec, int]]:
        """(path, spec, width) of every activation in forward order."""
        found: list[tuple[str, ActivationSpec, int]] = []

        def visit(layers: tuple, width: int, prefix: str) -> int:
            for index, layer in enumerate(layers):
                path = f"{prefix}{index}"
                if isinstance(layer, LinearSpec):
                    width = layer.out_features
                elif isinstance(layer, ActivationSpec):
                    found.append((path, layer, width))
                elif isinstance(layer, ResidualSpec):
                    visit(layer.inner, width, f"{path}.")
            return width

        visit(self.layers, self.input_width, "")
        return found

    def bernstein_layers(self) -> list[tuple[str, ActivationSpec, int]]:
        return [item for item in self.activation_layers() if item[1].activation == ActivationKind.BERNSTEIN]

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_width": self.input_width,
            "allow_unguarded_bernstein": self.allow_unguarded_bernstein,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "Network":
        return Network(
            input_width=int(data["input_width"]),
            layers=tuple(layer_from_dict(item) for item in data["layers"]),
            allow_unguarded_bernstein=bool(data.get("allow_unguarded_bernstein", False)),
        )


@dataclass
class Parameters:
    values: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    def copy(self) -> "Parameters":
        return Parameters(
            values={key: value.copy() for key, value in self.values.items()},
            buffers={key: value.copy() for key, value in self.buffers.items()},
            version=self.version,
        )

    def count(self) -> int:
        return int(sum(value.size for value in self.values.values()))


@dataclass
class ForwardCache:
    mode: str
    version: int
    batch_rows: int
    entries: dict[str, dict[str, Any]] = field(default_factory=dict)
    activation_paths: list[str] = field(default_factory=list)
    clamp_paths: list[str] = field(default_factory=list)


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    activation_grads: dict[str, np.ndarray]
    input_grad: Matrix


_injected_fault: str | None = None


@contextmanager
def inject_fault(layer_kind: str | None) -> Iterator[None]:
    """Scale the backward result of every layer of `layer_kind` (debug negative control)."""
    global _injected_fault
    previous = _injected_fault
    _injected_fault = layer_kind
    try:
        yield
    finally:
        _injected_fault = previous


def _fault_kind(layer: LayerSpec) -> str:
    return layer.activation.value if isinstance(layer, ActivationSpec) else layer.kind


# ---------------------------------------------------------------- parameters


def _init_std(layers: tuple, index: int, fan_in: int) -> float:
    for layer in layers[index + 1:]:
        if isinstance(layer, (LinearSpec, ResidualSpec)):
            break
        if isinstance(layer, ActivationSpec):
            if layer.activation in (ActivationKind.RELU, ActivationKind.LEAKY_RELU, ActivationKind.GELU):
                return float(np.sqrt(2.0 / fan_in))
            break
    return float(np.sqrt(1.0 / fan_in))


def bernstein_coefficients(layer: ActivationSpec, params: Parameters, path: str) -> np.ndarray:
    spec = layer.bernstein
    if layer.parameterization == Parameterization.FREE:
        return params.values[f"{path}.coeffs"]
    cc = ConstrainedCoefficients(params.values[f"{path}.c0"], params.values[f"{path}.rho"])
    return bernstein.reconstruct_coefficients(cc, spec.delta)


def init_parameters(net: Network, rng: Rng) -> Parameters:
    params = Parameters(values={}, buffers={})
    counter = [0]

    def visit(layers: tuple, width: int, prefix: str) -> int:
        for index, layer in enumerate(layers):
            path = f"{prefix}{index}"
            if isinstance(layer, LinearSpec):
                std = _init_std(layers, index, layer.in_features)
                counter[0] += 1
                params.values[f"{path}.weight"] = rng.derive(counter[0]).normal(
                    layer.out_features, layer.in_features, 0.0, std
                )
                params.values[f"{path}.bias"] = np.zeros(layer.out_features)
                width = layer.out_features
            elif isinstance(layer, BatchNormSpec):
                if layer.affine:
                    params.values[f"{path}.gamma"] = np.ones(layer.features)
                    params.values[f"{path}.beta"] = np.zeros(layer.features)
                params.buffers[f"{path}.running_mean"] = np.zeros(layer.features)
                params.buffers[f"{path}.running_var"] = np.ones(layer.features)
            elif isinstance(layer, ActivationSpec) and layer.activation == ActivationKind.BERNSTEIN:
                spec = layer.bernstein
                cc = bernstein.init_rho(spec, layer.init_mode)
                shape = (width,) if layer.share == CoefficientSharing.PER_NEURON else ()
                if layer.parameterization == Parameterization.FREE:
                    coeffs = bernstein.reconstruct_coefficients(cc, spec.delta)
                    params.values[f"{path}.coeffs"] = np.broadcast_to(coeffs, shape + coeffs.shape).copy()
                else:
                    params.values[f"{path}.c0"] = np.full(shape, float(cc.c0))
                    params.values[f"{path}.rho"] = np.broadcast_to(cc.rho, shape + cc.rho.shape).copy()
            elif isinstance(layer, ResidualSpec):
                visit(layer.inner, width, f"{path}.")
        return width

    visit(net.layers, net.input_width, "")
    return params


# ---------------------------------------------------------------- activations


def activation_value_and_derivative(layer: ActivationSpec, x: np.ndarray, coeffs: np.ndarray | None = None):
    kind = layer.activation
    if kind == ActivationKind.RELU:
        return np.maximum(x, 0.0), (x > 0).astype(np.float64)
    if kind == ActivationKind.LEAKY_RELU:
        positive = x > 0
        return np.where(positive, x, layer.slope * x), np.where(positive, 1.0, layer.slope)
    if kind == ActivationKind.SELU:
        positive = x > 0
        exp_part = np.exp(np.minimum(x, 0.0))
        value = SELU_LAMBDA * np.where(positive, x, SELU_ALPHA * (exp_part - 1.0))
        return value, SELU_LAMBDA * np.where(positive, 1.0, SELU_ALPHA * exp_part)
    if kind == ActivationKind.GELU:
        cdf = ndtr(x)
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return x * cdf, cdf + x * pdf
    spec = layer.bernstein
    return bernstein.poly_eval(coeffs, spec, x), bernstein.poly_derivative(coeffs, spec, x)


# ---------------------------------------------------------------- forward


def _forward_layers(layers: tuple, prefix: str, params: Parameters, x: Matrix, cache: ForwardCache) -> Matrix:
    train = cache.mode == "train"
    for index, layer in enumerate(layers):
        path = f"{prefix}{index}"
        entry: dict[str, Any] = {}
        if isinstance(layer, LinearSpec):
            entry["input"] = x
            x = matmul(x, params.values[f"{path}.weight"].T) + params.values[f"{path}.bias"]
        elif isinstance(layer, BatchNormSpec):
            x = _batch_norm_forward(layer, path, params, x, entry, train)
        elif isinstance(layer, ClampSpec):
            inside = (x >= layer.l) & (x <= layer.u)
            entry["inside"] = inside
            entry["saturation"] = 1.0 - float(np.mean(inside)) if inside.size else 0.0
            x = np.clip(x, layer.l, layer.u)
            cache.clamp_paths.append(path)
        elif isinstance(layer, ActivationSpec):
            coeffs = None
            if layer.activation == ActivationKind.BERNSTEIN:
                coeffs = bernstein_coefficients(layer, params, path)
                entry["coefficients"] = coeffs
            entry["input"] = x
            x, derivative = activation_value_and_derivative(layer, x, coeffs)
            entry["derivative"] = derivative
            cache.activation_paths.append(path)
        elif isinstance(layer, ResidualSpec):
            x = x + _forward_layers(layer.inner, f"{path}.", params, x, cache)
        if validation_enabled():
            check_finite(x, f"layer {path} output")
        if train:
            cache.entries[path] = entry
        elif isinstance(layer, (ActivationSpec, ClampSpec)):
            cache.entries[path] = entry
    return x


def _batch_norm_forward(layer: BatchNormSpec, path: str, params: Parameters, x: Matrix, entry: dict, train: bool) -> Matrix:
    if train:
        rows = x.shape[0]
        mean = column_mean(x)
        centered = x - mean
        var = column_mean(centered * centered)
        inv_std = 1.0 / np.sqrt(var + layer.eps)
        xhat = centered * inv_std
        entry["xhat"] = xhat
        entry["inv_std"] = inv_std
        unbiased = var * rows / (rows - 1) if rows > 1 else var
        running_mean = params.buffers[f"{path}.running_mean"]
        running_var = params.buffers[f"{path}.running_var"]
        running_mean *= 1.0 - layer.momentum
        running_mean += layer.momentum * mean
        running_var *= 1.0 - layer.momentum
        running_var += layer.momentum * unbiased
    else:
        mean = params.buffers[f"{path}.running_mean"]
        var = params.buffers[f"{path}.running_var"]
        xhat = (x - mean) / np.sqrt(var + layer.eps)
    if layer.affine:
        return params.values[f"{path}.gamma"] * xhat + params.values[f"{path}.beta"]
    return xhat


def forward(net: Network, params: Parameters, batch, mode: str = "train") -> tuple[Matrix, ForwardCache]:
    if mode not in ("train", "eval"):
        raise NetworkError(f"Unknown forward mode: {mode!r}")
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.input_width:
        raise ShapeError(f"batch has {x.shape[1]} columns, network expects {net.input_width}")
    cache = ForwardCache(mode=mode, version=params.version, batch_rows=x.shape[0])
    output = _forward_layers(net.layers, "", params, x, cache)
    return output, cache


# ---------------------------------------------------------------- backward


def _backward_layers(
    layers: tuple,
    prefix: str,
    params: Parameters,
    cache: ForwardCache,
    grad: Matrix,
    grads: dict[str, np.ndarray],
    activation_grads: dict[str, np.ndarray],
) -> Matrix:
    for index in range(len(layers) - 1, -1, -1):
        layer = layers[index]
        path = f"{prefix}{index}"
        entry = cache.entries[path]
        faulty = _injected_fault is not None and _injected_fault == _fault_kind(layer)
        touched: list[str] = []
        if isinstance(layer, LinearSpec):
            weight = params.values[f"{path}.weight"]
            grads[f"{path}.weight"] = matmul(grad.T, entry["input"])
            grads[f"{path}.bias"] = column_sum(grad)
            touched = [f"{path}.weight", f"{path}.bias"]
            grad = matmul(grad, weight)
        elif isinstance(layer, BatchNormSpec):
            xhat, inv_std = entry["xhat"], entry["inv_std"]
            if layer.affine:
                grads[f"{path}.gamma"] = column_sum(grad * xhat)
                grads[f"{path}.beta"] = column_sum(grad)
                touched = [f"{path}.gamma", f"{path}.beta"]
                grad = grad * params.values[f"{path}.gamma"]
            rows = grad.shape[0]
            grad = inv_std / rows * (rows * grad - column_sum(grad) - xhat * column_sum(grad * xhat))
        elif isinstance(layer, ClampSpec):
            if not layer.straight_through:
                grad = grad * entry["inside"]
        elif isinstance(layer, ActivationSpec):
            activation_grads[path] = grad
            if layer.activation == ActivationKind.BERNSTEIN:
                spec = layer.bernstein
                if layer.parameterization == Parameterization.FREE:
                    grad, grads[f"{path}.coeffs"] = bernstein.free_coefficient_backward(
                        entry["coefficients"], spec, entry["input"], grad
                    )
                    touched = [f"{path}.coeffs"]
                else:
                    cc = ConstrainedCoefficients(params.values[f"{path}.c0"], params.values[f"{path}.rho"])
                    grad, grads[f"{path}.c0"], grads[f"{path}.rho"] = bernstein.activation_backward(
                        cc, spec, entry["input"], grad
                    )
                    touched = [f"{path}.c0", f"{path}.rho"]
            else:
                grad = grad * entry["derivative"]
        elif isinstance(layer, ResidualSpec):
            grad = grad + _backward_layers(layer.inner, f"{path}.", params, cache, grad, grads, activation_grads)
        if faulty:
            grad = grad * FAULT_SCALE
            for key in touched:
                grads[key] = grads[key] * FAULT_SCALE
    return grad


def backward(net: Network, params: Parameters, cache: ForwardCache, loss_grad) -> Gradients:
    if cache.mode != "train":
        raise StaleCacheError("backward needs a cache from a train-mode forward")
    if cache.version != params.version:
        raise StaleCacheError(f"cache built at parameter version {cache.version}, parameters are at {params.version}")
    grad = np.asarray(loss_grad, dtype=np.float64)
    if grad.shape != (cache.batch_rows, net.output_width):
        raise ShapeError(f"loss gradient shape {grad.shape} != {(cache.batch_rows, net.output_width)}")
    grads: dict[str, np.ndarray] = {}
    activation_grads: dict[str, np.ndarray] = {}
    input_grad = _backward_layers(net.layers, "", params, cache, grad, grads, activation_grads)
    return Gradients(params=grads, activation_grads=activation_grads, input_grad=input_grad)


# ---------------------------------------------------------------- losses


def loss_bce_logits(logits, targets) -> tuple[float, Matrix]:
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    if np.any((targets < 0) | (targets > 1)):
        raise NetworkError("binary targets must lie in [0, 1]")
    rows = logits.shape[0]
    losses = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(np.sum(losses) / rows), (expit(logits) - targets) / rows


def loss_softmax_ce(logits, labels) -> tuple[float, Matrix]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    rows, classes = logits.shape
    if labels.shape[0] != rows:
        raise ShapeError(f"{labels.shape[0]} labels for {rows} logit rows")
    if np.any((labels < 0) | (labels >= classes)):
        raise NetworkError(f"labels must lie in 0..{classes - 1}")
    log_norm = logsumexp(logits, axis=1, keepdims=True)
    picked = logits[np.arange(rows), labels]
    loss = float(np.sum(log_norm[:, 0] - picked) / rows)
    grad = np.exp(logits - log_norm)
    grad[np.arange(rows), labels] -= 1.0
    return loss, grad / rows


def loss_mse(pred, targets) -> tuple[float, Matrix]:
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(pred.shape)
    residual = pred - targets
    return float(np.sum(residual * residual) / residual.size), 2.0 * residual / residual.size


# ---------------------------------------------------------------- degree probe


def chebyshev_nodes(count: int, domain: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    a, b = domain
    nodes = np.cos((2.0 * np.arange(count) + 1.0) * np.pi / (2.0 * count))
    return 0.5 * (a + b) + 0.5 * (b - a) * nodes


def effective_degree_probe(
    net: Network,
    params: Parameters,
    probe_degree: int,
    sample_count: int = 64,
    domain: tuple[float, float] = (-1.0, 1.0),
) -> float:
    """Max residual of a degree-`probe_degree` least-squares fit to the scalar network map."""

    def check(layers: tuple) -> None:
        for layer in layers:
            if isinstance(layer, LinearSpec):
                continue
            if isinstance(layer, ActivationSpec) and layer.activation == ActivationKind.BERNSTEIN:
                continue
            raise NetworkError(f"degree probe supports Linear and Bernstein layers only, found {layer.kind}")

    check(net.layers)
    if net.input_width != 1 or net.output_width != 1:
        raise NetworkError("degree probe needs a scalar-input, scalar-output network")
    if sample_count <= probe_degree + 1:
        raise NetworkError(f"need more than {probe_degree + 1} samples for degree {probe_degree}")
    a, b = domain
    x = chebyshev_nodes(sample_count, domain)
    y, _ = forward(net, params, x.reshape(-1, 1), mode="eval")
    fit = np.polynomial.Chebyshev.fit(x, y[:, 0], probe_degree, domain=[a, b])
    return float(np.max(np.abs(fit(x) - y[:, 0])))


# ---------------------------------------------------------------- builders


def build_network(arch: ArchitectureConfig, input_width: int, output_width: int) -> Network:
    widths = arch.hidden_widths
    kind = ActivationKind.RELU if arch.activation == "relu_res" else ActivationKind(arch.activation)
    spec = None
    if kind == ActivationKind.BERNSTEIN:
        cfg = arch.bernstein
        spec = BernsteinActivationSpec(n=cfg.degree, l=cfg.lower, u=cfg.upper, delta=cfg.delta)
        activation = ActivationSpec(
            activation=kind,
            bernstein=spec,
            share=CoefficientSharing(cfg.share),
            parameterization=Parameterization(cfg.parameterization),
            init_mode=InitMode(cfg.init_mode),
        )
    else:
        activation = ActivationSpec(activation=kind, slope=arch.leaky_slope)

    def norm(width: int) -> list:
        if not arch.batch_norm:
            return []
        return [BatchNormSpec(width, eps=arch.bn_eps, momentum=arch.bn_momentum, affine=arch.bn_affine)]

    layers: list = []
    previous = input_width
    if arch.activation == "relu_res" and widths:
        width = widths[0]
        layers.append(LinearSpec(previous, width))
        for _ in widths:
            layers.append(ResidualSpec((LinearSpec(width, width), *norm(width), activation)))
        previous = width
    else:
        for width in widths:
            layers.append(LinearSpec(previous, width))
            layers.extend(norm(width))
            if spec is not None:
                layers.append(ClampSpec(spec.l, spec.u, straight_through=arch.bernstein.straight_through_clamp))
            layers.append(activation)
            previous = width
    layers.append(LinearSpec(previous, output_width))
    net = Network(input_width=input_width, layers=tuple(layers))
    LOGGER.debug("Built network: %d layers, activation %s", len(layers), activation.label)
    return net
