from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev

from app import bernstein
from app.bernstein import BernsteinActivationSpec, ConstrainedCoefficients, InitMode
from app.diagnostics import compute_auc
from app.network import (
    ActivationKind,
    ActivationSpec,
    BatchNormSpec,
    ClampSpec,
    CoefficientSharing,
    LinearSpec,
    Network,
    Parameterization,
    Parameters,
    ResidualSpec,
    backward,
    chebyshev_nodes,
    effective_degree_probe,
    forward,
    init_parameters,
    inject_fault,
    loss_mse,
)
from app.numcore import Rng
from app.optim import AdamWState, ExponentialState, adamw_step, scheduler_step

LOGGER = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_ABS = 1e-7
FD_REL = 1e-5
FLOOR_TOL = 1e-12
FAULT_KINDS = ("linear", "batch_norm", "clamp", "relu", "leaky_relu", "selu", "gelu", "bernstein", "residual")


class PropertyFailure(ValueError):
    pass


@dataclass(frozen=True)
class CheckResult:
    module: str
    case: str
    measured: float
    tolerance: float
    passed: bool
    comparison: str = "<="

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.module:<11} {self.case:<58} {self.measured:.3e} {self.comparison} {self.tolerance:.3e}"


def _at_most(module: str, case: str, measured: float, tolerance: float) -> CheckResult:
    return CheckResult(module, case, float(measured), tolerance, bool(measured <= tolerance), "<=")


def _at_least(module: str, case: str, measured: float, tolerance: float) -> CheckResult:
    return CheckResult(module, case, float(measured), tolerance, bool(measured >= tolerance), ">=")


# ---------------------------------------------------------------- gradient checks


def _loss(net: Network, params: Parameters, batch: np.ndarray, targets: np.ndarray) -> float:
    output, _ = forward(net, params.copy(), batch, mode="train")
    return loss_mse(output, targets)[0]


def gradient_check(
    net: Network,
    params: Parameters,
    batch: np.ndarray,
    targets: np.ndarray,
    h: float = FD_STEP,
) -> dict[str, float]:
    """Worst |analytic - numeric| / max(FD_ABS, FD_REL * scale) per parameter key and for "input".

    A value <= 1 passes.
    """
    work = params.copy()
    output, cache = forward(net, work, batch, mode="train")
    _, grad = loss_mse(output, targets)
    grads = backward(net, work, cache, grad)

    def excess(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(FD_ABS, FD_REL * max(abs(analytic), abs(numeric)))

    worst: dict[str, float] = {}
    for key, value in params.values.items():
        score = 0.0
        for index in np.ndindex(value.shape):
            plus, minus = params.copy(), params.copy()
            plus.values[key][index] += h
            minus.values[key][index] -= h
            numeric = (_loss(net, plus, batch, targets) - _loss(net, minus, batch, targets)) / (2 * h)
            score = max(score, excess(float(grads.params[key][index]), numeric))
        worst[key] = score
    score = 0.0
    for index in np.ndindex(batch.shape):
        plus, minus = batch.copy(), batch.copy()
        plus[index] += h
        minus[index] -= h
        numeric = (_loss(net, params, plus, targets) - _loss(net, params, minus, targets)) / (2 * h)
        score = max(score, excess(float(grads.input_grad[index]), numeric))
    worst["input"] = score
    return worst


def layer_kind(net: Network, key: str) -> str:
    """Kind of the layer owning parameter `key` ("3.weight", "2.0.gamma")."""
    parts = key.split(".")[:-1]
    layers = net.layers
    layer = None
    for part in parts:
        layer = layers[int(part)]
        if isinstance(layer, ResidualSpec):
            layers = layer.inner
    if isinstance(layer, ActivationSpec):
        return layer.activation.value
    return layer.kind if layer is not None else "input"


def _bernstein(n: int = 4, share: CoefficientSharing = CoefficientSharing.PER_NEURON, free: bool = False) -> ActivationSpec:
    return ActivationSpec(
        activation=ActivationKind.BERNSTEIN,
        bernstein=BernsteinActivationSpec(n=n, l=-3.0, u=3.0, delta=0.05),
        share=share,
        parameterization=Parameterization.FREE if free else Parameterization.CONSTRAINED,
    )


def gradient_nets(width: int = 4, inputs: int = 3, outputs: int = 2) -> dict[str, Network]:
    """One small network per layer kind, plus two mixed stacks."""

    def act(kind: ActivationKind) -> ActivationSpec:
        return ActivationSpec(activation=kind, slope=0.05)

    def guarded(spec: ActivationSpec) -> tuple:
        return (BatchNormSpec(width), ClampSpec(-3.0, 3.0), spec)

    head, tail = LinearSpec(inputs, width), LinearSpec(width, outputs)
    nets = {
        "linear": (head, tail),
        "batch_norm": (head, BatchNormSpec(width), tail),
        "batch_norm no affine": (head, BatchNormSpec(width, affine=False), tail),
        "clamp interior": (head, BatchNormSpec(width), ClampSpec(-3.0, 3.0), tail),
        "relu": (head, act(ActivationKind.RELU), tail),
        "leaky_relu": (head, act(ActivationKind.LEAKY_RELU), tail),
        "selu": (head, act(ActivationKind.SELU), tail),
        "gelu": (head, act(ActivationKind.GELU), tail),
        "bernstein per_neuron": (head, *guarded(_bernstein()), tail),
        "bernstein per_layer": (head, *guarded(_bernstein(share=CoefficientSharing.PER_LAYER)), tail),
        "bernstein free": (head, *guarded(_bernstein(free=True)), tail),
        "residual": (
            head,
            ResidualSpec((LinearSpec(width, width), BatchNormSpec(width), act(ActivationKind.RELU))),
            tail,
        ),
        "mixed depth 3": (
            head,
            *guarded(_bernstein(3)),
            LinearSpec(width, width),
            BatchNormSpec(width),
            act(ActivationKind.GELU),
            LinearSpec(width, width),
            *guarded(_bernstein(5, share=CoefficientSharing.PER_LAYER)),
            tail,
        ),
    }
    return {name: Network(input_width=inputs, layers=layers) for name, layers in nets.items()}


def jitter_parameters(params: Parameters, rng: Rng) -> Parameters:
    """Move parameters off their init values while keeping BatchNorm outputs inside [-3, 3]."""
    out = params.copy()
    for index, key in enumerate(sorted(out.values)):
        value = out.values[key]
        noise = rng.derive(index).uniform(-1.0, 1.0, value.shape)
        if key.endswith((".gamma", ".beta")):
            value += 0.05 * noise
        elif key.endswith((".rho", ".c0", ".coeffs", ".bias")):
            value += 0.3 * noise
    return out


def gradient_checks(seed: int = 7, batch_rows: int = 8) -> list[CheckResult]:
    rng = Rng(seed)
    results = []
    for offset, (name, net) in enumerate(gradient_nets().items()):
        local = rng.derive(offset)
        params = jitter_parameters(init_parameters(net, local.derive(1)), local.derive(2))
        batch = local.derive(3).normal(batch_rows, net.input_width)
        targets = local.derive(4).normal(batch_rows, net.output_width)
        worst = gradient_check(net, params, batch, targets)
        failing = sorted(key for key, score in worst.items() if score > 1.0)
        label = f"gradient {name}"
        if failing:
            label += " fails at " + ", ".join(f"{key} ({layer_kind(net, key)})" for key in failing)
        results.append(_at_most("network", label, max(worst.values()), 1.0))
    return results


# ---------------------------------------------------------------- bernstein properties


def _random_specs(rng: Rng, count: int, max_degree: int = 20) -> list[BernsteinActivationSpec]:
    degrees = rng.derive(1).uniform(1, max_degree + 1, count).astype(int)
    lows = rng.derive(2).uniform(-5.0, 0.0, count)
    widths = rng.derive(3).uniform(1.0, 10.0, count)
    margins = rng.derive(5).uniform(0.05, 0.95, count) / degrees
    return [
        BernsteinActivationSpec(n=int(n), l=float(l), u=float(l + w), delta=float(d))
        for n, l, w, d in zip(degrees, lows, widths, margins)
    ]


def basis_checks(seed: int = 11, count: int = 1000) -> list[CheckResult]:
    rng = Rng(seed)
    specs = _random_specs(rng, count)
    fractions = rng.derive(4).uniform(0.0, 1.0, count)
    unity = precision = 0.0
    positivity = np.inf
    for spec, fraction in zip(specs, fractions):
        x = spec.l + fraction * spec.width
        basis = bernstein.basis_eval_all(spec, x)
        unity = max(unity, abs(float(np.sum(basis)) - 1.0))
        positivity = min(positivity, float(np.min(basis)))
        linear = spec.l + np.arange(spec.n + 1) * spec.width / spec.n
        precision = max(precision, abs(bernstein.poly_eval(linear, spec, x) - x))
    return [
        _at_most("bernstein", "partition of unity residual", unity, 1e-13),
        _at_least("bernstein", "basis positivity", positivity, -1e-15),
        _at_most("bernstein", "linear precision |sigma(x) - x|", precision, 1e-12),
    ]


def floor_checks(seed: int = 13, count: int = 1000, samples: int = 500) -> list[CheckResult]:
    rng = Rng(seed)
    specs = _random_specs(rng, count)
    worst_bound = worst_sample = np.inf
    for index, spec in enumerate(specs):
        local = rng.derive(100 + index)
        cc = ConstrainedCoefficients(local.derive(1).normal(1, 1)[0, 0], local.derive(2).normal(1, spec.n, 0.0, 3.0)[0])
        c = bernstein.reconstruct_coefficients(cc, spec.delta)
        floor = bernstein.theoretical_lower_bound(spec)
        worst_bound = min(worst_bound, bernstein.derivative_bounds(c, spec).m_lower - floor)
        slopes = bernstein.poly_derivative(c, spec, np.linspace(spec.l, spec.u, samples))
        worst_sample = min(worst_sample, float(np.min(slopes)) - floor)
    reference_specs = [
        BernsteinActivationSpec(n=9, l=-3.0, u=3.0, delta=0.01),
        BernsteinActivationSpec(n=9, l=-5.0, u=5.0, delta=0.01),
    ]
    constant_gap = max(
        abs(bernstein.theoretical_lower_bound(reference_specs[0]) - 0.015),
        abs(bernstein.theoretical_lower_bound(reference_specs[1]) - 0.009),
    )
    return [
        _at_least("bernstein", "floor: m_lower - n*delta/(u-l)", worst_bound, -FLOOR_TOL),
        _at_least("bernstein", "floor: sampled sigma' - n*delta/(u-l)", worst_sample, -FLOOR_TOL),
        _at_most("bernstein", "floor constants 0.015 and 0.009", constant_gap, 1e-15),
    ]


def activation_backward_checks(seed: int = 17, count: int = 50) -> list[CheckResult]:
    rng = Rng(seed)
    spec = BernsteinActivationSpec(n=6, l=-2.0, u=2.0, delta=0.02)
    h = 1e-6
    worst = 0.0
    worst_c0 = 0.0
    for index in range(count):
        local = rng.derive(index)
        cc = ConstrainedCoefficients(local.derive(1).normal(1, 1)[0, 0], local.derive(2).normal(1, spec.n)[0])
        x = float(local.derive(3).uniform(-1.9, 1.9, 1)[0])
        upstream = float(local.derive(4).normal(1, 1)[0, 0])
        grad_x, grad_c0, grad_rho = bernstein.activation_backward(cc, spec, x, upstream)
        worst_c0 = max(worst_c0, abs(float(grad_c0) - upstream))

        def value(c0=cc.c0, rho=cc.rho, at=x) -> float:
            coefficients = bernstein.reconstruct_coefficients(ConstrainedCoefficients(c0, rho), spec.delta)
            return upstream * bernstein.poly_eval(coefficients, spec, at)

        numeric_x = (value(at=x + h) - value(at=x - h)) / (2 * h)
        worst = max(worst, abs(float(grad_x) - numeric_x))
        for j in range(spec.n):
            up, down = cc.rho.copy(), cc.rho.copy()
            up[j] += h
            down[j] -= h
            worst = max(worst, abs(float(grad_rho[j]) - (value(rho=up) - value(rho=down)) / (2 * h)))
    return [
        _at_most("bernstein", "activation_backward vs finite differences", worst, 1e-7),
        _at_most("bernstein", "grad_c0 equals upstream", worst_c0, 1e-13),
    ]


def diagonal_checks() -> list[CheckResult]:
    spec = BernsteinActivationSpec(n=9, l=-3.0, u=3.0, delta=0.01)
    rho = Rng(19).normal(5, spec.n, 0.0, 2.0)
    layer = bernstein.reconstruct_coefficients(ConstrainedCoefficients(np.zeros(5), rho), spec.delta)
    _, violating = bernstein.check_diagonal_bound(layer, spec)
    broken = layer.copy()
    broken[2] = 1.0
    _, flagged = bernstein.check_diagonal_bound(broken, spec)
    _, mirrored_bad = bernstein.check_diagonal_bound(-layer, spec)
    return [
        _at_most("bernstein", "diagonal bound on constrained layer (violations)", len(violating), 0),
        _at_least("bernstein", "constant neuron flagged by diagonal bound", float(flagged == [2]), 1.0),
        _at_most("bernstein", "mirrored decreasing layer passes (violations)", len(mirrored_bad), 0),
    ]


# ---------------------------------------------------------------- effective degree

DEGREE_CASES = ((2, 1), (2, 2), (3, 2), (2, 3), (3, 3))
# top Chebyshev coefficient, relative to the output range, that a float64 fit can still separate
RESOLVABLE_TOP = 1e-10


def random_degree_chain(degree: int, depth: int, seed: int = 0) -> tuple[Network, Parameters]:
    """Width-1 Linear/Bernstein chain on [-1, 1] with seeded random coefficients.

    Each Linear maps the exact image of the previous block onto a random
    subinterval of [-0.9, 0.9], so every Bernstein input stays inside [l, u].
    """
    spec = BernsteinActivationSpec(n=degree, l=-1.0, u=1.0, delta=0.01)
    activation = ActivationSpec(activation=ActivationKind.BERNSTEIN, bernstein=spec)
    layers: list = []
    for _ in range(depth):
        layers.extend([LinearSpec(1, 1), activation])
    layers.append(LinearSpec(1, 1))
    net = Network(input_width=1, layers=tuple(layers), allow_unguarded_bernstein=True)
    rng = Rng(seed, degree, depth)
    values: dict[str, np.ndarray] = {}
    low, high = -1.0, 1.0
    for block in range(depth):
        local = rng.derive(block)
        a = float(local.derive(1).uniform(-0.9, -0.4, 1)[0])
        b = float(local.derive(2).uniform(0.4, 0.9, 1)[0])
        weight = (b - a) / (high - low)
        values[f"{2 * block}.weight"] = np.array([[weight]])
        values[f"{2 * block}.bias"] = np.array([a - weight * low])
        c0 = local.derive(3).normal(1, 1)[0]
        rho = local.derive(4).normal(1, degree, 0.0, 2.5)
        values[f"{2 * block + 1}.c0"] = c0
        values[f"{2 * block + 1}.rho"] = rho
        c = bernstein.reconstruct_coefficients(ConstrainedCoefficients(c0[0], rho[0]), spec.delta)
        low, high = bernstein.poly_eval(c, spec, a), bernstein.poly_eval(c, spec, b)
    values[f"{2 * depth}.weight"] = np.array([[float(rng.derive(depth).uniform(0.5, 2.0, 1)[0])]])
    values[f"{2 * depth}.bias"] = np.zeros(1)
    return net, Parameters(values=values)


def _chain_coefficients(params: Parameters, index: int, spec: BernsteinActivationSpec) -> np.ndarray:
    cc = ConstrainedCoefficients(params.values[f"{index}.c0"][0], params.values[f"{index}.rho"][0])
    return bernstein.reconstruct_coefficients(cc, spec.delta)


def chain_series(net: Network, params: Parameters) -> Chebyshev:
    """Compose a width-1 Linear/Bernstein chain into a single Chebyshev series in x."""
    series = Chebyshev([0.0, 1.0])
    for index, layer in enumerate(net.layers):
        if isinstance(layer, LinearSpec):
            series = float(params.values[f"{index}.weight"][0, 0]) * series + float(params.values[f"{index}.bias"][0])
            continue
        spec = layer.bernstein
        c = _chain_coefficients(params, index, spec)
        t = (series - spec.l) / spec.width
        series = sum(float(c[k]) * math.comb(spec.n, k) * t**k * (1.0 - t) ** (spec.n - k) for k in range(spec.n + 1))
    return series


def chain_leading_coefficient(net: Network, params: Parameters) -> tuple[int, float]:
    """Degree and x^degree coefficient of the chain, from the n-th coefficient differences."""
    degree, lead = 1, 1.0
    for index, layer in enumerate(net.layers):
        if isinstance(layer, LinearSpec):
            lead *= float(params.values[f"{index}.weight"][0, 0])
            continue
        spec = layer.bernstein
        top = float(np.diff(_chain_coefficients(params, index, spec), spec.n)[0])
        lead = top / spec.width**spec.n * lead**spec.n
        degree *= spec.n
    return degree, lead


def degree_checks(seed: int = 23, sample_count: int = 64) -> list[CheckResult]:
    results = []
    nodes = chebyshev_nodes(sample_count)
    for degree, depth in DEGREE_CASES:
        net, params = random_degree_chain(degree, depth, seed)
        label = f"n={degree} L={depth}"
        full, lead = chain_leading_coefficient(net, params)
        series = chain_series(net, params)
        values, _ = forward(net, params, nodes.reshape(-1, 1), mode="eval")
        spread = float(np.ptp(values))
        top = abs(lead) * 2.0 ** (1 - full)
        series_top = abs(float(series.coef[-1])) if series.degree() == full else 0.0
        results.append(
            _at_most("network", f"{label}: forward vs composed series", float(np.max(np.abs(series(nodes) - values[:, 0]))) / spread, 1e-10)
        )
        results.append(_at_most("network", f"{label}: degree-{full} coefficient vs differences", abs(series_top - top) / top if top else np.inf, 1e-6))
        results.append(
            _at_most("network", f"{label}: fit residual at degree {full}", effective_degree_probe(net, params, full, sample_count) / spread, 1e-9)
        )
        if top / spread > RESOLVABLE_TOP:
            expected = top * float(np.max(np.abs(Chebyshev.basis(full)(nodes))))
            measured = effective_degree_probe(net, params, full - 1, sample_count)
            results.append(_at_least("network", f"{label}: fit residual at degree {full - 1}", measured / spread, 0.5 * expected / spread))
        else:
            results.append(_at_most("network", f"{label}: degree-{full} term below float64 fit resolution", top / spread, RESOLVABLE_TOP))
    spec = BernsteinActivationSpec(n=3, l=-1.0, u=1.0, delta=0.01)
    identity = ActivationSpec(activation=ActivationKind.BERNSTEIN, bernstein=spec, init_mode=InitMode.RAW_IDENTITY)
    net = Network(
        input_width=1,
        layers=(LinearSpec(1, 1), identity, LinearSpec(1, 1), identity, LinearSpec(1, 1)),
        allow_unguarded_bernstein=True,
    )
    params = init_parameters(net, Rng(0))
    for key in ("0.weight", "2.weight", "4.weight"):
        params.values[key] = np.array([[0.5]])
    results.append(_at_most("network", "identity-init Bernstein chain is affine", effective_degree_probe(net, params, 1), 1e-10))
    return results


# ---------------------------------------------------------------- optim and metrics


def optim_checks() -> list[CheckResult]:
    state = AdamWState(lr=1e-3)
    params = Parameters(values={"0.weight": np.array([1.0])})
    adamw_step(state, params, {"0.weight": np.array([0.5])}, epoch=1)
    expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)
    schedule = ExponentialState(lr=1.0, gamma=0.95, start_epoch=5)
    for _ in range(6):
        lr = scheduler_step(schedule, 0.0)
    return [
        _at_most("optim", "first AdamW step matches hand arithmetic", abs(float(params.values["0.weight"][0]) - expected), 1e-12),
        _at_most("optim", "exponential decay lr(epoch 7) = 0.95^2", abs(lr - 0.95**2), 1e-14),
    ]


def metric_checks() -> list[CheckResult]:
    auc = compute_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    return [_at_most("diagnostics", "AUC of the four-point fixture is 0.75", abs(auc - 0.75), 1e-15)]


BATTERY: tuple[Callable[[], list[CheckResult]], ...] = (
    basis_checks,
    floor_checks,
    activation_backward_checks,
    diagonal_checks,
    gradient_checks,
    degree_checks,
    optim_checks,
    metric_checks,
)


def run_battery(fault: str | None = None) -> list[CheckResult]:
    if fault is not None and fault not in FAULT_KINDS:
        raise PropertyFailure(f"unknown fault kind {fault!r}; choose from {list(FAULT_KINDS)}")
    results: list[CheckResult] = []
    started = time.monotonic()
    with inject_fault(fault):
        for check in BATTERY:
            results.extend(check())
    LOGGER.info("Ran %d checks in %.1fs", len(results), time.monotonic() - started)
    return results


def format_report(results: list[CheckResult]) -> str:
    passed = sum(result.passed for result in results)
    lines = [result.line() for result in results]
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)


def require_all(results: list[CheckResult]) -> None:
    failed = [result for result in results if not result.passed]
    if failed:
        raise PropertyFailure("; ".join(f"{result.module}: {result.case}" for result in failed))
