from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import numpy as np

from app import diagnostics
from app.data import modulus_estimate, synth_regression, target_values
from app.diagnostics import write_csv
from app.models import (
    ArchitectureConfig,
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    SyntheticTargetConfig,
    config_fingerprint,
    config_set_fingerprint,
)
from app.network import build_network, init_parameters
from app.numcore import Rng
from app.trainer import RunResult, train_config

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

EXP1_EPOCH_COLUMNS = ["epoch", "first", "middle", "last", "theoretical_bound"]
EXP1_SUMMARY_COLUMNS = ["run", "activation", "depth", "final_min_first", "final_min_last", "theoretical_bound", "floor_violations"]
EXP2_MAG_COLUMNS = ["epoch", "first_layer_mag"]
EXP2_SUMMARY_COLUMNS = ["run", "activation", "depth", "final_max_dead_ratio", "deep10_dead_ratio", "median_mag_last2"]
EXP3_COLUMNS = ["run", "activation", "degree", "depth", "hidden", "params", "best_train_loss", "best_val_metric", "epochs_run"]
APPROX_COLUMNS = ["target", "depth", "degree", "seed", "model", "params", "best_sup_error", "best_mse", "modulus_theory"]


def slugify(value: str) -> str:
    cleaned = re.sub(r"[^a-zA-Z0-9.\-]+", "_", value.strip().lower()).strip("_")
    return cleaned or "run"


def run_jobs(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Map `fn` over `items`; results come back in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _train_job(job: tuple[ExperimentConfig, str]) -> RunResult:
    config, run_dir = job
    return train_config(config, run_dir)


def run_name(config: ExperimentConfig) -> str:
    """Directory name for one run; the fingerprint suffix separates configs with equal labels."""
    arch = config.architecture
    widths = "x".join(dict.fromkeys(str(width) for width in arch.hidden_widths)) or "0"
    label = f"{config.name}_{arch.label}_d{len(arch.hidden_widths)}_w{widths}_s{config.seed}"
    return f"{slugify(label)}_{config_fingerprint(config)[:8]}"


def _train_all(configs: Sequence[ExperimentConfig], out: Path, jobs: int) -> list[RunResult]:
    names = [run_name(config) for config in configs]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ConfigError(f"identical runs in one config set: {', '.join(duplicates)}")
    jobs_list = [(config, str(out / name)) for config, name in zip(configs, names)]
    return run_jobs(_train_job, jobs_list, jobs)


def _set_fingerprint(configs: Sequence[ExperimentConfig]) -> str:
    return config_fingerprint(configs[0]) if len(configs) == 1 else config_set_fingerprint(configs)


def _bound_cell(result: RunResult) -> float | str:
    return "" if result.theoretical_bound is None else result.theoretical_bound


def tracked_layers(count: int) -> tuple[int, int, int]:
    """Indices of the first, middle and last activation layers."""
    return 0, max(count - 1, 0) // 2, max(count - 1, 0)


# ---------------------------------------------------------------- experiment 1


def cmd_exp1_derivatives(configs: Sequence[ExperimentConfig], out: Path, jobs: int = 1, plot: bool = False) -> list[Path]:
    if not configs:
        LOGGER.info("exp1: empty config set, nothing to run")
        return []
    results = _train_all(configs, out, jobs)
    written: list[Path] = []
    summary = []
    for config, result in zip(configs, results):
        name = run_name(config)
        layers = len(result.records[0].min_derivative)
        first, middle, last = tracked_layers(layers)
        rows = [
            {
                "epoch": record.epoch,
                "first": record.min_derivative[first] if layers else "",
                "middle": record.min_derivative[middle] if layers else "",
                "last": record.min_derivative[last] if layers else "",
                "theoretical_bound": _bound_cell(result),
            }
            for record in result.records
        ]
        written.append(write_csv(out / f"exp1_{name}_epochs.csv", EXP1_EPOCH_COLUMNS, rows, result.fingerprint))
        written.append(
            diagnostics.export_depth_profile_csv(
                result.records, out / f"exp1_{name}_depth.csv", result.fingerprint, result.theoretical_bound
            )
        )
        final = result.records[-1].min_derivative
        summary.append(
            {
                "run": name,
                "activation": result.label,
                "depth": layers,
                "final_min_first": final[first] if layers else "",
                "final_min_last": final[last] if layers else "",
                "theoretical_bound": _bound_cell(result),
                "floor_violations": result.floor_violations,
            }
        )
        if plot and layers:
            epochs = [record.epoch for record in result.records]
            series = {key: [row[key] for row in rows] for key in ("first", "middle", "last")}
            diagnostics.plot_series(
                out / f"exp1_{name}_epochs.svg", epochs, series, "epoch", "min |sigma'|", True, result.theoretical_bound
            )
            diagnostics.plot_series(
                out / f"exp1_{name}_depth.svg",
                list(range(1, layers + 1)),
                {result.label: final},
                "layer",
                "min |sigma'|",
                True,
                result.theoretical_bound,
            )
    written.append(write_csv(out / "exp1_summary.csv", EXP1_SUMMARY_COLUMNS, summary, _set_fingerprint(configs)))
    return written


# ---------------------------------------------------------------- experiment 2


def deep_dead_ratio(result: RunResult, deepest: int = 10) -> float:
    ratios = result.records[-1].dead_ratio
    return float(np.mean(ratios[-deepest:])) if ratios else 0.0


def median_recent_mag(result: RunResult, epochs: int = 2) -> float:
    trained = [record.first_layer_mag for record in result.records if record.epoch > 0] or [result.records[-1].first_layer_mag]
    return float(np.median(trained[-epochs:]))


def slope_variants(config: ExperimentConfig) -> list[ExperimentConfig]:
    """One LeakyReLU run per slope in `sweep.leaky_slopes`; other activations pass through."""
    if config.architecture.activation != "leaky_relu" or not config.sweep.leaky_slopes:
        return [config]
    return [
        config.replace(architecture=ArchitectureConfig.from_dict({**config.architecture.to_dict(), "leaky_slope": slope}))
        for slope in config.sweep.leaky_slopes
    ]


def cmd_exp2_dynamics(configs: Sequence[ExperimentConfig], out: Path, jobs: int = 1, plot: bool = False) -> list[Path]:
    if not configs:
        LOGGER.info("exp2: empty config set, nothing to run")
        return []
    configs = [variant for config in configs for variant in slope_variants(config)]
    results = _train_all(configs, out, jobs)
    written: list[Path] = []
    summary = []
    for config, result in zip(configs, results):
        name = run_name(config)
        written.append(diagnostics.export_heatmap_csv(result.records, out / f"exp2_{name}_heatmap.csv", result.fingerprint))
        written.append(
            diagnostics.export_depth_profile_csv(
                result.records, out / f"exp2_{name}_dead.csv", result.fingerprint, result.theoretical_bound
            )
        )
        mag_rows = [{"epoch": record.epoch, "first_layer_mag": record.first_layer_mag} for record in result.records]
        written.append(write_csv(out / f"exp2_{name}_mag.csv", EXP2_MAG_COLUMNS, mag_rows, result.fingerprint))
        summary.append(
            {
                "run": name,
                "activation": result.label,
                "depth": len(result.records[-1].dead_ratio),
                "final_max_dead_ratio": max(result.records[-1].dead_ratio, default=0.0),
                "deep10_dead_ratio": deep_dead_ratio(result),
                "median_mag_last2": median_recent_mag(result),
            }
        )
        if plot and result.records[-1].dead_ratio:
            diagnostics.plot_heatmap(out / f"exp2_{name}_heatmap.svg", result.records, title=result.label)
            diagnostics.plot_series(
                out / f"exp2_{name}_mag.svg",
                [row["epoch"] for row in mag_rows],
                {result.label: [row["first_layer_mag"] for row in mag_rows]},
                "epoch",
                "first-layer MAG",
                True,
            )
    written.append(write_csv(out / "exp2_summary.csv", EXP2_SUMMARY_COLUMNS, summary, _set_fingerprint(configs)))
    return written


# ---------------------------------------------------------------- experiment 3


def depth_variants(config: ExperimentConfig) -> list[ExperimentConfig]:
    if not config.sweep.depths:
        return [config]
    variants = []
    for depth in config.sweep.depths:
        arch = ArchitectureConfig.from_dict({**config.architecture.to_dict(), "depth": depth, "hidden": []})
        variants.append(config.replace(architecture=arch))
    return variants


def cmd_exp3_scaling(configs: Sequence[ExperimentConfig], out: Path, jobs: int = 1, plot: bool = False) -> list[Path]:
    if not configs:
        LOGGER.info("exp3: empty config set, nothing to run")
        return []
    variants = [variant for config in configs for variant in depth_variants(config)]
    results = _train_all(variants, out, jobs)
    rows = []
    for config, result in zip(variants, results):
        arch = config.architecture
        rows.append(
            {
                "run": run_name(config),
                "activation": result.label,
                "degree": arch.bernstein.degree if arch.activation == "bernstein" else "",
                "depth": len(arch.hidden_widths),
                "hidden": "x".join(str(width) for width in arch.hidden_widths),
                "params": result.parameter_count,
                "best_train_loss": result.best_train_loss,
                "best_val_metric": result.best_metric,
                "epochs_run": result.epochs_run,
            }
        )
    path = write_csv(out / "exp3_loss_vs_depth.csv", EXP3_COLUMNS, rows, _set_fingerprint(configs))
    if plot:
        series: dict[str, tuple[list[int], list[float]]] = {}
        for row in rows:
            depths, losses = series.setdefault(row["activation"], ([], []))
            depths.append(row["depth"])
            losses.append(row["best_train_loss"])
        for label, (depths, losses) in series.items():
            diagnostics.plot_series(
                out / f"exp3_{slugify(label)}_loss_vs_depth.svg", depths, {label: losses}, "depth", "best train loss", True
            )
    return [path]


# ---------------------------------------------------------------- approximation sweep


def relu_parameter_count(arch: ArchitectureConfig, width: int, input_width: int, output_width: int) -> int:
    relu = ArchitectureConfig.from_dict({**arch.to_dict(), "activation": "relu", "width": width, "hidden": []})
    net = build_network(relu, input_width, output_width)
    return init_parameters(net, Rng(0)).count()


def matched_relu_width(target_count: int, arch: ArchitectureConfig, input_width: int, output_width: int) -> int:
    """Width whose ReLU network parameter count is closest to `target_count`."""
    best_width, best_gap = 1, None
    for width in range(1, 4 * max(arch.width, 1) + 1):
        gap = abs(relu_parameter_count(arch, width, input_width, output_width) - target_count)
        if best_gap is None or gap < best_gap:
            best_width, best_gap = width, gap
    return best_width


def approx_configs(base: ExperimentConfig) -> list[tuple[ExperimentConfig, dict]]:
    sweep = base.sweep
    depths = sweep.depths or [1, 2, 3]
    jobs = []
    for target_name in sweep.targets:
        parsed = SyntheticTargetConfig.parse_name(target_name)
        target = SyntheticTargetConfig.from_dict(
            {**base.dataset.synthetic.to_dict(), "function": parsed.function, "k": parsed.k}
        )
        for depth in depths:
            for degree in sweep.degrees:
                for seed in sweep.seeds:
                    bern = {**base.architecture.bernstein.to_dict(), "degree": degree}
                    arch = ArchitectureConfig.from_dict(
                        {**base.architecture.to_dict(), "activation": "bernstein", "depth": depth, "hidden": [], "bernstein": bern}
                    )
                    dataset = DatasetConfig.from_dict(
                        {**base.dataset.to_dict(), "kind": "synthetic", "synthetic": target.to_dict()}
                    )
                    config = base.replace(
                        name=slugify(f"{target.name}_L{depth}_n{degree}_s{seed}"),
                        seed=seed,
                        dataset=dataset,
                        architecture=arch,
                    )
                    row = {"target": target.name, "depth": depth, "degree": degree, "seed": seed}
                    jobs.append((config, {**row, "model": "bernstein"}))
                    if sweep.matched_relu:
                        outputs = target_values(target, np.zeros(1)).shape[1]
                        count = init_parameters(build_network(arch, 1, outputs), Rng(0)).count()
                        width = matched_relu_width(count, arch, 1, outputs)
                        relu = ArchitectureConfig.from_dict({**arch.to_dict(), "activation": "relu", "width": width})
                        relu_config = config.replace(name=slugify(f"{config.name}_relu_w{width}"), architecture=relu)
                        jobs.append((relu_config, {**row, "model": "relu_matched"}))
    return jobs


def modulus_theory(config: ExperimentConfig, depth: int, degree: int) -> float:
    target = config.dataset.synthetic
    clean = SyntheticTargetConfig.from_dict({**target.to_dict(), "noise": 0.0})
    samples = synth_regression(clean, config.seed)
    return modulus_estimate(samples.features, samples.targets, float(degree) ** (-depth))


def cmd_approx_sweep(base: ExperimentConfig, out: Path, jobs: int = 1, plot: bool = False) -> list[Path]:
    planned = approx_configs(base)
    if not planned:
        LOGGER.info("approx: sweep is empty, nothing to run")
        return []
    results = _train_all([config for config, _ in planned], out, jobs)
    rows = []
    for (config, row), result in zip(planned, results):
        rows.append(
            {
                **row,
                "params": result.parameter_count,
                "best_sup_error": result.best_sup_error,
                "best_mse": result.best_mse,
                "modulus_theory": modulus_theory(config, row["depth"], row["degree"]),
            }
        )
    path = write_csv(out / "approx_error_vs_depth.csv", APPROX_COLUMNS, rows, config_fingerprint(base))
    if plot:
        _plot_approx(rows, out)
    return [path]


def median_error(rows: Sequence[dict], target: str, model: str, degree: int, depth: int, column: str = "best_mse") -> float:
    values = [
        row[column]
        for row in rows
        if (row["target"], row["model"], row["degree"], row["depth"]) == (target, model, degree, depth)
    ]
    return float(np.median(values)) if values else float("nan")


def _plot_approx(rows: Sequence[dict], out: Path) -> None:
    degrees = sorted({row["degree"] for row in rows})
    for target in sorted({row["target"] for row in rows}):
        depths = sorted({row["depth"] for row in rows if row["target"] == target})
        series: dict[str, list[float]] = {}
        for model in ("bernstein", "relu_matched"):
            for degree in degrees:
                values = [median_error(rows, target, model, degree, depth) for depth in depths]
                if not all(np.isnan(values)):
                    series[f"{model} n={degree}"] = values
        diagnostics.plot_series(out / f"approx_{slugify(target)}.svg", depths, series, "depth", "best MSE", True)
