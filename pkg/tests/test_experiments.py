import itertools
import tempfile
import unittest
from pathlib import Path

from app import experiments
from app.config_store import ConfigStore, load_config_set
from app.data import synth_regression
from app.diagnostics import read_csv
from app.models import ArchitectureConfig, ConfigError
from app.network import build_network, init_parameters
from app.numcore import Rng


def _tiny(name: str, architecture: dict, **extra):
    payload = {
        "name": name,
        "epochs": 2,
        "batch_size": 16,
        "dataset": {"kind": "synthetic", "synthetic": {"samples": 32}},
        "architecture": {"depth": 2, "width": 4, "bernstein": {"degree": 3}, **architecture},
        "diagnostics": {"checkpoint": False},
    }
    payload.update(extra)
    return load_config_set(payload)[0]


class HelpersTest(unittest.TestCase):
    def test_slugify(self):
        self.assertEqual(experiments.slugify("Bern(n=5,delta=0.01,[-3.0,3.0])"), "bern_n_5_delta_0.01_-3.0_3.0")
        self.assertEqual(experiments.slugify("  "), "run")

    def test_run_names_separate_configs(self):
        base = _tiny("sin", {})
        variants = [
            base,
            _tiny("sin", {}, seed=1),
            _tiny("sin", {"width": 5}),
            _tiny("sin", {"bernstein": {"degree": 3, "share": "per_layer"}}),
            _tiny("sin", {"bernstein": {"degree": 3, "init_mode": "raw_identity"}}),
            _tiny("sin", {"bernstein": {"degree": 3, "lower": -2.0, "upper": 3.0}}),
        ]
        names = [experiments.run_name(config) for config in variants]
        self.assertEqual(len(set(names)), len(names))
        self.assertEqual(experiments.run_name(_tiny("sin", {})), names[0])
        self.assertIn("_s1_", names[1])
        self.assertIn("-2.0", names[5])

    def test_identical_runs_rejected(self):
        config = _tiny("dup", {})
        with tempfile.TemporaryDirectory() as tmpdir:
            with self.assertRaises(ConfigError):
                experiments._train_all([config, config], Path(tmpdir), jobs=2)
            self.assertEqual(list(Path(tmpdir).iterdir()), [])

    def test_run_jobs_keeps_order(self):
        self.assertEqual(experiments.run_jobs(abs, [-3, 1, -2], jobs=1), [3, 1, 2])
        self.assertEqual(experiments.run_jobs(abs, [-3, 1, -2, -7], jobs=2), [3, 1, 2, 7])

    def test_tracked_layers(self):
        self.assertEqual(experiments.tracked_layers(50), (0, 24, 49))
        self.assertEqual(experiments.tracked_layers(1), (0, 0, 0))

    def test_matched_relu_width(self):
        arch = ArchitectureConfig(activation="bernstein", depth=2, width=8)
        relu = ArchitectureConfig(activation="relu", depth=2, width=7)
        count = init_parameters(build_network(relu, 1, 1), Rng(0)).count()
        self.assertEqual(experiments.matched_relu_width(count, arch, 1, 1), 7)

    def test_slope_variants(self):
        config = _tiny("leaky", {"activation": "leaky_relu"}, sweep={"leaky_slopes": [0.01, 0.1]})
        variants = experiments.slope_variants(config)
        self.assertEqual([variant.architecture.leaky_slope for variant in variants], [0.01, 0.1])
        relu = _tiny("relu", {"activation": "relu"})
        self.assertEqual(experiments.slope_variants(relu), [relu])

    def test_depth_variants(self):
        config = _tiny("bern", {"hidden": [4, 4]}, sweep={"depths": [1, 3]})
        variants = experiments.depth_variants(config)
        self.assertEqual([variant.architecture.hidden_widths for variant in variants], [[4], [4, 4, 4]])

    def test_modulus_theory_matches_brute_force(self):
        config = _tiny("mod", {}, dataset={"kind": "synthetic", "synthetic": {"function": "sin_k", "k": 2, "samples": 40}})
        samples = synth_regression(config.dataset.synthetic, config.seed)
        x = samples.features[:, 0]
        y = samples.targets[:, 0]
        delta = 3.0 ** -1
        expected = max(
            abs(y[i] - y[j]) for i, j in itertools.combinations(range(len(x)), 2) if abs(x[i] - x[j]) <= delta * (1 + 1e-12)
        )
        self.assertAlmostEqual(experiments.modulus_theory(config, depth=1, degree=3), expected, places=12)


class ExperimentRunTest(unittest.TestCase):
    def test_empty_config_sets(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            out = Path(tmpdir)
            self.assertEqual(experiments.cmd_exp1_derivatives([], out), [])
            self.assertEqual(experiments.cmd_exp2_dynamics([], out), [])
            self.assertEqual(experiments.cmd_exp3_scaling([], out), [])
            base = _tiny("none", {}, sweep={"targets": []})
            self.assertEqual(experiments.cmd_approx_sweep(base, out), [])
            self.assertEqual(list(out.iterdir()), [])

    def test_runs_differing_by_seed_get_own_dirs(self):
        configs = [_tiny("sin", {}, seed=0), _tiny("sin", {}, seed=1)]
        with tempfile.TemporaryDirectory() as tmpdir:
            results = experiments._train_all(configs, Path(tmpdir), jobs=2)
            dirs = sorted(path.name for path in Path(tmpdir).iterdir())
            seeds = [ConfigStore(Path(tmpdir) / name / "config.json").config.seed for name in dirs]
        self.assertEqual(len(dirs), 2)
        self.assertEqual(sorted(seeds), [0, 1])
        self.assertEqual(len(results), 2)

    def test_exp1(self):
        configs = [_tiny("bern", {"activation": "bernstein"}), _tiny("relu", {"activation": "relu"})]
        with tempfile.TemporaryDirectory() as tmpdir:
            written = experiments.cmd_exp1_derivatives(configs, Path(tmpdir), plot=True)
            summary = read_csv(Path(tmpdir) / "exp1_summary.csv")
            epochs = read_csv(written[0])
            self.assertTrue(all(path.exists() for path in written))
            self.assertEqual(len(list(Path(tmpdir).glob("*.svg"))), 4)
        self.assertEqual(len(written), 5)
        self.assertEqual(len(epochs), 3)
        self.assertEqual([row["depth"] for row in summary], ["2", "2"])
        self.assertEqual(summary[0]["floor_violations"], "0")
        self.assertAlmostEqual(float(summary[0]["theoretical_bound"]), 3 * 0.01 / 6)
        self.assertGreaterEqual(float(summary[0]["final_min_first"]), 3 * 0.01 / 6 - 1e-12)
        self.assertEqual(summary[1]["theoretical_bound"], "")

    def test_exp2_expands_slopes(self):
        configs = [
            _tiny("bern", {"activation": "bernstein"}),
            _tiny("leaky", {"activation": "leaky_relu"}, sweep={"leaky_slopes": [0.01, 0.1]}),
        ]
        with tempfile.TemporaryDirectory() as tmpdir:
            written = experiments.cmd_exp2_dynamics(configs, Path(tmpdir))
            summary = read_csv(Path(tmpdir) / "exp2_summary.csv")
            heatmap = read_csv(written[0])
        self.assertEqual(len(summary), 3)
        self.assertEqual(summary[0]["final_max_dead_ratio"], "0.0")
        self.assertEqual(len(heatmap), 3 * 2)
        self.assertEqual(len(written), 3 * 3 + 1)

    def test_exp3_depth_sweep(self):
        configs = [_tiny("bern", {"activation": "bernstein"}, sweep={"depths": [1, 2]})]
        with tempfile.TemporaryDirectory() as tmpdir:
            (path,) = experiments.cmd_exp3_scaling(configs, Path(tmpdir))
            rows = read_csv(path)
        self.assertEqual([row["depth"] for row in rows], ["1", "2"])
        self.assertEqual([row["degree"] for row in rows], ["3", "3"])
        self.assertEqual([row["epochs_run"] for row in rows], ["2", "2"])
        self.assertLess(int(rows[0]["params"]), int(rows[1]["params"]))

    def test_approx_sweep(self):
        base = _tiny(
            "approx",
            {},
            sweep={"targets": ["linear"], "depths": [1], "degrees": [3], "seeds": [0], "matched_relu": True},
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            (path,) = experiments.cmd_approx_sweep(base, Path(tmpdir), plot=True)
            rows = read_csv(path)
            self.assertTrue((Path(tmpdir) / "approx_linear.svg").exists())
        self.assertEqual([row["model"] for row in rows], ["bernstein", "relu_matched"])
        self.assertEqual(rows[0]["modulus_theory"], rows[1]["modulus_theory"])
        self.assertAlmostEqual(float(rows[0]["modulus_theory"]), 10 / 31, places=12)
        self.assertAlmostEqual(int(rows[0]["params"]), int(rows[1]["params"]), delta=int(rows[0]["params"]) // 4)


if __name__ == "__main__":
    unittest.main()
