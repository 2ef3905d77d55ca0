import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path

from app.main import build_parser, main


def _write_config(path: Path, payload: dict) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


TINY = {
    "name": "tiny",
    "epochs": 1,
    "batch_size": 16,
    "dataset": {"kind": "synthetic", "synthetic": {"samples": 32}},
    "architecture": {"depth": 1, "width": 4, "bernstein": {"degree": 3}},
}


class CliTest(unittest.TestCase):
    def _run(self, argv: list[str]) -> tuple[int, str]:
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            code = main(argv)
        return code, stdout.getvalue()

    def test_verify_passes(self):
        code, output = self._run(["verify"])
        self.assertEqual(code, 0)
        self.assertIn("PASS", output)
        self.assertNotIn("FAIL", output)

    def test_injected_fault_is_caught(self):
        code, output = self._run(["verify", "--inject-fault", "bernstein"])
        self.assertEqual(code, 2)
        self.assertIn("FAIL", output)

    def test_train(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir) / "config.json", TINY)
            out = Path(tmpdir) / "out"
            code, output = self._run(["train", "--config", config, "--out", str(out), "--seed", "3"])
            self.assertEqual(code, 0)
            self.assertIn("tiny:", output)
            (run_dir,) = list(out.iterdir())
            self.assertTrue((run_dir / "metrics.csv").exists())
            saved = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        self.assertEqual(saved["seed"], 3)
        self.assertEqual(saved["out_dir"], str(out))

    def test_subset_rows_override(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir) / "config.json", TINY)
            out = Path(tmpdir) / "out"
            code, _ = self._run(["train", "--config", config, "--out", str(out), "--subset-rows", "20"])
            (run_dir,) = list(out.iterdir())
            saved = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        self.assertEqual(code, 0)
        self.assertEqual(saved["dataset"]["synthetic"]["samples"], 20)

    def test_exp3_prints_paths(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir) / "config.json", TINY)
            out = Path(tmpdir) / "out"
            code, output = self._run(["exp3", "--config", config, "--out", str(out)])
            self.assertEqual(code, 0)
            self.assertEqual(output.strip(), str(out / "exp3_loss_vs_depth.csv"))

    def test_missing_config(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            code, _ = self._run(["train", "--config", str(Path(tmpdir) / "absent.json")])
        self.assertEqual(code, 1)

    def test_bad_config(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir) / "config.json", {**TINY, "learning_rate": 1.0})
            code, _ = self._run(["train", "--config", config])
        self.assertEqual(code, 1)

    def test_usage_errors_exit_with_one(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as raised:
                main(["train", "--no-such-flag"])
            self.assertEqual(raised.exception.code, 1)
            with self.assertRaises(SystemExit) as raised:
                main(["verify", "--inject-fault", "softmax"])
            self.assertEqual(raised.exception.code, 1)

    def test_parser_defaults(self):
        args = build_parser().parse_args(["exp2", "--config", "c.json"])
        self.assertEqual(args.jobs, 1)
        self.assertFalse(args.plot)
        self.assertIsNone(args.seed)


if __name__ == "__main__":
    unittest.main()
