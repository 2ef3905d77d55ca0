import math
import unittest

import numpy as np
from numpy.polynomial import Chebyshev

from app import network
from app.bernstein import BernsteinActivationSpec, InitMode
from app.models import ArchitectureConfig
from app.network import (
    ActivationKind,
    ActivationSpec,
    BatchNormSpec,
    ClampSpec,
    LinearSpec,
    Network,
    NetworkError,
    Parameters,
    ResidualSpec,
    StaleCacheError,
    backward,
    build_network,
    chebyshev_nodes,
    effective_degree_probe,
    forward,
    init_parameters,
    inject_fault,
    loss_bce_logits,
    loss_mse,
    loss_softmax_ce,
)
from app.numcore import Rng, ShapeError
from app.verify import (
    DEGREE_CASES,
    chain_leading_coefficient,
    chain_series,
    degree_checks,
    gradient_check,
    gradient_nets,
    jitter_parameters,
    random_degree_chain,
)


def _bernstein(spec: BernsteinActivationSpec, **kwargs) -> ActivationSpec:
    return ActivationSpec(activation=ActivationKind.BERNSTEIN, bernstein=spec, **kwargs)


class StructureTest(unittest.TestCase):
    def test_width_mismatch(self):
        with self.assertRaises(NetworkError) as ctx:
            Network(input_width=3, layers=(LinearSpec(3, 4), LinearSpec(5, 2)))
        self.assertIn("Layer 1", str(ctx.exception))

    def test_bernstein_needs_guard(self):
        spec = BernsteinActivationSpec(n=3)
        with self.assertRaises(NetworkError):
            Network(input_width=2, layers=(LinearSpec(2, 2), _bernstein(spec)))
        with self.assertRaises(NetworkError):
            Network(input_width=2, layers=(LinearSpec(2, 2), BatchNormSpec(2), ClampSpec(-5.0, 5.0), _bernstein(spec)))
        Network(input_width=2, layers=(LinearSpec(2, 2), BatchNormSpec(2), ClampSpec(-3.0, 3.0), _bernstein(spec)))

    def test_residual_must_keep_width(self):
        with self.assertRaises(NetworkError):
            Network(input_width=2, layers=(ResidualSpec((LinearSpec(2, 3),)),))

    def test_round_trip(self):
        arch = ArchitectureConfig(activation="bernstein", depth=2, width=5)
        net = build_network(arch, 4, 3)
        self.assertEqual(Network.from_dict(net.to_dict()), net)
        self.assertEqual(net.output_width, 3)
        self.assertEqual([path for path, _, _ in net.bernstein_layers()], ["3", "7"])
        self.assertFalse(hasattr(network, "copy_network"))

    def test_build_relu_res(self):
        net = build_network(ArchitectureConfig(activation="relu_res", depth=3, width=6), 4, 2)
        self.assertEqual(len(net.layers), 5)
        self.assertIsInstance(net.layers[1], ResidualSpec)
        self.assertEqual([path for path, _, _ in net.activation_layers()], ["1.2", "2.2", "3.2"])

    def test_build_without_batch_norm(self):
        net = build_network(ArchitectureConfig(activation="selu", depth=2, width=6, batch_norm=False), 4, 2)
        self.assertFalse(any(isinstance(layer, BatchNormSpec) for layer in net.layers))

    def test_init_scales(self):
        net = build_network(ArchitectureConfig(activation="relu", depth=1, width=400), 400, 1)
        params = init_parameters(net, Rng(0))
        self.assertAlmostEqual(float(np.std(params.values["0.weight"])), math.sqrt(2.0 / 400), delta=0.002)
        self.assertAlmostEqual(float(np.std(params.values["3.weight"])), math.sqrt(1.0 / 400), delta=0.01)
        self.assertEqual(float(np.sum(np.abs(params.values["0.bias"]))), 0.0)


class ForwardTest(unittest.TestCase):
    def test_zero_depth_is_identity(self):
        batch = Rng(1).normal(4, 3)
        out, _ = forward(Network(input_width=3), Parameters(values={}), batch)
        np.testing.assert_array_equal(out, batch)

    def test_raw_identity_layer_is_affine(self):
        spec = BernsteinActivationSpec(n=5, l=-3.0, u=3.0)
        net = Network(
            input_width=2,
            layers=(LinearSpec(2, 3), _bernstein(spec, init_mode=InitMode.RAW_IDENTITY)),
            allow_unguarded_bernstein=True,
        )
        params = init_parameters(net, Rng(2))
        params.values["0.weight"] = np.array([[0.5, -0.2], [0.1, 0.3], [-0.4, 0.4]])
        params.values["0.bias"] = np.array([0.1, -0.1, 0.0])
        batch = Rng(3).uniform(-1.0, 1.0, (6, 2))
        out, _ = forward(net, params, batch, mode="eval")
        np.testing.assert_allclose(out, batch @ params.values["0.weight"].T + params.values["0.bias"], atol=1e-10)

    def test_identical_rows_identical_outputs(self):
        net = build_network(ArchitectureConfig(activation="bernstein", depth=3, width=4), 3, 2)
        params = init_parameters(net, Rng(4))
        batch = np.tile(Rng(5).normal(1, 3), (5, 1))
        out, _ = forward(net, params, batch)
        for row in out[1:]:
            np.testing.assert_array_equal(row, out[0])

    def test_deterministic(self):
        net = build_network(ArchitectureConfig(activation="gelu", depth=2, width=4), 3, 2)
        params = init_parameters(net, Rng(6))
        batch = Rng(7).normal(8, 3)
        first, _ = forward(net, params.copy(), batch)
        second, _ = forward(net, params.copy(), batch)
        np.testing.assert_array_equal(first, second)

    def test_train_mode_updates_running_stats(self):
        net = Network(input_width=2, layers=(BatchNormSpec(2),))
        params = init_parameters(net, Rng(0))
        batch = np.array([[1.0, 2.0], [3.0, 6.0]])
        forward(net, params, batch)
        np.testing.assert_allclose(params.buffers["0.running_mean"], [0.2, 0.4])
        np.testing.assert_allclose(params.buffers["0.running_var"], [0.9 + 0.1 * 2.0, 0.9 + 0.1 * 8.0])
        before = params.copy()
        forward(net, params, batch, mode="eval")
        np.testing.assert_array_equal(params.buffers["0.running_mean"], before.buffers["0.running_mean"])

    def test_batch_norm_train_output_is_standardized(self):
        net = Network(input_width=4, layers=(BatchNormSpec(4, affine=False),))
        for rows in (16, 33, 128):
            batch = Rng(12).derive(rows).normal(rows, 4) * np.array([1e3, 2e3, 5e2, 4e3]) + np.array([50.0, -7.0, 0.0, 1e4])
            out, _ = forward(net, init_parameters(net, Rng(0)), batch)
            self.assertLess(float(np.max(np.abs(out.mean(axis=0)))), 1e-10)
            self.assertLess(float(np.max(np.abs(out.var(axis=0) - 1.0))), 1e-8)

    def test_wrong_width(self):
        with self.assertRaises(ShapeError):
            forward(Network(input_width=3), Parameters(values={}), np.zeros((2, 4)))


class BackwardTest(unittest.TestCase):
    def setUp(self):
        self.net = build_network(ArchitectureConfig(activation="bernstein", depth=2, width=4), 3, 2)
        self.params = init_parameters(self.net, Rng(8))
        self.batch = Rng(9).normal(8, 3)

    def test_zero_loss_gradient(self):
        _, cache = forward(self.net, self.params, self.batch)
        grads = backward(self.net, self.params, cache, np.zeros((8, 2)))
        self.assertEqual(set(grads.params), set(self.params.values))
        for value in grads.params.values():
            self.assertEqual(float(np.max(np.abs(value))), 0.0)

    def test_stale_cache(self):
        _, cache = forward(self.net, self.params, self.batch)
        self.params.version += 1
        with self.assertRaises(StaleCacheError):
            backward(self.net, self.params, cache, np.zeros((8, 2)))
        _, cache = forward(self.net, self.params, self.batch, mode="eval")
        with self.assertRaises(StaleCacheError):
            backward(self.net, self.params, cache, np.zeros((8, 2)))

    def test_gradient_shape_checked(self):
        _, cache = forward(self.net, self.params, self.batch)
        with self.assertRaises(ShapeError):
            backward(self.net, self.params, cache, np.zeros((8, 3)))

    def test_gradients_match_finite_differences(self):
        rng = Rng(10)
        for offset, (name, net) in enumerate(gradient_nets().items()):
            with self.subTest(net=name):
                params = jitter_parameters(init_parameters(net, rng.derive(offset, 1)), rng.derive(offset, 2))
                batch = rng.derive(offset, 3).normal(8, net.input_width)
                targets = rng.derive(offset, 4).normal(8, net.output_width)
                worst = gradient_check(net, params, batch, targets)
                self.assertLessEqual(max(worst.values()), 1.0, worst)

    def test_injected_fault_breaks_the_matching_layer(self):
        net = gradient_nets()["bernstein per_neuron"]
        params = jitter_parameters(init_parameters(net, Rng(11)), Rng(12))
        batch, targets = Rng(13).normal(8, 3), Rng(14).normal(8, 2)
        with inject_fault("bernstein"):
            worst = gradient_check(net, params, batch, targets)
        self.assertGreater(worst["3.rho"], 1.0)
        self.assertLessEqual(worst["4.weight"], 1.0)

    def test_clamped_units_get_no_gradient(self):
        net = Network(input_width=1, layers=(ClampSpec(-1.0, 1.0),))
        batch = np.array([[-2.0], [0.5], [3.0]])
        _, cache = forward(net, Parameters(values={}), batch)
        grads = backward(net, Parameters(values={}), cache, np.ones((3, 1)))
        np.testing.assert_array_equal(grads.input_grad, [[0.0], [1.0], [0.0]])
        self.assertAlmostEqual(cache.entries["0"]["saturation"], 2.0 / 3.0)

    def test_straight_through_clamp(self):
        net = Network(input_width=1, layers=(ClampSpec(-1.0, 1.0, straight_through=True),))
        _, cache = forward(net, Parameters(values={}), np.array([[-2.0], [3.0]]))
        grads = backward(net, Parameters(values={}), cache, np.ones((2, 1)))
        np.testing.assert_array_equal(grads.input_grad, [[1.0], [1.0]])


class LossTest(unittest.TestCase):
    def test_bce_at_zero(self):
        loss, grad = loss_bce_logits(np.zeros((4, 1)), np.array([0, 1, 0, 1]))
        self.assertAlmostEqual(loss, math.log(2.0), places=15)
        np.testing.assert_allclose(grad[:, 0], [0.125, -0.125, 0.125, -0.125])

    def test_softmax_uniform(self):
        loss, grad = loss_softmax_ce(np.zeros((3, 10)), np.array([0, 4, 9]))
        self.assertAlmostEqual(loss, math.log(10.0), places=14)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-16)
        with self.assertRaises(NetworkError):
            loss_softmax_ce(np.zeros((1, 10)), np.array([10]))

    def test_softmax_large_logits(self):
        loss, _ = loss_softmax_ce(np.array([[1000.0, 0.0]]), np.array([0]))
        self.assertAlmostEqual(loss, 0.0, places=12)

    def test_mse(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual(loss_mse(pred, pred)[0], 0.0)
        loss, grad = loss_mse(pred, np.zeros((2, 2)))
        self.assertAlmostEqual(loss, 7.5)
        np.testing.assert_allclose(grad, pred / 2.0)


class EffectiveDegreeTest(unittest.TestCase):
    def test_chain_is_composed_series(self):
        nodes = chebyshev_nodes(64)
        for degree, depth in DEGREE_CASES:
            net, params = random_degree_chain(degree, depth, seed=5)
            series = chain_series(net, params)
            full, lead = chain_leading_coefficient(net, params)
            self.assertEqual((series.degree(), full), (degree**depth, degree**depth))
            self.assertNotEqual(lead, 0.0)
            values, _ = forward(net, params, nodes.reshape(-1, 1), mode="eval")
            spread = float(np.ptp(values))
            self.assertLess(float(np.max(np.abs(series(nodes) - values[:, 0]))) / spread, 1e-10)

    def test_full_degree_fit_is_exact(self):
        for degree, depth in DEGREE_CASES:
            net, params = random_degree_chain(degree, depth, seed=6)
            values, _ = forward(net, params, chebyshev_nodes(64).reshape(-1, 1), mode="eval")
            self.assertLess(effective_degree_probe(net, params, degree**depth) / float(np.ptp(values)), 1e-9)

    def test_one_degree_short_leaves_top_term(self):
        nodes = chebyshev_nodes(64)
        for degree, depth in ((2, 1), (2, 2)):
            net, params = random_degree_chain(degree, depth, seed=7)
            full, lead = chain_leading_coefficient(net, params)
            expected = abs(lead) * 2.0 ** (1 - full) * float(np.max(np.abs(Chebyshev.basis(full)(nodes))))
            self.assertAlmostEqual(effective_degree_probe(net, params, full - 1) / expected, 1.0, places=6)

    def test_inputs_stay_in_range(self):
        for seed in range(10):
            net, params = random_degree_chain(3, 3, seed)
            values, _ = forward(net, params, np.linspace(-1.0, 1.0, 201).reshape(-1, 1))
            self.assertTrue(np.all(np.isfinite(values)))

    def test_seeded(self):
        first = random_degree_chain(2, 3, seed=4)[1]
        second = random_degree_chain(2, 3, seed=4)[1]
        other = random_degree_chain(2, 3, seed=8)[1]
        for key, value in first.values.items():
            np.testing.assert_array_equal(value, second.values[key])
        self.assertFalse(np.array_equal(first.values["1.rho"], other.values["1.rho"]))

    def test_degree_checks_pass(self):
        results = degree_checks()
        self.assertEqual([result.case for result in results if not result.passed], [])
        self.assertTrue(any(result.case.startswith("n=3 L=3") for result in results))
        self.assertTrue(any(result.case.startswith("n=2 L=3") for result in results))

    def test_rejects_batch_norm(self):
        net = Network(input_width=1, layers=(LinearSpec(1, 1), BatchNormSpec(1), LinearSpec(1, 1)))
        with self.assertRaises(NetworkError):
            effective_degree_probe(net, init_parameters(net, Rng(0)), 1)


if __name__ == "__main__":
    unittest.main()
