import math
import unittest

import numpy as np
from scipy.special import expit

from app import bernstein
from app.bernstein import (
    BernsteinActivationSpec,
    BernsteinDomainError,
    ConstrainedCoefficients,
    InitMode,
)
from app.numcore import Rng


def _linear_coefficients(spec):
    return spec.l + np.arange(spec.n + 1) * spec.width / spec.n


class SoftplusTest(unittest.TestCase):
    def test_values(self):
        self.assertAlmostEqual(bernstein.softplus(0.0), math.log(2.0), places=15)
        self.assertEqual(bernstein.softplus(100.0), 100.0)

    def test_inverse(self):
        x = np.linspace(-30.0, 30.0, 121)
        np.testing.assert_allclose(bernstein.softplus_inverse(bernstein.softplus(x)), x, atol=1e-12)
        with self.assertRaises(BernsteinDomainError):
            bernstein.softplus_inverse(0.0)


class BasisTest(unittest.TestCase):
    def test_hand_values(self):
        spec = BernsteinActivationSpec(n=2, l=0.0, u=1.0)
        np.testing.assert_allclose(bernstein.basis_eval_all(spec, 0.5), [0.25, 0.5, 0.25], atol=1e-16)

    def test_endpoints(self):
        spec = BernsteinActivationSpec(n=7, l=-2.0, u=5.0)
        low = bernstein.basis_eval_all(spec, spec.l)
        high = bernstein.basis_eval_all(spec, spec.u)
        self.assertEqual(low[0], 1.0)
        self.assertEqual(high[-1], 1.0)
        self.assertEqual(float(np.sum(np.abs(low[1:]))), 0.0)
        self.assertEqual(float(np.sum(np.abs(high[:-1]))), 0.0)

    def test_partition_of_unity_and_positivity(self):
        spec = BernsteinActivationSpec(n=15)
        x = Rng(4).uniform(-3.0, 3.0, 1000)
        basis = bernstein.basis_eval_all(spec, x)
        self.assertEqual(basis.shape, (1000, 16))
        self.assertLess(float(np.max(np.abs(basis.sum(axis=-1) - 1.0))), 1e-13)
        self.assertGreaterEqual(float(np.min(basis)), 0.0)

    def test_out_of_range_rejected(self):
        spec = BernsteinActivationSpec(n=3)
        with self.assertRaises(BernsteinDomainError) as ctx:
            bernstein.basis_eval_all(spec, np.array([0.0, 3.5]))
        self.assertIn("3.5", str(ctx.exception))

    def test_degree_and_interval_validation(self):
        for kwargs in ({"n": 0}, {"n": 3, "l": 1.0, "u": 1.0}, {"n": 3, "delta": 0.0}):
            with self.assertRaises(BernsteinDomainError):
                BernsteinActivationSpec(**kwargs)


class PolyTest(unittest.TestCase):
    def test_constant_coefficients(self):
        spec = BernsteinActivationSpec(n=6)
        x = np.linspace(-3.0, 3.0, 11)
        np.testing.assert_allclose(bernstein.poly_eval(np.full(7, 5.0), spec, x), 5.0, atol=1e-14)
        np.testing.assert_allclose(bernstein.poly_derivative(np.full(7, 5.0), spec, x), 0.0, atol=1e-13)

    def test_linear_precision(self):
        spec = BernsteinActivationSpec(n=9, l=-3.0, u=3.0)
        x = Rng(5).uniform(-3.0, 3.0, 1000)
        c = _linear_coefficients(spec)
        np.testing.assert_allclose(bernstein.poly_eval(c, spec, x), x, atol=1e-12)
        np.testing.assert_allclose(bernstein.poly_derivative(c, spec, x), 1.0, atol=1e-12)

    def test_hand_value(self):
        spec = BernsteinActivationSpec(n=2, l=0.0, u=1.0)
        self.assertAlmostEqual(bernstein.poly_eval([0.0, 1.0, 0.0], spec, 0.5), 0.5, places=15)

    def test_derivative_matches_finite_difference(self):
        rng = Rng(6)
        spec = BernsteinActivationSpec(n=8, l=-2.0, u=4.0)
        h = 1e-6
        for index in range(50):
            c = rng.derive(index).normal(1, 9)[0]
            x = float(rng.derive(index, 1).uniform(-1.9, 3.9, 1)[0])
            numeric = (bernstein.poly_eval(c, spec, x + h) - bernstein.poly_eval(c, spec, x - h)) / (2 * h)
            self.assertLess(abs(bernstein.poly_derivative(c, spec, x) - numeric), 1e-7)

    def test_wrong_coefficient_count(self):
        with self.assertRaises(BernsteinDomainError):
            bernstein.poly_eval([0.0, 1.0], BernsteinActivationSpec(n=2), 0.0)


class CoefficientTest(unittest.TestCase):
    def test_reconstruct_hand_values(self):
        cc = ConstrainedCoefficients(0.0, np.zeros(2))
        c = bernstein.reconstruct_coefficients(cc, 0.01)
        step = math.log(2.0) + 0.01
        np.testing.assert_allclose(c, [0.0, step, 2 * step], rtol=1e-15)

    def test_steps_never_below_delta(self):
        rho = Rng(7).normal(20, 9, 0.0, 10.0)
        c = bernstein.reconstruct_coefficients(ConstrainedCoefficients(np.zeros(20), rho), 0.01)
        self.assertGreaterEqual(float(np.min(np.diff(c, axis=-1))), 0.01 - 1e-12)

    def test_constrained_activation_strictly_increasing(self):
        rng = Rng(21)
        for index in range(100):
            local = rng.derive(index)
            n = int(local.derive(1).uniform(1, 13, 1)[0])
            lower = float(local.derive(2).uniform(-5.0, 0.0, 1)[0])
            spec = BernsteinActivationSpec(n=n, l=lower, u=lower + float(local.derive(3).uniform(0.5, 8.0, 1)[0]), delta=0.01)
            cc = ConstrainedCoefficients(local.derive(4).normal(1, 1)[0, 0], local.derive(5).normal(1, n, 0.0, 4.0)[0])
            c = bernstein.reconstruct_coefficients(cc, spec.delta)
            x = np.sort(local.derive(6).uniform(spec.l, spec.u, 300))
            keep = np.concatenate([[True], np.diff(x) > 1e-6])
            values = bernstein.poly_eval(c, spec, x[keep])
            self.assertTrue(np.all(np.diff(values) > 0.0), msg=f"n={n} on [{spec.l}, {spec.u}]")

    def test_steps_collapse_to_delta(self):
        c = bernstein.reconstruct_coefficients(ConstrainedCoefficients(0.0, np.full(4, -700.0)), 0.05)
        self.assertAlmostEqual(float(c[-1] - c[0]), 0.2, places=14)

    def test_mismatched_shapes(self):
        with self.assertRaises(BernsteinDomainError):
            ConstrainedCoefficients(np.zeros(3), np.zeros((2, 4)))

    def test_unit_span_init(self):
        spec = BernsteinActivationSpec(n=9, delta=0.01)
        cc = bernstein.init_rho(spec, InitMode.UNIT_SPAN)
        np.testing.assert_allclose(cc.rho, -2.24056, atol=1e-5)
        c = bernstein.reconstruct_coefficients(cc, spec.delta)
        x = np.linspace(-2.9, 2.9, 17)
        np.testing.assert_allclose(bernstein.poly_derivative(c, spec, x), 1.0 / 6.0, atol=1e-12)

    def test_raw_identity_init(self):
        spec = BernsteinActivationSpec(n=9, delta=0.01)
        c = bernstein.identity_coefficients(spec, InitMode.RAW_IDENTITY)
        x = np.linspace(-3.0, 3.0, 101)
        np.testing.assert_allclose(bernstein.poly_eval(c, spec, x), x, atol=1e-12)

    def test_init_rejects_large_delta(self):
        with self.assertRaises(BernsteinDomainError):
            bernstein.init_rho(BernsteinActivationSpec(n=10, delta=0.1), InitMode.UNIT_SPAN)
        bernstein.init_rho(BernsteinActivationSpec(n=10, delta=0.1), InitMode.RAW_IDENTITY)


class BoundsTest(unittest.TestCase):
    def test_theoretical_constants(self):
        self.assertAlmostEqual(bernstein.theoretical_lower_bound(BernsteinActivationSpec(9, -3.0, 3.0, 0.01)), 0.015, places=15)
        self.assertAlmostEqual(bernstein.theoretical_lower_bound(BernsteinActivationSpec(9, -5.0, 5.0, 0.01)), 0.009, places=15)
        self.assertAlmostEqual(bernstein.theoretical_lower_bound(BernsteinActivationSpec(15, -3.0, 3.0, 0.05)), 0.125, places=15)

    def test_constant_steps(self):
        spec = BernsteinActivationSpec(n=4, l=0.0, u=2.0)
        bounds = bernstein.derivative_bounds(0.3 * np.arange(5), spec)
        self.assertAlmostEqual(bounds.m_lower, 0.6, places=14)
        self.assertAlmostEqual(bounds.m_upper, 0.6, places=14)

    def test_sampled_derivative_within_bounds(self):
        rng = Rng(8)
        spec = BernsteinActivationSpec(n=7, l=-1.0, u=2.0)
        for index in range(200):
            c = np.cumsum(rng.derive(index).uniform(0.0, 2.0, 8))
            x = rng.derive(index, 1).uniform(-1.0, 2.0, 50)
            bounds = bernstein.derivative_bounds(c, spec)
            slopes = bernstein.poly_derivative(c, spec, x)
            self.assertGreaterEqual(float(np.min(slopes)), bounds.m_lower - 1e-10)
            self.assertLessEqual(float(np.max(slopes)), bounds.m_upper + 1e-10)

    def test_constrained_floor(self):
        spec = BernsteinActivationSpec(n=9, delta=0.01)
        rho = Rng(10).normal(100, 9, 0.0, 4.0)
        c = bernstein.reconstruct_coefficients(ConstrainedCoefficients(np.zeros(100), rho), spec.delta)
        bounds = bernstein.derivative_bounds(c, spec)
        self.assertGreaterEqual(float(np.min(bounds.m_lower)), 0.015 - 1e-12)

    def test_upper_bound_check(self):
        self.assertTrue(bernstein.upper_bound_check(np.full(4, 2.0), BernsteinActivationSpec(n=3), 100))
        spec = BernsteinActivationSpec(n=5, l=0.0, u=1.0)
        self.assertTrue(bernstein.upper_bound_check(_linear_coefficients(spec), spec, 100))
        spec = BernsteinActivationSpec(n=6)
        for index in range(100):
            c = Rng(11).derive(index).normal(1, 7)[0]
            self.assertTrue(bernstein.upper_bound_check(c, spec, 50))
        with self.assertRaises(BernsteinDomainError):
            bernstein.upper_bound_check(np.zeros(7), spec, 0)


class BackwardTest(unittest.TestCase):
    def test_grad_c0_is_upstream(self):
        spec = BernsteinActivationSpec(n=5)
        cc = ConstrainedCoefficients(0.3, Rng(12).normal(1, 5)[0])
        _, grad_c0, _ = bernstein.activation_backward(cc, spec, 1.2, 0.7)
        self.assertAlmostEqual(float(grad_c0), 0.7, places=13)

    def test_upper_endpoint_rho_gradient(self):
        spec = BernsteinActivationSpec(n=4)
        rho = np.array([-1.0, 0.0, 0.5, 2.0])
        _, _, grad_rho = bernstein.activation_backward(ConstrainedCoefficients(0.0, rho), spec, spec.u, 2.0)
        np.testing.assert_allclose(grad_rho, 2.0 * expit(rho), rtol=1e-14)

    def test_per_neuron_shapes(self):
        spec = BernsteinActivationSpec(n=3)
        cc = ConstrainedCoefficients(np.zeros(4), np.zeros((4, 3)))
        x = Rng(13).uniform(-3.0, 3.0, (6, 4))
        grad_x, grad_c0, grad_rho = bernstein.activation_backward(cc, spec, x, np.ones((6, 4)))
        self.assertEqual(grad_x.shape, (6, 4))
        self.assertEqual(grad_c0.shape, (4,))
        self.assertEqual(grad_rho.shape, (4, 3))
        np.testing.assert_allclose(grad_c0, 6.0, atol=1e-12)

    def test_free_coefficients(self):
        spec = BernsteinActivationSpec(n=2, l=0.0, u=1.0)
        grad_x, grad_c = bernstein.free_coefficient_backward([0.0, 1.0, 0.0], spec, 0.5, 1.0)
        np.testing.assert_allclose(grad_c, [0.25, 0.5, 0.25], atol=1e-16)
        self.assertAlmostEqual(float(grad_x), 0.0, places=14)


class DiagonalBoundTest(unittest.TestCase):
    def setUp(self):
        self.spec = BernsteinActivationSpec(n=9, delta=0.01)
        rho = Rng(14).normal(6, 9, 0.0, 2.0)
        self.layer = bernstein.reconstruct_coefficients(ConstrainedCoefficients(np.zeros(6), rho), self.spec.delta)

    def test_constrained_layer_holds(self):
        self.assertEqual(bernstein.check_diagonal_bound(self.layer, self.spec), (True, []))

    def test_constant_neuron_reported(self):
        layer = self.layer.copy()
        layer[4] = 2.0
        self.assertEqual(bernstein.check_diagonal_bound(layer, self.spec), (False, [4]))

    def test_decreasing_neurons_hold(self):
        self.assertEqual(bernstein.check_diagonal_bound(-self.layer, self.spec), (True, []))


if __name__ == "__main__":
    unittest.main()
