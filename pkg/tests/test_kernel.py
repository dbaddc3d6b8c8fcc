import logging
import math
import unittest
from unittest.mock import patch

import cvxpy as cp
import numpy as np

from pynafd.kernel import ConvexProgram, KernelOptions, finite_diff_check, psd_floor, solve
from pynafd.utils import abs_squared, quad_over_lin

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


class TestSolve(unittest.TestCase):
    def test_bound_active(self):
        x = cp.Variable()
        report = solve(ConvexProgram('bound', -cp.square(x - 3), [x <= 2], {'x': x}))
        self.assertTrue(report.usable)
        self.assertAlmostEqual(float(report.value('x')), 2.0, places=5)
        self.assertAlmostEqual(report.objective, -1.0, places=5)
        self.assertEqual(len(report.multipliers), 1)

    def test_equality_constrained_qp(self):
        rng = np.random.default_rng(0)
        n, m = 5, 2
        factor = rng.standard_normal((n, n))
        P = factor @ factor.T + n * np.eye(n)
        c = rng.standard_normal(n)
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        x = cp.Variable(n)
        program = ConvexProgram('qp', -(0.5 * cp.quad_form(x, P) + c @ x), [A @ x == b], {'x': x})
        report = solve(program)
        self.assertTrue(report.usable)
        # KKT system of the QP
        kkt = np.block([[P, A.T], [A, np.zeros((m, m))]])
        expected = np.linalg.solve(kkt, np.concatenate([-c, b]))[:n]
        self.assertTrue(np.allclose(report.value('x'), expected, atol=1e-6))

    def test_list_of_blocks(self):
        x = [cp.Variable(name=f'x{i}') for i in range(3)]
        constraints = [xi <= i for i, xi in enumerate(x)]
        report = solve(ConvexProgram('blocks', sum(x), constraints, {'x': x, 'fixed': np.ones(2)}))
        self.assertTrue(np.allclose([float(v) for v in report.value('x')], [0.0, 1.0, 2.0], atol=1e-6))
        self.assertTrue(np.array_equal(report.value('fixed'), np.ones(2)))

    def test_infeasible(self):
        x = cp.Variable()
        report = solve(ConvexProgram('empty', x, [x >= 1, x <= 0], {'x': x}))
        self.assertEqual(report.status, 'infeasible')
        self.assertFalse(report.usable)

    def test_not_dcp(self):
        x = cp.Variable()
        with self.assertRaises(ValueError):
            solve(ConvexProgram('convex objective', cp.square(x), [x <= 1], {'x': x}))

    def test_options(self):
        with self.assertRaises(ValueError):
            KernelOptions(tol=0.0)
        with self.assertRaises(ValueError):
            KernelOptions(max_iter=0)
        self.assertIn('max_iters', KernelOptions().solver_opts('SCS'))

    def test_compile_error_is_numerical(self):
        x = cp.Variable()
        program = ConvexProgram('broken', -cp.square(x), [], {'x': x})
        with patch('pynafd.kernel._solve_with', side_effect=TypeError('No arguments given to Hstack')):
            report = solve(program)
        self.assertEqual(report.status, 'numerical')
        self.assertFalse(report.usable)

    def test_complex_scalar_quad_over_lin(self):
        x = cp.Variable(complex=True)
        t = cp.Variable()
        report = solve(ConvexProgram('disc', cp.real(x), [quad_over_lin(x, t) <= 1.0, t <= 2.0], {'x': x}))
        self.assertTrue(report.usable, report.status)
        self.assertAlmostEqual(complex(report.value('x')).real, math.sqrt(2.0), places=4)
        self.assertAlmostEqual(complex(report.value('x')).imag, 0.0, places=4)

    def test_complex_scalar_abs_squared(self):
        x = cp.Variable(complex=True)
        report = solve(ConvexProgram('nearest', -abs_squared(x - (1.0 + 2.0j)), [], {'x': x}))
        self.assertTrue(report.usable, report.status)
        self.assertAlmostEqual(complex(report.value('x')), 1.0 + 2.0j, places=4)


class TestPsdFloor(unittest.TestCase):
    def test_clips_negative_part(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        matrix = a + a.conj().T
        values, vectors = np.linalg.eigh(matrix)
        expected = (vectors * np.clip(values, 0.0, None)) @ vectors.conj().T
        self.assertTrue(np.allclose(psd_floor(matrix), expected, atol=1e-10))

    def test_psd_unchanged(self):
        matrix = np.array([[2.0, 1.0], [1.0, 2.0]])
        self.assertTrue(np.array_equal(psd_floor(matrix), matrix))

    def test_rejects_non_hermitian(self):
        with self.assertRaises(ValueError):
            psd_floor(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with self.assertRaises(ValueError):
            psd_floor(np.ones((2, 3)))


class TestFiniteDiff(unittest.TestCase):
    def test_real_quadratic(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 3))
        A = A + A.T
        point = rng.standard_normal(3)
        self.assertLess(finite_diff_check(lambda x: x @ A @ x, 2.0 * A @ point, point), 1e-5)

    def test_complex_quadratic(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        A = np.outer(a, a.conj())
        point = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        error = finite_diff_check(lambda w: np.real(np.vdot(w, A @ w)), lambda w: 2.0 * A @ w, point)
        self.assertLess(error, 1e-5)

    def test_wrong_gradient_detected(self):
        point = np.array([1.0, 2.0])
        self.assertGreater(finite_diff_check(lambda x: x @ x, np.zeros(2), point), 1.0)


if __name__ == '__main__':
    unittest.main()
