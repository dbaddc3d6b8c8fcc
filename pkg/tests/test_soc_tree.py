import logging
import unittest

import cvxpy as cp
import numpy as np

from pynafd.kernel import ConvexProgram, solve
from pynafd.solvers.soc_tree import SocTree, build_soc_tree

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


def best_root(values):
    """Solve max root over the tree with the leaves pinned to ``values``."""
    tree = SocTree(len(values))
    chi = cp.Variable(len(values))
    root, constraints = tree.build(chi)
    report = solve(ConvexProgram('tree', root, constraints + [chi == np.asarray(values)], {'chi': chi}))
    return tree, report


class TestSocTree(unittest.TestCase):
    def test_shape(self):
        for leaves, depth, pads in [(1, 0, 0), (2, 1, 0), (3, 2, 1), (4, 2, 0), (5, 3, 3), (10, 4, 6)]:
            tree = SocTree(leaves)
            self.assertEqual((tree.depth, tree.n_pads), (depth, pads))
            self.assertEqual(tree.n_rows, tree.width - 1)
        self.assertEqual(build_soc_tree(3, 3).n_leaves, 6)
        with self.assertRaises(ValueError):
            SocTree(0)

    def test_product_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            values = rng.uniform(1.0, 6.0, size=rng.integers(2, 6))
            tree, report = best_root(values)
            self.assertTrue(report.usable)
            expected = float(np.prod(values) ** (1.0 / tree.width))
            self.assertAlmostEqual(report.objective, expected, delta=1e-6 * max(1.0, expected))
            self.assertAlmostEqual(tree.root_bound(values), expected, places=12)

    def test_single_leaf(self):
        tree, report = best_root([2.5])
        self.assertAlmostEqual(report.objective, 2.5, places=6)

    def test_root_identity(self):
        # any feasible root raised to 2^N stays below the product
        tree = SocTree(3)
        chi = cp.Variable(3)
        root, constraints = tree.build(chi)
        values = np.array([1.5, 2.0, 3.0])
        report = solve(ConvexProgram('tree', root, constraints + [chi == values, root <= 1.4], {'chi': chi}))
        self.assertLessEqual(report.objective ** tree.width, np.prod(values) + 1e-9)

    def test_root_bound_shape(self):
        with self.assertRaises(ValueError):
            SocTree(3).root_bound([1.0, 2.0])


if __name__ == '__main__':
    unittest.main()
