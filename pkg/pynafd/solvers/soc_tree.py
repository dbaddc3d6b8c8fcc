"""Second-order-cone encoding of a geometric mean.

Maximizing a product of ``K + J`` factors ``χ_x >= 1`` is replaced by
maximizing the root of a binary tree of hyperbolic constraints
``ϑ² <= left·right``; each one is a rotated second-order cone
``||(2ϑ, left - right)|| <= left + right``. Leaves beyond ``K + J`` are
padded with the constant 1, so with fixed leaves the best root is
``(∏χ)^(1/2^N)`` with ``N = ceil(log2(K + J))``.
"""
from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np

logger = logging.getLogger(__name__)


def _stack(first, second) -> cp.Expression:
    return cp.hstack([cp.reshape(first, (1,), order='F'), cp.reshape(second, (1,), order='F')])


class SocTree:
    """Geometric-mean tree over ``n_leaves`` factors.

    Leaves are ordered downlink users first, then uplink users, then pads.

    Examples:
        >>> SocTree(3).depth, SocTree(3).n_rows
        (2, 3)
    """

    def __init__(self, n_leaves: int):
        if n_leaves < 1:
            raise ValueError('the tree needs at least one leaf')
        self.n_leaves = int(n_leaves)
        self.depth = math.ceil(math.log2(self.n_leaves)) if self.n_leaves > 1 else 0

    @property
    def width(self) -> int:
        """Number of leaves after padding, ``2^N``."""
        return 2 ** self.depth

    @property
    def n_pads(self) -> int:
        return self.width - self.n_leaves

    @property
    def n_rows(self) -> int:
        """``2^(N-1)`` leaf rows plus ``2^(N-1) - 1`` internal rows."""
        return self.width - 1

    def build(self, chi: Union[cp.Expression, Sequence]) -> Tuple[cp.Expression, List[cp.Constraint]]:
        """Constraints tying a root variable to the leaves ``chi``.

        Args:
            chi: Leaf expressions, length ``n_leaves`` (a cvxpy vector or a
                sequence of scalar expressions)

        Returns:
            The root expression and the SOC rows. For a single leaf the root is
            a fresh variable bounded by the leaf.
        """
        leaves = [chi[index] for index in range(self.n_leaves)]
        leaves += [cp.Constant(1.0)] * self.n_pads
        if self.depth == 0:
            root = cp.Variable(name='theta_root')
            return root, [root <= leaves[0]]

        constraints: List[cp.Constraint] = []
        level = leaves
        for t in range(self.depth - 1, -1, -1):
            parents = cp.Variable(2 ** t, name=f'theta_{t}', nonneg=True)
            for i in range(2 ** t):
                left, right = level[2 * i], level[2 * i + 1]
                constraints.append(cp.SOC(left + right, _stack(2.0 * parents[i], left - right)))
            level = [parents[i] for i in range(2 ** t)]
        return level[0], constraints

    def root_bound(self, chi: Sequence[float]) -> float:
        """Largest feasible root for fixed leaves, ``(∏χ)^(1/2^N)``."""
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (self.n_leaves,):
            raise ValueError(f'expected {self.n_leaves} leaves, got shape {chi.shape}')
        return float(np.exp(np.sum(np.log(chi)) / self.width))


def build_soc_tree(n_du: int, n_uu: int) -> SocTree:
    """Tree over the ``K`` downlink and ``J`` uplink factors."""
    return SocTree(n_du + n_uu)
