"""Small helpers shared by the numeric (numpy) and modelling (cvxpy) code paths.

Most formulas in pynafd are written once and evaluated either on numpy arrays
or on cvxpy expressions; the dispatch helpers below pick the right primitive.
"""
from __future__ import annotations

import functools
from typing import Any, List, Sequence

import cvxpy as cp
import numpy as np


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watts(value_dbm):
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(value_w):
    return 10.0 * np.log10(np.asarray(value_w, dtype=float)) + 30.0


def is_expression(value: Any) -> bool:
    return isinstance(value, cp.Expression)


def real_part(value):
    """Real part of a numpy value or a cvxpy expression."""
    if is_expression(value):
        return cp.real(value)
    return np.real(value)


def trace(value):
    if is_expression(value):
        return cp.trace(value)
    return np.trace(value)


def real_stack(value):
    """Real vector ``[Re x; Im x]`` of a cvxpy expression; real expressions are flattened only.

    Norm-like atoms need a real argument: cvxpy cannot split a complex
    scalar inside ``quad_over_lin`` by itself.
    """
    if not value.is_complex():
        return cp.vec(value)
    return cp.hstack([cp.vec(cp.real(value)), cp.vec(cp.imag(value))])


def abs_squared(value):
    """Squared magnitude (summed over entries) of a numpy value or cvxpy expression."""
    if is_expression(value):
        return cp.sum_squares(real_stack(value))
    return float(np.sum(np.abs(value) ** 2))


def square(value):
    if is_expression(value):
        return cp.square(value)
    return np.square(value)


def quad_over_lin(value, denominator):
    """``||value||² / denominator`` for numbers or cvxpy expressions (complex allowed)."""
    if is_expression(value):
        return cp.quad_over_lin(real_stack(value), denominator)
    if is_expression(denominator):
        flat = np.asarray(value).reshape(-1)
        return cp.quad_over_lin(np.concatenate([flat.real, flat.imag]), denominator)
    return float(np.sum(np.abs(value) ** 2)) / denominator


def frozen(array, dtype=None) -> np.ndarray:
    """Return a read-only copy of ``array``."""
    result = np.array(array, dtype=dtype, copy=True)
    result.setflags(write=False)
    return result


@functools.lru_cache(maxsize=256)
def block_slice(index: int, block_size: int) -> slice:
    """Rows of antenna block ``index`` in a stacked (M*L) vector."""
    return slice(index * block_size, (index + 1) * block_size)


def to_pairs(array) -> List:
    """Serialize a complex array as nested lists of ``[re, im]`` pairs.

    Examples:
        >>> to_pairs(np.array([1 + 2j, 3j]))
        [[1.0, 2.0], [0.0, 3.0]]
    """
    array = np.asarray(array, dtype=complex)
    if array.ndim == 0:
        return [float(array.real), float(array.imag)]
    return [to_pairs(item) for item in array]


def from_pairs(pairs: Sequence) -> np.ndarray:
    """Inverse of :func:`to_pairs`."""
    array = np.asarray(pairs, dtype=float)
    if array.size == 0:
        return np.zeros(array.shape, dtype=complex)
    return array[..., 0] + 1j * array[..., 1]
