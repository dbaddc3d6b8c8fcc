"""First-order surrogates used to convexify the sum-rate problem.

Each operator accepts numpy values or cvxpy expressions for its free
arguments; expansion points are always numbers. Majorants (upper bounds) are
used on the ``<=`` side of a constraint and minorants on the ``>=`` side, so
every surrogate constraint describes a subset of the original feasible set
that touches it at the expansion point.
"""
from __future__ import annotations

import logging
import math

import cvxpy as cp
import numpy as np

from ..utils import abs_squared, is_expression, real_part

logger = logging.getLogger(__name__)

# Floor applied to expansion points that appear in a denominator or a logarithm.
EXPANSION_FLOOR = 1e-9

LN2 = math.log(2.0)

# Past this value of θx the link indicator is 1 to within e^-30; tangents there are replaced
# by the constant global bound.
SATURATION = 30.0


def _inner(a_n: np.ndarray, w):
    """``Re(a_nᴴ w)`` for a numpy vector ``a_n``."""
    return real_part(np.conj(np.asarray(a_n)).reshape(-1) @ w)


def taylor_G(w, chi, w_n, chi_n: float, A: np.ndarray, a: float = 1.0):
    """Tangent minorant of ``g(w, χ) = wᴴAw / (χ - a)`` at ``(w_n, χ_n)``.

    ``g`` is jointly convex for PSD ``A`` and ``χ > a``, so the tangent plane
    ``G`` satisfies ``G <= g`` everywhere with equality at the expansion point.

    Raises:
        ValueError: If ``χ_n <= a``
    """
    if chi_n <= a:
        raise ValueError(f'expansion point chi_n={chi_n} must exceed a={a}')
    w_n = np.asarray(w_n)
    d = max(chi_n - a, EXPANSION_FLOOR)
    a_w = np.asarray(A) @ w_n
    s_n = float(np.real(np.vdot(w_n, a_w)))
    return 2.0 * _inner(a_w, w) / d - s_n * (chi - a) / d ** 2


def taylor_S(w, w_n, A: np.ndarray):
    """Tangent minorant of ``s(w) = wᴴAw`` at ``w_n`` (``S <= s`` for PSD ``A``)."""
    w_n = np.asarray(w_n)
    a_w = np.asarray(A) @ w_n
    s_n = float(np.real(np.vdot(w_n, a_w)))
    return 2.0 * _inner(a_w, w) - s_n


def taylor_V(x, x_n: float, theta: float):
    """Tangent majorant of the concave link indicator ``1 - exp(-θx)`` at ``x_n``.

    A saturated link (``θx_n`` beyond :data:`SATURATION`) gets the constant 1.
    """
    if theta <= 0:
        raise ValueError('theta must be positive')
    x_n = max(float(x_n), 0.0)
    if theta * x_n > SATURATION:
        return 1.0
    return -math.expm1(-theta * x_n) + theta * math.exp(-theta * x_n) * (x - x_n)


def lemma1_approx(a, b, c: float, d_sq, a_n: float, b_n: float):
    """Convex inner approximation of ``a·c·||d||² <= b²`` (``a > 0``).

    Returns the left-hand side of ``a_n²·c·||d||² - 2·b·a_n·b_n + b_n²·a <= 0``,
    obtained by linearizing ``b²/a`` at ``(a_n, b_n)``, divided by
    ``a_n·b_n²`` when that is positive so every term is of order one at the
    expansion point. ``d_sq`` is the (convex) value of ``||d||²``.

    Raises:
        ValueError: If ``a_n <= 0``
    """
    if a_n <= 0:
        raise ValueError(f'expansion point a_n={a_n} must be positive')
    a_n, b_n = float(a_n), float(b_n)
    scale = a_n * b_n ** 2 if b_n != 0 else 1.0
    return (a_n ** 2 * c * d_sq - 2.0 * a_n * b_n * b + b_n ** 2 * a) / scale


def qol_bound(mu, q, phi: float):
    """Arithmetic-geometric bound ``T = μ²/(2φ) + φq²/2 >= μ·q``, tight at ``φ = μ/q``.

    Raises:
        ValueError: If ``φ <= 0``

    Examples:
        >>> qol_bound(2.0, 1.0, 2.0)
        2.0
    """
    if phi <= 0:
        raise ValueError('phi must be positive')
    if is_expression(mu) or is_expression(q):
        return cp.square(mu) / (2.0 * phi) + phi * cp.square(q) / 2.0
    return mu ** 2 / (2.0 * phi) + phi * q ** 2 / 2.0


def rate_tangent(rho, rho_n: float):
    """Tangent minorant of the convex map ``2^ρ - 1`` at ``ρ_n``."""
    return 2.0 ** rho_n * (1.0 + LN2 * (rho - rho_n)) - 1.0


def log_tangent(x, x_n: float):
    """Tangent majorant of ``log(x)`` at ``x_n`` (floored at the expansion floor)."""
    x_n = max(float(x_n), EXPANSION_FLOOR)
    return math.log(x_n) + (x - x_n) / x_n


def log_indicator_tangent(x, x_n: float, theta: float):
    """Tangent majorant of ``log(1 - exp(-θx))`` at ``x_n``.

    The map is concave, so the tangent bounds it from above; ``x_n`` is
    floored because the logarithm diverges at zero. A saturated link gets the
    constant 0, the global bound of the logarithm.
    """
    x_n = max(float(x_n), EXPANSION_FLOOR)
    if theta * x_n > SATURATION:
        return 0.0
    value = -math.expm1(-theta * x_n)
    slope = theta * math.exp(-theta * x_n) / value
    return math.log(value) + slope * (x - x_n)


def quadratic(w, A: np.ndarray):
    """``wᴴAw`` for a numpy vector or a cvxpy expression and a PSD numpy ``A``."""
    if is_expression(w):
        values, vectors = np.linalg.eigh(np.asarray(A))
        factor = np.sqrt(np.clip(values, 0.0, None))[:, None] * vectors.conj().T
        return abs_squared(factor @ w)
    w = np.asarray(w)
    return float(np.real(np.vdot(w, np.asarray(A) @ w)))


def g_value(w, chi: float, A: np.ndarray, a: float = 1.0) -> float:
    """Exact ``wᴴAw / (χ - a)`` on numbers."""
    return quadratic(w, A) / (chi - a)

