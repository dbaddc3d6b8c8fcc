"""Lifted (semidefinite) view of the downlink beamformers.

A beamformer ``w_k`` is replaced by ``Q_k = w_k w_kᴴ``; every rate term of the
network becomes affine in ``(Q, P)`` once the uplink receivers are fixed.
:class:`LiftedModel` evaluates those terms on numpy matrices or cvxpy
variables alike.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
import scipy.linalg

from ..scenario import ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign
from ..utils import block_slice, is_expression, real_part

logger = logging.getLogger(__name__)


class SelectionMatrix:
    """Block-diagonal mask ``T_l`` that keeps the antenna block of T-RAU ``l``.

    Examples:
        >>> SelectionMatrix(1, 2, 3).matrix.diagonal()
        array([0., 0., 1., 1., 0., 0.])
    """

    def __init__(self, index: int, n_antennas: int, n_trau: int):
        if not 0 <= index < n_trau:
            raise ValueError(f'T-RAU index {index} out of range')
        self.index = index
        self.n_antennas = n_antennas
        self.n_trau = n_trau

    @property
    def rows(self) -> slice:
        return block_slice(self.index, self.n_antennas)

    @property
    def matrix(self) -> np.ndarray:
        diagonal = np.zeros(self.n_antennas * self.n_trau)
        diagonal[self.rows] = 1.0
        return np.diag(diagonal)

    def trace(self, q):
        """``Re Tr(Q T_l)``, the power that ``Q`` places on this T-RAU."""
        block = q[self.rows, self.rows]
        if is_expression(block):
            return cp.real(cp.trace(block))
        return float(np.real(np.trace(block)))


@dataclass
class LiftedDesign:
    """Lifted transmit variables plus the backhaul/rate auxiliaries.

    Attributes:
        q: One Hermitian PSD matrix of size M*L per DU
        p: Uplink powers, length J
        rho: Rate upper bounds of the DUs
        rho_hat: Per-link backhaul loads, shape (L, K)
        mu: Inverse-interference auxiliaries of the DUs, relative to the
            interference at this point (1 when tight)
        phi: Arithmetic-geometric bound parameters of the DUs, for the signal
            measured in units of that interference
    """
    q: List[np.ndarray]
    p: np.ndarray
    rho: Optional[np.ndarray] = None
    rho_hat: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None

    def link_powers(self, n_antennas: int, n_trau: int) -> np.ndarray:
        """``Tr(Q_k T_l)`` for every (T-RAU, DU), shape (L, K)."""
        powers = np.zeros((n_trau, len(self.q)))
        for k, q in enumerate(self.q):
            for l in range(n_trau):
                rows = block_slice(l, n_antennas)
                powers[l, k] = float(np.real(np.trace(q[rows, rows])))
        return powers


def lift(tx: TransmitDesign) -> LiftedDesign:
    """``Q_k = w_k w_kᴴ`` for every DU; auxiliaries are left unset."""
    q = [np.outer(tx.w[:, k], tx.w[:, k].conj()) for k in range(tx.w.shape[1])]
    return LiftedDesign(q=q, p=np.array(tx.p, dtype=float))


def lifted_variables(allowed: np.ndarray, n_antennas: int) -> Tuple[list, List[cp.Constraint]]:
    """Hermitian PSD variables ``Q_k = E_k V_k E_kᵀ`` supported on the allowed antenna blocks.

    Blocks of disallowed (T-RAU, DU) pairs are structural zeros, not
    ``Tr(Q_k T_l) = 0`` rows. A DU without any allowed block gets a constant
    zero matrix.

    Args:
        allowed: (L, K) mask of the links each ``Q_k`` may use
        n_antennas: Antennas per T-RAU

    Returns:
        The K matrices (cvxpy expressions or numpy zeros) and their PSD constraints
    """
    allowed = np.asarray(allowed, dtype=bool)
    L, K = allowed.shape
    N = n_antennas * L
    q, cones = [], []
    for k in range(K):
        blocks = np.flatnonzero(allowed[:, k])
        if blocks.size == 0:
            q.append(np.zeros((N, N), dtype=complex))
            continue
        rows = np.concatenate([np.arange(l * n_antennas, (l + 1) * n_antennas) for l in blocks])
        embed = np.zeros((N, rows.size))
        embed[rows, np.arange(rows.size)] = 1.0
        v = cp.Variable((rows.size, rows.size), hermitian=True, name=f'V{k}')
        cones.append(v >> 0)
        q.append(embed @ v @ embed.T)
    return q, cones


def extract_rank1(q: np.ndarray) -> Tuple[np.ndarray, float]:
    """Principal-eigenvector beamformer ``√λ1·v1`` of ``Q`` and the gap ``λ2/λ1``.

    The gap is 0 for a rank-one (or zero) matrix.
    """
    q = np.asarray(q)
    values, vectors = scipy.linalg.eigh(0.5 * (q + q.conj().T))
    largest = values[-1]
    if largest <= 0:
        return np.zeros(q.shape[0], dtype=complex), 0.0
    w = np.sqrt(largest) * vectors[:, -1].astype(complex)
    gap = float(np.clip(values[-2] / largest, 0.0, 1.0)) if values.size > 1 else 0.0
    return w, gap


class LiftedModel:
    """Rate terms of the network for fixed uplink receivers.

    With ``rx`` fixed, the useful and interference-plus-noise powers of every
    user are affine in ``(Q, P)``; the methods below return numbers for numpy
    inputs and cvxpy expressions for variable inputs.

    Args:
        ch: Channel realization
        rx: Fixed uplink receivers
        config: Scenario (noise powers are read from it)
    """

    def __init__(self, ch: ChannelRealization, rx: ReceiveDesign, config: ScenarioConfig):
        self.ch = ch
        self.config = config
        self.rx = rx
        self.n_antennas = ch.n_antennas
        self.n_trau = ch.n_trau
        self.n_du = ch.n_du
        self.n_uu = ch.n_uu
        self.selections = [SelectionMatrix(l, ch.n_antennas, ch.n_trau) for l in range(ch.n_trau)]
        self.h = [ch.h_d[:, k] for k in range(ch.n_du)]
        self.iui = np.abs(ch.h_iui) ** 2

        J = ch.n_uu
        self.gain = np.zeros((J, J))
        self.iri = np.zeros((J, ch.n_trau))
        self.noise_u = np.zeros(J)
        for j in range(J):
            z = ch.serving[j]
            u = rx.u[:, j]
            norm = float(np.real(np.vdot(u, u)))
            self.gain[j] = np.abs(u.conj() @ ch.h_u[:, :, z]) ** 2
            self.iri[j] = ch.iri_var[:, z] * norm
            self.noise_u[j] = config.rrau_noise[z] * norm

    def trace_block(self, q, l: int):
        return self.selections[l].trace(q)

    def quad(self, q, k: int):
        """``Re(h_kᴴ Q h_k)``."""
        h = self.h[k]
        return real_part(h.conj() @ q @ h)

    def dl_signal(self, q: Sequence, k: int):
        return self.quad(q[k], k)

    def dl_interference(self, q: Sequence, p, k: int):
        total = self.config.du_noise[k]
        for other in range(self.n_du):
            if other != k:
                total = total + self.quad(q[other], k)
        for j in range(self.n_uu):
            total = total + p[j] * self.iui[j, k]
        return total

    def ul_signal(self, p, j: int):
        return p[j] * self.gain[j, j]

    def ul_interference(self, q: Sequence, p, j: int):
        total = self.noise_u[j]
        for other in range(self.n_uu):
            if other != j:
                total = total + p[other] * self.gain[j, other]
        for l in range(self.n_trau):
            if self.iri[j, l] > 0:
                load = sum(self.trace_block(q[k], l) for k in range(self.n_du))
                total = total + self.iri[j, l] * load
        return total

    def link_powers(self, q: Sequence) -> np.ndarray:
        return np.array([[self.trace_block(q[k], l) for k in range(self.n_du)]
                         for l in range(self.n_trau)]).reshape(self.n_trau, self.n_du)

    def terms(self, q: Sequence, p) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Numeric (signal, interference) pairs for all DUs and UUs."""
        dl_s = np.array([self.dl_signal(q, k) for k in range(self.n_du)], dtype=float)
        dl_i = np.array([self.dl_interference(q, p, k) for k in range(self.n_du)], dtype=float)
        ul_s = np.array([self.ul_signal(p, j) for j in range(self.n_uu)], dtype=float)
        ul_i = np.array([self.ul_interference(q, p, j) for j in range(self.n_uu)], dtype=float)
        return dl_s, dl_i, ul_s, ul_i

    def rates(self, q: Sequence, p) -> Tuple[np.ndarray, np.ndarray]:
        """Exact lifted downlink and uplink rates in bps/Hz."""
        dl_s, dl_i, ul_s, ul_i = self.terms(q, p)

        def rate(signal, interference):
            sinr = np.divide(signal, interference, out=np.zeros_like(signal), where=interference > 0)
            return np.log2(1.0 + np.maximum(sinr, 0.0))

        return rate(dl_s, dl_i), rate(ul_s, ul_i)

    def sum_rate(self, q: Sequence, p) -> float:
        dl, ul = self.rates(q, p)
        return float(np.sum(dl) + np.sum(ul))
