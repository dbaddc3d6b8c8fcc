"""Successive convex approximation over the un-lifted beamformers.

The sum-rate is written as ``log2 Π χ`` with one factor ``χ = 1 + SINR`` per
user; the product is maximized through the root of a second-order-cone tree
(:mod:`.soc_tree`). The SINR definitions become

* ``I_k <= g(w_k, χ_k)`` for the downlink, ``g = |h_kᴴ w_k|² / (χ_k - 1)``;
* ``γ̄_j <= g(u_j, χ_j)`` for the uplink, where ``γ̄_j`` is the receiver's
  interference-plus-noise divided by ``P_j``, assembled from quadratic-over-
  linear terms and auxiliaries bounded through :func:`lemma1_approx`.

``g`` is jointly convex, so it is replaced by its tangent plane; the backhaul
constraint gets rate and load auxiliaries in the same manner. Every surrogate
is tight at the expansion point, which makes the tree root nondecreasing over
the iterations.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np

from ..errors import InfeasibleError
from ..kernel import ConvexProgram, KernelOptions, SolveReport
from ..scenario import (ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign, downlink_terms,
                        smoothed_indicator, sum_rate)
from ..utils import abs_squared, block_slice, quad_over_lin
from .base import AssociationMap, SolveContext, SolverOptions, SolveTrace, TwoStageSolver
from .soc_tree import build_soc_tree
from .start import backhaul_slack, backoff_downlink, feasible_start, qos_violations
from .surrogates import EXPANSION_FLOOR, lemma1_approx, quadratic, rate_tangent, taylor_G, taylor_S, taylor_V

logger = logging.getLogger(__name__)

# A user whose 1 + SINR is this close to 1 keeps its factor fixed at 1.
ACTIVE_TOL = 1e-9


@dataclass
class SpcaState:
    """Primal point and auxiliaries, all tight at the point.

    Attributes:
        w: Downlink beamformers, (M*L, K)
        u: Uplink receivers, (M, J)
        p: Uplink powers, (J,)
        serving: Serving R-RAU of every UU
        chi_d: ``1 + SINR`` of every DU
        chi_u: ``1 + SINR`` of every UU
        mu: Downlink interference-plus-noise
        rho: Downlink rates (floored)
        rho_bar: Square roots of the smoothed per-link backhaul loads, (L, K)
        beta: Square roots of the floored inter-UU interference, (J, J)
        p_tilde: T-RAU transmit powers (floored)
        p_bar: Square roots of the residual IRI seen by every UU, (L, J)
    """
    w: np.ndarray
    u: np.ndarray
    p: np.ndarray
    serving: np.ndarray
    chi_d: np.ndarray
    chi_u: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    beta: np.ndarray
    p_tilde: np.ndarray
    p_bar: np.ndarray

    @classmethod
    def from_design(cls, tx: TransmitDesign, rx: ReceiveDesign, ch: ChannelRealization,
                    config: ScenarioConfig) -> 'SpcaState':
        """Tighten every auxiliary at ``(tx, rx)``."""
        M, L, J = config.n_antennas, config.n_trau, config.n_uu
        signal, interference = downlink_terms(ch, tx, config)
        chi_d = 1.0 + signal / interference
        rho = np.maximum(np.log2(chi_d), EXPANSION_FLOOR)
        link = tx.link_powers(M)
        rho_bar = np.sqrt(rho[None, :] * smoothed_indicator(link, config.theta))
        p_tilde = np.maximum(link.sum(axis=1), EXPANSION_FLOOR)

        p = tx.p
        u = rx.u
        beta = np.zeros((J, J))
        p_bar = np.zeros((L, J))
        chi_u = np.ones(J)
        for j in range(J):
            z = ch.serving[j]
            gains = np.abs(u[:, j].conj() @ ch.h_u[:, :, z]) ** 2
            norm = float(np.sum(np.abs(u[:, j]) ** 2))
            beta[j] = np.sqrt(np.maximum(p, EXPANSION_FLOOR) * gains)
            beta[j, j] = 0.0
            p_bar[:, j] = np.sqrt(p_tilde * ch.iri_var[:, z] * norm)
            if p[j] > EXPANSION_FLOOR and gains[j] > 0:
                scaled = (np.sum(beta[j] ** 2) + config.rrau_noise[z] * norm + np.sum(p_bar[:, j] ** 2)) / p[j]
                chi_u[j] = 1.0 + gains[j] / scaled
        return cls(w=tx.w.copy(), u=u.copy(), p=p.copy(), serving=ch.serving.copy(), chi_d=chi_d, chi_u=chi_u,
                   mu=interference, rho=rho, rho_bar=rho_bar, beta=beta, p_tilde=p_tilde, p_bar=p_bar)

    @property
    def active_d(self) -> np.ndarray:
        return self.chi_d - 1.0 > ACTIVE_TOL

    @property
    def active_u(self) -> np.ndarray:
        return self.chi_u - 1.0 > ACTIVE_TOL

    def transmit(self) -> TransmitDesign:
        return TransmitDesign(self.w, self.p)

    def receive(self) -> ReceiveDesign:
        return ReceiveDesign(self.u, self.serving)

    def gamma_bar(self, j: int, ch: ChannelRealization, config: ScenarioConfig) -> float:
        """Auxiliary interference-plus-noise of UU ``j`` per unit of its power."""
        z = ch.serving[j]
        norm = float(np.sum(np.abs(self.u[:, j]) ** 2))
        total = np.sum(self.beta[j] ** 2) + config.rrau_noise[z] * norm + np.sum(self.p_bar[:, j] ** 2)
        return float(total / self.p[j])


def _beamformers(allowed: np.ndarray, n_antennas: int) -> List[Any]:
    """Beamformer expressions ``E_k v_k`` that are zero on every disallowed block."""
    L, K = allowed.shape
    N = n_antennas * L
    w = []
    for k in range(K):
        rows = np.concatenate([np.arange(l * n_antennas, (l + 1) * n_antennas, dtype=int)
                               for l in np.flatnonzero(allowed[:, k])] or [np.zeros(0, dtype=int)])
        if rows.size == 0:
            w.append(np.zeros(N, dtype=complex))
            continue
        selection = np.zeros((N, rows.size))
        selection[rows, np.arange(rows.size)] = 1.0
        w.append(selection @ cp.Variable(rows.size, complex=True, name=f'v{k}'))
    return w


def _subproblem(state: SpcaState, ch: ChannelRealization, config: ScenarioConfig, links: np.ndarray,
                stage: int) -> ConvexProgram:
    M, L, K, J = config.n_antennas, config.n_trau, config.n_du, config.n_uu
    allowed = np.asarray(links, dtype=bool)
    w = _beamformers(allowed, M)
    u = [cp.Variable(M, complex=True, name=f'u{j}') for j in range(J)]
    p = cp.Variable(J, name='p') if J else np.zeros(0)
    chi = cp.Variable(K + J, name='chi')
    tree = build_soc_tree(K, J)
    root, constraints = tree.build(chi)
    constraints.append(chi >= 1.0)
    if J:
        constraints += [p >= 0, p <= config.uu_power]

    h_d = [ch.h_d[:, k] for k in range(K)]
    outer_d = [np.outer(h, h.conj()) for h in h_d]
    iui = np.abs(ch.h_iui) ** 2

    def uplink_leakage(k: int):
        total = config.du_noise[k]
        for j in range(J):
            total = total + p[j] * iui[j, k]
        return total

    # downlink SINR factors
    active_d = state.active_d
    for k in range(K):
        if not active_d[k]:
            constraints.append(chi[k] == 1.0)
        else:
            interference = uplink_leakage(k)
            for other in range(K):
                if other != k:
                    interference = interference + abs_squared(h_d[k].conj() @ w[other])
            # rows in units of the interference at the point
            scale = max(float(state.mu[k]), EXPANSION_FLOOR)
            constraints.append(interference / scale
                               <= taylor_G(w[k], chi[k], state.w[:, k], state.chi_d[k], outer_d[k]) / scale)
            if config.du_rate_min[k] > 0:
                target = 2.0 ** config.du_rate_min[k] - 1.0
                constraints.append(target * interference / scale <= taylor_S(w[k], state.w[:, k], outer_d[k]) / scale)
        if config.du_rate_min[k] > 0 and not active_d[k]:
            raise InfeasibleError('a QoS-constrained user has no useful signal', [f'DU{k}'])

    # T-RAU powers and their auxiliaries
    p_tilde = {}
    for l in range(L):
        users = np.flatnonzero(allowed[l])
        if users.size == 0:
            continue
        rows = block_slice(l, M)
        p_tilde[l] = cp.Variable(nonneg=True, name=f'p_tilde{l}')
        constraints.append(sum(abs_squared(w[k][rows]) for k in users) <= p_tilde[l])
        constraints.append(p_tilde[l] <= config.trau_power[l])

    # uplink SINR factors
    active_u = state.active_u
    for j in range(J):
        needs_qos = config.uu_rate_min[j] > 0
        if not active_u[j]:
            constraints.append(chi[K + j] == 1.0)
            if needs_qos:
                raise InfeasibleError('a QoS-constrained user has no useful signal', [f'UU{j}'])
            continue
        z = ch.serving[j]
        h_u = ch.h_u[:, :, z]
        terms = [quad_over_lin(np.sqrt(config.rrau_noise[z]) * u[j], p[j])]
        for other in range(J):
            if other == j:
                continue
            beta = cp.Variable(name=f'beta{j}_{other}')
            d_sq = abs_squared(h_u[:, other].conj() @ u[j])
            constraints.append(lemma1_approx(p[other], beta, 1.0, d_sq, max(state.p[other], EXPANSION_FLOOR),
                                             state.beta[j, other]) <= 0)
            terms.append(quad_over_lin(beta, p[j]))
        for l, load in p_tilde.items():
            variance = ch.iri_var[l, z]
            if variance <= 0:
                continue
            p_bar = cp.Variable(name=f'p_bar{l}_{j}')
            constraints.append(lemma1_approx(load, p_bar, variance, abs_squared(u[j]), state.p_tilde[l],
                                             state.p_bar[l, j]) <= 0)
            terms.append(quad_over_lin(p_bar, p[j]))
        gamma_bar = sum(terms)
        scale = max(state.gamma_bar(j, ch, config), EXPANSION_FLOOR)
        serving = np.outer(h_u[:, j], h_u[:, j].conj())
        constraints.append(gamma_bar / scale
                           <= taylor_G(u[j], chi[K + j], state.u[:, j], state.chi_u[j], serving) / scale)
        if needs_qos:
            target = 2.0 ** config.uu_rate_min[j] - 1.0
            constraints.append(target * gamma_bar / scale <= taylor_S(u[j], state.u[:, j], serving) / scale)

    # backhaul
    skip = backhaul_slack(ch, config)
    chain_raus = [l for l in range(L) if not skip[l] and allowed[l].any()]
    chain_users = sorted({int(k) for l in chain_raus for k in np.flatnonzero(allowed[l])})
    mu = {k: cp.Variable(name=f'mu{k}') for k in chain_users}
    rho = {k: cp.Variable(nonneg=True, name=f'rho{k}') for k in chain_users}
    for k in chain_users:
        interference = uplink_leakage(k)
        for other in range(K):
            if other != k:
                interference = interference + taylor_S(w[other], state.w[:, other], outer_d[k])
        # mu is relative to the interference at the point
        i_n = max(float(state.mu[k]), EXPANSION_FLOOR)
        growth = 2.0 ** state.rho[k]
        constraints.append(mu[k] <= interference / i_n)
        constraints.append(quad_over_lin(h_d[k].conj() @ w[k] / math.sqrt(i_n), mu[k]) / growth
                           <= rate_tangent(rho[k], state.rho[k]) / growth)
    link = state.transmit().link_powers(M)
    for l in chain_raus:
        users = np.flatnonzero(allowed[l])
        if stage == 1:
            rows = block_slice(l, M)
            loads = []
            for k in users:
                load = cp.Variable(name=f'rho_bar{l}_{k}')
                indicator = taylor_V(abs_squared(w[k][rows]), link[l, k], config.theta)
                constraints.append(lemma1_approx(rho[k], load, 1.0, indicator, max(state.rho[k], EXPANSION_FLOOR),
                                                 state.rho_bar[l, k]) <= 0)
                loads.append(cp.square(load))
            constraints.append(sum(loads) <= config.backhaul[l])
        else:
            constraints.append(sum(rho[k] for k in users) <= config.backhaul[l])

    variables: Dict[str, Any] = {'w': w, 'u': u}
    if J:
        variables['p'] = p
    return ConvexProgram(f'spca stage {stage}', root, constraints, variables,
                         start_value=tree.root_bound(np.concatenate([state.chi_d, state.chi_u])))


def build_stage1_subproblem(state: SpcaState, ch: ChannelRealization, config: ScenarioConfig,
                            links: Optional[np.ndarray] = None) -> ConvexProgram:
    """Convex program of one stage-1 iteration (smoothed backhaul) around ``state``."""
    if links is None:
        links = np.ones((config.n_trau, config.n_du), dtype=bool)
    return _subproblem(state, ch, config, links, 1)


def build_stage2_subproblem(state: SpcaState, association: AssociationMap, ch: ChannelRealization,
                            config: ScenarioConfig) -> ConvexProgram:
    """Convex program of one stage-2 iteration (exact backhaul over ``association``).

    Raises:
        InfeasibleError: If a QoS-constrained DU has no link left
    """
    lost = [f'DU{k}' for k in range(config.n_du)
            if config.du_rate_min[k] > 0 and not association.links[:, k].any()]
    if lost:
        raise InfeasibleError('association removed every link of a QoS-constrained user', lost)
    return _subproblem(state, ch, config, association.links, 2)


def find_feasible_start(ch: ChannelRealization, config: ScenarioConfig, links: Optional[np.ndarray] = None,
                        options: Optional[KernelOptions] = None, exact: bool = False) -> SpcaState:
    """A tightened state at a design meeting QoS, power and backhaul constraints.

    Raises:
        InfeasibleError: With the violating users when no such design is found
    """
    if links is None:
        links = np.ones((config.n_trau, config.n_du), dtype=bool)
    tx, rx = feasible_start(ch, config, links, options, exact=exact)
    return SpcaState.from_design(tx, rx, ch, config)


class SpcaSolver(TwoStageSolver):
    """Sequential parametric convex approximation on the SOC-tree reformulation.

    Examples:
        >>> from pynafd.scenario import ScenarioConfig, generate_channels
        >>> config = ScenarioConfig.desk()
        >>> tx, rx, trace = SpcaSolver(config).run(generate_channels(config, 0))  # doctest: +SKIP
    """
    name = 'spca'

    def initial_state(self, ctx: SolveContext, links: AssociationMap) -> SpcaState:
        return find_feasible_start(ctx.wch, ctx.wconfig, links.links, self.options.kernel)

    def build_program(self, state: SpcaState, ctx: SolveContext, links: AssociationMap,
                      stage: int) -> ConvexProgram:
        if stage == 1:
            return build_stage1_subproblem(state, ctx.wch, ctx.wconfig, links.links)
        return build_stage2_subproblem(state, links, ctx.wch, ctx.wconfig)

    def advance(self, state: SpcaState, report: SolveReport, ctx: SolveContext, links: AssociationMap,
                stage: int) -> SpcaState:
        config = ctx.wconfig
        N = config.n_antennas * config.n_trau
        w = np.column_stack(report.value('w')) if config.n_du else np.zeros((N, 0), dtype=complex)
        u = np.column_stack(report.value('u')) if config.n_uu else np.zeros((config.n_antennas, 0), dtype=complex)
        p = np.clip(report.value('p'), 0.0, config.uu_power) if config.n_uu else np.zeros(0)
        return SpcaState.from_design(TransmitDesign(w, p), ReceiveDesign(u, state.serving), ctx.wch, config)

    def link_power_of(self, state: SpcaState) -> np.ndarray:
        return state.transmit().link_powers(self.config.n_antennas)

    def state_sum_rate(self, state: SpcaState, ctx: SolveContext) -> float:
        return sum_rate(ctx.wch, state.transmit(), state.receive(), ctx.wconfig)

    def prune(self, state: SpcaState, ctx: SolveContext, links: AssociationMap) -> SpcaState:
        """Drop unassociated links, then scale the downlink until the exact backhaul caps hold."""
        config = ctx.wconfig
        tx = state.transmit().with_links(links.links, config.n_antennas)
        tx = backoff_downlink(tx, ctx.wch, config, links.links)
        rx = state.receive()
        if qos_violations(ctx.wch, tx, rx, config):
            logger.info(f'{self.name}: pruned point misses a QoS floor, restarting stage 2 from a feasible point')
            return find_feasible_start(ctx.wch, config, links.links, self.options.kernel, exact=True)
        return SpcaState.from_design(tx, rx, ctx.wch, config)

    def finalize(self, state: SpcaState, ctx: SolveContext,
                 links: AssociationMap) -> Tuple[TransmitDesign, ReceiveDesign, float]:
        tx = state.transmit().with_links(links.links, self.config.n_antennas)
        return tx, state.receive(), math.nan

    def tightness(self, state: SpcaState, ctx: SolveContext, links: AssociationMap, stage: int) -> float:
        """Largest gap between an auxiliary and the quantity it stands for."""
        ch, config = ctx.wch, ctx.wconfig
        _, interference = downlink_terms(ch, state.transmit(), config)
        mismatch = 0.0
        for k in np.flatnonzero(state.active_d):
            h = ch.h_d[:, k]
            g = quadratic(state.w[:, k], np.outer(h, h.conj())) / (state.chi_d[k] - 1.0)
            mismatch = max(mismatch, abs(g - interference[k]) / interference[k])
        for j in np.flatnonzero(state.active_u):
            h = ch.serving_channel(j)
            g = quadratic(state.u[:, j], np.outer(h, h.conj())) / (state.chi_u[j] - 1.0)
            gamma = state.gamma_bar(j, ch, config)
            mismatch = max(mismatch, abs(g - gamma) / gamma)
        return float(mismatch)


def run(ch: ChannelRealization, config: ScenarioConfig,
        options: Optional[SolverOptions] = None) -> Tuple[TransmitDesign, ReceiveDesign, SolveTrace]:
    """Solve one channel realization with :class:`SpcaSolver`."""
    return SpcaSolver(config, options).run(ch)
