"""Semidefinite relaxation with block-coordinate receiver updates.

The downlink beamformers are lifted to ``Q_k = w_k w_kᴴ``. With the uplink
receivers fixed, every rate is a difference of two concave functions of
``(Q, P)``: ``f = Σ log2(signal + interference)`` and
``h = Σ log2(interference)``. Each outer iteration maximizes ``f`` minus the
tangent plane of ``h``, then recomputes the MMSE receivers for the new powers.
The backhaul constraint is handled with auxiliary rate and load variables
whose surrogates are tight at the current point.

A rank-one design is recovered at the end from the principal eigenvectors
or, when the relaxation is far from rank one, by Gaussian randomization.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
import scipy.linalg

from ..errors import InfeasibleError
from ..kernel import ConvexProgram, SolveReport, psd_floor
from ..scenario import (ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign, check_feasibility,
                        mmse_receivers, smoothed_indicator, sum_rate)
from ..utils import block_slice, is_expression, real_part, trace
from .base import AssociationMap, SolveContext, SolverOptions, SolveTrace, TwoStageSolver
from .lifted import LiftedDesign, LiftedModel, extract_rank1, lift, lifted_variables
from .start import backhaul_slack, backoff_downlink, feasible_start, largest_scale, unit_receivers
from .surrogates import (EXPANSION_FLOOR, LN2, log_indicator_tangent, log_tangent, qol_bound,
                         rate_tangent)

logger = logging.getLogger(__name__)

# Stage-1 links whose power drops below this are pinned to zero.
LINK_FLOOR = 1e-6
# Smallest downlink SINR used to set the arithmetic-geometric bound.
SINR_FLOOR = 1e-3


@dataclass
class SdrState:
    """Current lifted point, the receivers it was linearized with and the frozen links."""
    design: LiftedDesign
    rx: ReceiveDesign
    frozen: np.ndarray


def eval_f(q: Sequence[np.ndarray], p: np.ndarray, model: LiftedModel) -> float:
    """``Σ log2(signal + interference)`` over all users."""
    dl_s, dl_i, ul_s, ul_i = model.terms(q, p)
    return float(np.sum(np.log2(dl_s + dl_i)) + np.sum(np.log2(ul_s + ul_i)))


def eval_h(q: Sequence[np.ndarray], p: np.ndarray, model: LiftedModel) -> float:
    """``Σ log2(interference)`` over all users."""
    _, dl_i, _, ul_i = model.terms(q, p)
    return float(np.sum(np.log2(dl_i)) + np.sum(np.log2(ul_i)))


@dataclass
class AffineMajorant:
    """Tangent plane of ``h`` at ``(q_n, p_n)``.

    The gradient convention is ``dh = Re Σ conj(G)·dQ + grad_pᵀ dP``; for
    Hermitian ``G`` this is ``Re Tr(G dQ)``.
    """
    h0: float
    grad_q: List[np.ndarray]
    grad_p: np.ndarray
    q_n: List[np.ndarray]
    p_n: np.ndarray

    def value(self, q: Sequence, p):
        total = self.h0
        for k, gradient in enumerate(self.grad_q):
            total = total + real_part(trace(gradient @ (q[k] - self.q_n[k])))
        if self.p_n.size:
            total = total + self.grad_p @ (p - self.p_n)
        return total


def linearize_h(q_n: Sequence[np.ndarray], p_n: np.ndarray, model: LiftedModel) -> AffineMajorant:
    """Gradient of ``h`` at ``(q_n, p_n)`` for fixed receivers.

    Examples:
        >>> from pynafd.scenario import ScenarioConfig, generate_channels, whiten
        >>> config = ScenarioConfig.desk(n_trau=1, n_rrau=1, n_du=1, n_uu=1)
        >>> ch, config = whiten(generate_channels(config, 0), config)
        >>> model = LiftedModel(ch, ReceiveDesign(ch.serving_channel(0), ch.serving), config)
        >>> majorant = linearize_h([np.eye(2)], np.array([0.1]), model)
        >>> bool(np.isclose(majorant.h0, eval_h([np.eye(2)], np.array([0.1]), model)))
        True
    """
    M, L, K, J = model.n_antennas, model.n_trau, model.n_du, model.n_uu
    _, dl_i, _, ul_i = model.terms(q_n, p_n)
    weight_d = 1.0 / (LN2 * dl_i)
    weight_u = 1.0 / (LN2 * ul_i)

    iri_diagonal = np.repeat(weight_u @ model.iri, M) if J else np.zeros(M * L)
    outer = [np.outer(h, h.conj()) for h in model.h]
    grad_q = []
    for k in range(K):
        gradient = np.diag(iri_diagonal).astype(complex)
        for other in range(K):
            if other != k:
                gradient = gradient + weight_d[other] * outer[other]
        grad_q.append(gradient)

    grad_p = np.zeros(J)
    for j in range(J):
        grad_p[j] = float(weight_d @ model.iui[j]) if K else 0.0
        for other in range(J):
            if other != j:
                grad_p[j] += weight_u[other] * model.gain[other, j]
    h0 = float(np.sum(np.log2(dl_i)) + np.sum(np.log2(ul_i)))
    return AffineMajorant(h0, grad_q, grad_p, [np.array(v) for v in q_n], np.array(p_n, dtype=float))


def tighten(q: Sequence[np.ndarray], p: np.ndarray, model: LiftedModel, theta: float) -> LiftedDesign:
    """Set the auxiliaries so that every backhaul surrogate is tight at ``(q, p)``.

    ``μ`` is kept relative to the interference at the point, so it is 1 here.
    ``ρ`` is the exact rate unless the SINR is negligible, where the
    arithmetic-geometric bound at the floored parameter is larger.
    """
    dl_s, dl_i, _, _ = model.terms(q, p)
    sinr = dl_s / np.maximum(dl_i, EXPANSION_FLOOR)
    mu = np.ones_like(sinr)
    phi = 1.0 / np.maximum(sinr, SINR_FLOOR)
    bound = mu ** 2 / (2.0 * phi) + phi * sinr ** 2 / 2.0
    rho = np.maximum(np.maximum(np.log2(1.0 + sinr), np.log2(1.0 + bound)), EXPANSION_FLOOR)
    link = model.link_powers(q)
    rho_hat = rho[None, :] * smoothed_indicator(np.maximum(link, EXPANSION_FLOOR), theta)
    return LiftedDesign(q=list(q), p=np.asarray(p, dtype=float), rho=rho, rho_hat=rho_hat, mu=mu, phi=phi)


def weak_links(link: np.ndarray, allowed: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """Allowed links carrying less than :data:`LINK_FLOOR`.

    The strongest link of a QoS-constrained DU is never reported, so such a
    DU always keeps one link.
    """
    weak = allowed & (link < LINK_FLOOR)
    for k in np.flatnonzero(config.du_rate_min > 0):
        if allowed[:, k].any() and not (allowed[:, k] & ~weak[:, k]).any():
            weak[int(np.argmax(np.where(allowed[:, k], link[:, k], -np.inf))), k] = False
    return weak


def _mask_blocks(q: Sequence[np.ndarray], keep: np.ndarray, n_antennas: int) -> List[np.ndarray]:
    """Zero the rows and columns of block ``l`` in ``Q_k`` wherever ``keep[l, k]`` is false."""
    masked = [np.array(v, dtype=complex) for v in q]
    for l, k in zip(*np.nonzero(~keep)):
        rows = block_slice(int(l), n_antennas)
        masked[k][rows, :] = 0.0
        masked[k][:, rows] = 0.0
    return masked


def _log(value, scale: float):
    """``ln(value)`` evaluated as ``ln(value/scale) + ln(scale)``."""
    scale = max(float(scale), EXPANSION_FLOOR)
    if is_expression(value):
        return cp.log(value / scale) + math.log(scale)
    return math.log(max(float(value), EXPANSION_FLOOR))


def _subproblem(state: SdrState, ch: ChannelRealization, config: ScenarioConfig, links: np.ndarray,
                stage: int) -> ConvexProgram:
    model = LiftedModel(ch, state.rx, config)
    design = state.design
    M, L, K, J = config.n_antennas, config.n_trau, config.n_du, config.n_uu
    allowed = links & ~state.frozen if stage == 1 else links
    dl_s_n, dl_i_n, ul_s_n, ul_i_n = model.terms(design.q, design.p)
    dl_i_n = np.maximum(dl_i_n, EXPANSION_FLOOR)
    ul_i_n = np.maximum(ul_i_n, EXPANSION_FLOOR)

    # disallowed blocks are structural zeros
    q, constraints = lifted_variables(allowed, M)
    p = cp.Variable(J, name='p') if J else np.zeros(0)
    for l in range(L):
        if allowed[l].any():
            constraints.append(sum(model.trace_block(q[k], l) for k in range(K)) <= config.trau_power[l])
    if J:
        constraints += [p >= 0, p <= config.uu_power]

    dl_s = [model.dl_signal(q, k) for k in range(K)]
    dl_i = [model.dl_interference(q, p, k) for k in range(K)]
    ul_s = [model.ul_signal(p, j) for j in range(J)]
    ul_i = [model.ul_interference(q, p, j) for j in range(J)]
    # QoS rows in units of the interference at the point
    for k in np.flatnonzero(config.du_rate_min > 0):
        constraints.append(dl_s[k] / dl_i_n[k] >= (2.0 ** config.du_rate_min[k] - 1.0) * dl_i[k] / dl_i_n[k])
    for j in np.flatnonzero(config.uu_rate_min > 0):
        constraints.append(ul_s[j] / ul_i_n[j] >= (2.0 ** config.uu_rate_min[j] - 1.0) * ul_i[j] / ul_i_n[j])

    skip = backhaul_slack(ch, config)
    chain_raus = [l for l in range(L) if not skip[l] and allowed[l].any()]
    chain_users = sorted({int(k) for l in chain_raus for k in np.flatnonzero(allowed[l])})
    mu = {k: cp.Variable(name=f'mu{k}') for k in chain_users}
    rho = {k: cp.Variable(nonneg=True, name=f'rho{k}') for k in chain_users}
    for k in chain_users:
        scale = 2.0 ** design.rho[k]
        constraints.append(dl_i[k] / dl_i_n[k] >= cp.inv_pos(mu[k]))
        constraints.append(qol_bound(mu[k], dl_s[k] / dl_i_n[k], design.phi[k]) / scale
                           <= rate_tangent(rho[k], design.rho[k]) / scale)

    link = design.link_powers(M, L)
    for l in chain_raus:
        users = np.flatnonzero(allowed[l])
        if stage == 1:
            loads = []
            for k in users:
                load = cp.Variable(nonneg=True, name=f'rho_hat{l}_{k}')
                indicator = log_indicator_tangent(model.trace_block(q[k], l), max(link[l, k], LINK_FLOOR),
                                                  config.theta)
                constraints.append(log_tangent(rho[k], design.rho[k]) + indicator <= cp.log(load))
                loads.append(load)
            constraints.append(sum(loads) <= config.backhaul[l])
        else:
            constraints.append(sum(rho[k] for k in users) <= config.backhaul[l])

    majorant = linearize_h(design.q, design.p, model)
    f = (sum(_log(dl_s[k] + dl_i[k], dl_s_n[k] + dl_i_n[k]) for k in range(K))
         + sum(_log(ul_s[j] + ul_i[j], ul_s_n[j] + ul_i_n[j]) for j in range(J)))
    objective = f / LN2 - majorant.value(q, p)
    variables: Dict[str, Any] = {'q': q}
    if J:
        variables['p'] = p
    return ConvexProgram(f'sdr-bcd stage {stage}', objective, constraints, variables,
                         start_value=model.sum_rate(design.q, design.p))


def build_stage1_subproblem(state: SdrState, ch: ChannelRealization, config: ScenarioConfig,
                            links: Optional[np.ndarray] = None) -> ConvexProgram:
    """Convex program of one stage-1 iteration (smoothed backhaul) around ``state``."""
    if links is None:
        links = np.ones((config.n_trau, config.n_du), dtype=bool)
    return _subproblem(state, ch, config, np.asarray(links, dtype=bool), 1)


def build_stage2_subproblem(state: SdrState, association: AssociationMap, ch: ChannelRealization,
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


class SdrBcdSolver(TwoStageSolver):
    """Lifted difference-of-concave algorithm with MMSE receiver updates.

    Examples:
        >>> from pynafd.scenario import ScenarioConfig, generate_channels
        >>> config = ScenarioConfig.desk()
        >>> tx, rx, trace = SdrBcdSolver(config).run(generate_channels(config, 0))  # doctest: +SKIP
    """
    name = 'sdr-bcd'

    def _state(self, q, p, ctx: SolveContext, frozen: np.ndarray) -> SdrState:
        config = ctx.wconfig
        link = LiftedDesign(q, p).link_powers(config.n_antennas, config.n_trau)
        zero_w = np.zeros((config.n_antennas * config.n_trau, config.n_du), dtype=complex)
        rx = unit_receivers(mmse_receivers(ctx.wch, TransmitDesign(zero_w, p), config, link_power=link,
                                           scaled=False))
        model = LiftedModel(ctx.wch, rx, config)
        return SdrState(tighten(q, p, model, config.theta), rx, frozen)

    def initial_state(self, ctx: SolveContext, links: AssociationMap) -> SdrState:
        tx, _ = feasible_start(ctx.wch, ctx.wconfig, links.links, self.options.kernel)
        design = lift(tx)
        return self._state(design.q, design.p, ctx, np.zeros_like(links.links))

    def build_program(self, state: SdrState, ctx: SolveContext, links: AssociationMap,
                      stage: int) -> ConvexProgram:
        if stage == 1:
            return build_stage1_subproblem(state, ctx.wch, ctx.wconfig, links.links)
        return build_stage2_subproblem(state, links, ctx.wch, ctx.wconfig)

    def advance(self, state: SdrState, report: SolveReport, ctx: SolveContext, links: AssociationMap,
                stage: int) -> SdrState:
        config = ctx.wconfig
        M = config.n_antennas
        q = [psd_floor(0.5 * (v + v.conj().T)) for v in report.value('q')]
        p = np.clip(report.value('p'), 0.0, config.uu_power) if config.n_uu else np.zeros(0)
        allowed = links.links & ~state.frozen if stage == 1 else links.links
        frozen = state.frozen
        if stage == 1:
            weak = weak_links(LiftedDesign(q, p).link_powers(M, config.n_trau), allowed, config)
            if weak.any():
                logger.debug(f'{self.name}: pinning {int(weak.sum())} weak links to zero')
            frozen = frozen | weak
            allowed = allowed & ~weak
        return self._state(_mask_blocks(q, allowed, M), p, ctx, frozen)

    def link_power_of(self, state: SdrState) -> np.ndarray:
        return state.design.link_powers(self.config.n_antennas, self.config.n_trau)

    def state_sum_rate(self, state: SdrState, ctx: SolveContext) -> float:
        return LiftedModel(ctx.wch, state.rx, ctx.wconfig).sum_rate(state.design.q, state.design.p)

    def prune(self, state: SdrState, ctx: SolveContext, links: AssociationMap) -> SdrState:
        """Drop unassociated links, then scale the downlink until the exact backhaul caps hold."""
        config = ctx.wconfig
        q = _mask_blocks(state.design.q, links.links, config.n_antennas)
        p = state.design.p
        model = LiftedModel(ctx.wch, state.rx, config)
        skip = backhaul_slack(ctx.wch, config)
        weights = links.links.astype(float)

        def fits(scale: float) -> bool:
            dl, _ = model.rates([scale * v for v in q], p)
            return bool(np.all(skip | (weights @ dl <= config.backhaul)))

        scale = largest_scale(fits)
        pruned = self._state([scale * v for v in q], p, ctx, np.zeros_like(links.links))
        dl, ul = LiftedModel(ctx.wch, pruned.rx, config).rates(pruned.design.q, p)
        if np.any(dl < config.du_rate_min * (1.0 - 1e-9)) or np.any(ul < config.uu_rate_min * (1.0 - 1e-9)):
            logger.info(f'{self.name}: pruned point misses a QoS floor, restarting stage 2 from a feasible point')
            tx, _ = feasible_start(ctx.wch, config, links.links, self.options.kernel, exact=True)
            design = lift(tx)
            pruned = self._state(design.q, design.p, ctx, np.zeros_like(links.links))
        return pruned

    def _sample(self, q: Sequence[np.ndarray], rng: np.random.Generator, links: np.ndarray,
                config: ScenarioConfig) -> np.ndarray:
        """One Gaussian draw ``w_k ~ CN(0, Q_k)``, scaled per T-RAU into its power cap."""
        M, N = config.n_antennas, config.n_antennas * config.n_trau
        w = np.zeros((N, len(q)), dtype=complex)
        for k, matrix in enumerate(q):
            values, vectors = scipy.linalg.eigh(matrix)
            factor = vectors * np.sqrt(np.clip(values, 0.0, None))
            draw = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2.0)
            w[:, k] = factor @ draw
        w = TransmitDesign(w, np.zeros(0)).with_links(links, M).w
        for l in range(config.n_trau):
            rows = block_slice(l, M)
            power = float(np.sum(np.abs(w[rows]) ** 2))
            if power > config.trau_power[l]:
                w[rows] *= np.sqrt(config.trau_power[l] / power)
        return w

    def finalize(self, state: SdrState, ctx: SolveContext,
                 links: AssociationMap) -> Tuple[TransmitDesign, ReceiveDesign, float]:
        """Rank-one recovery: principal eigenvectors or the best randomized candidate."""
        config = ctx.config
        M, K = config.n_antennas, config.n_du
        p = state.design.p
        w = np.zeros((M * config.n_trau, K), dtype=complex)
        gaps = [0.0]
        for k, matrix in enumerate(state.design.q):
            w[:, k], gap = extract_rank1(matrix)
            gaps.append(gap)
        gap = max(gaps)
        candidates = [TransmitDesign(w, p).with_links(links.links, M)]
        if K and gap > self.options.rank1_gap_threshold:
            logger.info(f'{self.name}: rank-one gap {gap:.3f}, drawing {self.options.randomization_samples} '
                        f'randomized candidates')
            rng = np.random.default_rng(self.options.seed)
            for _ in range(self.options.randomization_samples):
                candidates.append(TransmitDesign(self._sample(state.design.q, rng, links.links, config), p))

        best, best_rate = None, -math.inf
        for tx in candidates:
            rx = mmse_receivers(ctx.ch, tx, config)
            if not check_feasibility(ctx.ch, tx, rx, config).feasible:
                continue
            rate = sum_rate(ctx.ch, tx, rx, config)
            if rate > best_rate:
                best, best_rate = (tx, rx), rate
        if best is None:
            logger.warning(f'{self.name}: no rank-one candidate is feasible, backing off the principal one')
            tx = backoff_downlink(candidates[0], ctx.wch, ctx.wconfig, links.links)
            best = (tx, mmse_receivers(ctx.ch, tx, config))
        return best[0], best[1], gap

    def tightness(self, state: SdrState, ctx: SolveContext, links: AssociationMap, stage: int) -> float:
        model = LiftedModel(ctx.wch, state.rx, ctx.wconfig)
        design = state.design
        mismatch = abs(linearize_h(design.q, design.p, model).value(design.q, design.p)
                       - eval_h(design.q, design.p, model))
        dl_s, dl_i, _, _ = model.terms(design.q, design.p)
        for k in range(ctx.wconfig.n_du):
            bound = qol_bound(design.mu[k], dl_s[k] / dl_i[k], design.phi[k])
            mismatch = max(mismatch, bound - (2.0 ** design.rho[k] - 1.0))
        return float(mismatch)

    def iteration_gap(self, state: SdrState) -> float:
        gaps = [extract_rank1(matrix)[1] for matrix in state.design.q]
        return max(gaps) if gaps else 0.0

    def extras(self, state: SdrState, ctx: SolveContext) -> Dict[str, Any]:
        return {'relaxed_se': self.state_sum_rate(state, ctx)}


def run(ch: ChannelRealization, config: ScenarioConfig,
        options: Optional[SolverOptions] = None) -> Tuple[TransmitDesign, ReceiveDesign, SolveTrace]:
    """Solve one channel realization with :class:`SdrBcdSolver`."""
    return SdrBcdSolver(config, options).run(ch)
