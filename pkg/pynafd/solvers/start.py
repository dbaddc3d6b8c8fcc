"""Feasible starting points for the iterative solvers.

Both algorithms need a first iterate that meets the QoS floors, the power
caps and the backhaul constraint of the stage they start. The search goes:

1. equal-split maximum-ratio beamformers with half of the uplink power cap;
2. if a QoS floor is missed, a lifted phase-1 program that maximizes the
   smallest QoS margin;
3. a common down-scaling of the downlink beamformers until the backhaul
   constraint holds.
"""
from __future__ import annotations

import logging
from typing import Callable, List, Optional, Tuple

import cvxpy as cp
import numpy as np

from ..errors import InfeasibleError, SubproblemError
from ..kernel import ConvexProgram, KernelOptions, solve
from ..scenario import (ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign, downlink_rate_bounds,
                        downlink_rates, downlink_terms, matched_filter, mmse_receivers, smoothed_indicator,
                        uplink_terms)
from ..utils import block_slice, is_expression
from .lifted import LiftedModel, extract_rank1, lifted_variables

logger = logging.getLogger(__name__)

# Relative SINR margin the heuristic point must clear before it is accepted.
QOS_MARGIN = 0.01


def qos_violations(ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign, config: ScenarioConfig,
                   margin: float = 0.0) -> List[str]:
    """Labels (``'DU0'``, ``'UU2'``, ...) of users whose SINR misses ``(2^Rmin - 1)(1 + margin)``."""
    labels = []
    signal, interference = downlink_terms(ch, tx, config)
    target = (2.0 ** config.du_rate_min - 1.0) * (1.0 + margin)
    for k in np.flatnonzero(config.du_rate_min > 0):
        if signal[k] < target[k] * interference[k] * (1.0 - 1e-12):
            labels.append(f'DU{k}')
    signal, interference = uplink_terms(ch, tx, rx, config)
    target = (2.0 ** config.uu_rate_min - 1.0) * (1.0 + margin)
    for j in np.flatnonzero(config.uu_rate_min > 0):
        if signal[j] < target[j] * interference[j] * (1.0 - 1e-12):
            labels.append(f'UU{j}')
    return labels


def heuristic_design(ch: ChannelRealization, config: ScenarioConfig, links: np.ndarray) -> TransmitDesign:
    """Maximum-ratio blocks splitting each T-RAU's power equally over its links, uplink at half power."""
    M = config.n_antennas
    w = np.zeros((M * config.n_trau, config.n_du), dtype=complex)
    for l in range(config.n_trau):
        users = np.flatnonzero(links[l])
        rows = block_slice(l, M)
        for k in users:
            block = ch.h_d[rows, k]
            norm = np.linalg.norm(block)
            if norm > 0:
                w[rows, k] = np.sqrt(config.trau_power[l] / len(users)) * block / norm
    return TransmitDesign(w, config.uu_power / 2.0)


def backhaul_slack(ch: ChannelRealization, config: ScenarioConfig) -> np.ndarray:
    """T-RAUs whose backhaul cap exceeds the total interference-free downlink rate bound.

    The backhaul constraint of these T-RAUs can never bind, so the solvers
    leave it out.
    """
    if config.n_du == 0:
        return np.ones(config.n_trau, dtype=bool)
    return config.backhaul >= np.sum(downlink_rate_bounds(ch, config))


def backhaul_usage(ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig,
                   links: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-T-RAU backhaul load: smoothed indicator when ``links`` is None, else the link mask."""
    rates = downlink_rates(ch, tx, config)
    if links is None:
        weights = smoothed_indicator(tx.link_powers(config.n_antennas), config.theta)
    else:
        weights = np.asarray(links, dtype=float)
    return np.atleast_2d(weights) @ rates if config.n_du else np.zeros(config.n_trau)


def largest_scale(predicate: Callable[[float], bool], tol: float = 1e-6, max_iter: int = 60) -> float:
    """Largest ``s`` in [0, 1] with ``predicate(s)``, assuming the predicate holds on an interval ``[0, s*]``."""
    if predicate(1.0):
        return 1.0
    low, high = 0.0, 1.0
    for _ in range(max_iter):
        if high - low <= tol:
            break
        middle = 0.5 * (low + high)
        if predicate(middle):
            low = middle
        else:
            high = middle
    return low


def backoff_downlink(tx: TransmitDesign, ch: ChannelRealization, config: ScenarioConfig,
                     links: Optional[np.ndarray] = None) -> TransmitDesign:
    """Scale all downlink beamformers by a common factor until the backhaul caps hold.

    Args:
        tx: Design to scale (uplink powers are kept)
        ch: Channel realization
        config: Scenario
        links: Association mask for the exact constraint, or None for the
            smoothed one

    Returns:
        TransmitDesign: The scaled design
    """
    skip = backhaul_slack(ch, config)

    def fits(scale: float) -> bool:
        candidate = TransmitDesign(tx.w * np.sqrt(scale), tx.p)
        usage = backhaul_usage(ch, candidate, config, links)
        return bool(np.all(skip | (usage <= config.backhaul)))

    scale = largest_scale(fits)
    if scale < 1.0:
        logger.warning(f'downlink backed off to {scale:.4f} of its power to meet the backhaul caps')
    return TransmitDesign(tx.w * np.sqrt(scale), tx.p.copy())


def unit_receivers(rx: ReceiveDesign) -> ReceiveDesign:
    """Receivers scaled to unit norm (rates do not depend on the scale)."""
    norms = np.linalg.norm(rx.u, axis=0)
    return ReceiveDesign(rx.u / np.where(norms > 0, norms, 1.0), rx.serving)


def phase_one(ch: ChannelRealization, config: ScenarioConfig, links: np.ndarray,
              options: Optional[KernelOptions] = None) -> TransmitDesign:
    """Lifted program maximizing the smallest QoS margin at matched-filter receivers.

    Raises:
        InfeasibleError: If even the relaxation cannot meet every floor; the
            certificate lists the users whose margin is negative at its optimum
        SubproblemError: If the program cannot be solved
    """
    rx = unit_receivers(matched_filter(ch))
    model = LiftedModel(ch, rx, config)
    N, K, J = config.n_antennas * config.n_trau, config.n_du, config.n_uu
    q, constraints = lifted_variables(links, config.n_antennas)
    p = cp.Variable(J, name='p') if J else np.zeros(0)
    t = cp.Variable(name='t')

    for l in range(config.n_trau):
        if links[l].any():
            constraints.append(sum(model.trace_block(q[k], l) for k in range(K)) <= config.trau_power[l])
    if J:
        constraints += [p >= 0, p <= config.uu_power]

    # margins in units of the receiver noise: interference minus signal over the SINR target
    rows = []
    for k in np.flatnonzero(config.du_rate_min > 0):
        gamma = (2.0 ** config.du_rate_min[k] - 1.0) * (1.0 + QOS_MARGIN)
        noise = config.du_noise[k] if config.du_noise[k] > 0 else 1.0
        rows.append((f'DU{k}', (model.dl_interference(q, p, k) - model.dl_signal(q, k) / gamma) / noise))
    for j in np.flatnonzero(config.uu_rate_min > 0):
        gamma = (2.0 ** config.uu_rate_min[j] - 1.0) * (1.0 + QOS_MARGIN)
        noise = model.noise_u[j] if model.noise_u[j] > 0 else 1.0
        rows.append((f'UU{j}', (model.ul_interference(q, p, j) - model.ul_signal(p, j) / gamma) / noise))
    constraints += [row <= t for _, row in rows]

    report = solve(ConvexProgram('phase-1', -t, constraints, {'q': q, 'p': p} if J else {'q': q}),
                   options)
    if not report.usable:
        raise SubproblemError(report.status, 0, 0)
    if -report.objective > 1e-9:
        violating = [label for label, row in rows if float(np.real(row.value if is_expression(row) else row)) > 1e-9]
        raise InfeasibleError('QoS floors are unattainable', violating)

    w = np.zeros((N, K), dtype=complex)
    for k, value in enumerate(report.value('q')):
        w[:, k], _ = extract_rank1(value)
    for l, k in zip(*np.nonzero(~links)):
        w[block_slice(int(l), config.n_antennas), k] = 0.0
    p_value = np.clip(report.value('p'), 0.0, config.uu_power) if J else np.zeros(0)
    logger.info(f'phase-1 QoS margin {-report.objective:.4g}')
    return TransmitDesign(w, p_value)


def feasible_start(ch: ChannelRealization, config: ScenarioConfig, links: np.ndarray,
                   options: Optional[KernelOptions] = None,
                   exact: bool = False) -> Tuple[TransmitDesign, ReceiveDesign]:
    """A design meeting QoS, power and backhaul constraints, with unit-norm MMSE receivers.

    Args:
        ch: Channel realization (whitened or not)
        config: Scenario matching ``ch``
        links: (L, K) mask of the links the design may use
        options: Settings for the phase-1 program
        exact: Enforce the exact backhaul constraint over ``links`` instead of
            the smoothed one

    Raises:
        InfeasibleError: With the violating users when the floors cannot be met
    """
    links = np.asarray(links, dtype=bool)
    tx = heuristic_design(ch, config, links)
    rx = mmse_receivers(ch, tx, config, scaled=False)
    if qos_violations(ch, tx, rx, config, QOS_MARGIN):
        logger.info('heuristic start misses a QoS floor, solving the phase-1 program')
        tx = phase_one(ch, config, links, options)
        rx = mmse_receivers(ch, tx, config, scaled=False)
        violating = qos_violations(ch, tx, rx, config)
        if violating:
            raise InfeasibleError('no rank-one design meets the QoS floors', violating)

    tx = backoff_downlink(tx, ch, config, links if exact else None)
    rx = unit_receivers(mmse_receivers(ch, tx, config, scaled=False))
    violating = qos_violations(ch, tx, rx, config)
    if violating:
        raise InfeasibleError('QoS floors conflict with the backhaul caps', violating)
    return tx, rx
