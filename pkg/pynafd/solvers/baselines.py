"""Reference schemes the full-duplex design is compared against.

* ``tdd``: the two link directions take turns. The downlink phase serves the
  DUs with no UU on air, the uplink phase serves the UUs with every T-RAU
  silent, and the spectral efficiency is the time-share weighted sum.
* ``cran-ccfd``: every T-RAU and R-RAU site becomes a co-located full-duplex
  RAU with ``M`` transmit and ``M`` receive antennas, suffering the same
  residual self-interference ratio as the inter-RAU interference of the
  distributed network.

Both reuse :class:`~pynafd.solvers.spca.SpcaSolver` for the per-scheme
optimization.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..scenario import (ChannelRealization, Layout, ReceiveDesign, ScenarioConfig, TransmitDesign, check_feasibility,
                        downlink_rates, draw_channels, mmse_receivers, uplink_rates)
from .base import Outcome, SolverOptions, SolveTrace
from .spca import SpcaSolver

logger = logging.getLogger(__name__)


@dataclass
class BaselineResult:
    """Spectral efficiency of a reference scheme and the designs behind it.

    Attributes:
        scheme: ``'tdd'`` or ``'cran-ccfd'``
        se: Sum spectral efficiency in bps/Hz
        du_rates: Effective downlink rates (time-share weighted for TDD)
        uu_rates: Effective uplink rates
        feasible: Whether every phase meets its constraints
        trace: Iteration history; TDD numbers the uplink phase stages 3 and 4
        phases: Final outcome of every optimized phase
    """
    scheme: str
    se: float
    du_rates: np.ndarray
    uu_rates: np.ndarray
    feasible: bool
    trace: SolveTrace
    phases: Dict[str, Outcome] = field(default_factory=dict)
    rank1_gap: float = math.nan

    @property
    def designs(self) -> Dict[str, Tuple[TransmitDesign, ReceiveDesign]]:
        return {name: (outcome.tx, outcome.rx) for name, outcome in self.phases.items()}


def merge_traces(algorithm: str, parts: Sequence[SolveTrace]) -> SolveTrace:
    """Concatenate phase traces, shifting stage numbers by two per phase."""
    merged = SolveTrace(algorithm)
    iteration = 0
    for offset, part in enumerate(parts):
        for record in part.records:
            merged.records.append(dataclasses.replace(record, stage=record.stage + 2 * offset, iteration=iteration))
            iteration += 1
        merged.wall_time_ms += part.wall_time_ms
    merged.status = 'converged' if all(part.status == 'converged' for part in parts) else 'max_iter'
    if parts:
        merged.kkt = parts[-1].kkt
    return merged


def tdd_phases(config: ScenarioConfig, downlink_share: float) -> Tuple[ScenarioConfig, ScenarioConfig]:
    """Downlink-only and uplink-only scenarios, QoS floors divided by the phase's time share.

    Examples:
        >>> dl, ul = tdd_phases(ScenarioConfig(du_rate_min=0.1, uu_rate_min=0.2), 0.5)
        >>> dl.n_uu, ul.n_du, float(dl.du_rate_min[0]), float(ul.uu_rate_min[0])
        (0, 0, 0.2, 0.4)
    """
    downlink = config.replace(n_uu=0, uu_power=np.zeros(0), uu_rate_min=np.zeros(0), uu_pairing=None,
                              du_rate_min=config.du_rate_min / downlink_share)
    uplink = config.replace(n_du=0, du_rate_min=np.zeros(0), du_noise=np.zeros(0),
                            uu_rate_min=config.uu_rate_min / (1.0 - downlink_share))
    return downlink, uplink


def solve_tdd(ch: ChannelRealization, config: ScenarioConfig,
              options: Optional[SolverOptions] = None) -> BaselineResult:
    """Half-duplex baseline; independent of the residual IRI by construction.

    Raises:
        InfeasibleError: If a phase cannot meet its scaled QoS floors
    """
    options = options or SolverOptions()
    share = options.tdd_downlink_share
    dl_config, ul_config = tdd_phases(config, share)
    dl_ch = ch.subset(uu=[])
    ul_ch = ch.subset(du=[])

    downlink = SpcaSolver(dl_config, options).solve(dl_ch)
    uplink = SpcaSolver(ul_config, options).solve(ul_ch)
    # MMSE is the best receiver for the optimized powers
    rx = mmse_receivers(ul_ch, uplink.tx, ul_config)
    uplink = Outcome.evaluate('tdd-uplink', ul_ch, ul_config, uplink.tx, rx, uplink.trace)

    du_rates = share * downlink_rates(dl_ch, downlink.tx, dl_config)
    uu_rates = (1.0 - share) * uplink_rates(ul_ch, uplink.tx, uplink.rx, ul_config)
    se = float(np.sum(du_rates) + np.sum(uu_rates))
    logger.info(f'tdd: SE {se:.4f} bps/Hz (downlink share {share:g})')
    return BaselineResult(
        scheme='tdd', se=se, du_rates=du_rates, uu_rates=uu_rates,
        feasible=downlink.feasibility.feasible and uplink.feasibility.feasible,
        trace=merge_traces('tdd', [downlink.trace, uplink.trace]),
        phases={'downlink': downlink, 'uplink': uplink})


def ccfd_scenario(ch: ChannelRealization, config: ScenarioConfig) -> Tuple[ChannelRealization, ScenarioConfig]:
    """Co-located full-duplex network over the sites of ``ch``.

    Every one of the ``L + Z`` sites hosts a T-RAU and an R-RAU. Sites that had
    no transmitter get the mean T-RAU power and backhaul cap, sites that had
    no receiver get the mean R-RAU noise, and UUs are re-paired to their
    strongest site. The T-RAU to DU channels of the original T-RAUs are kept;
    every other channel is redrawn from a generator seeded with ``(seed, 1)``.

    Raises:
        ValueError: If ``ch`` does not carry its layout and seed
    """
    if ch.layout is None or ch.seed is None:
        raise ValueError('the co-located baseline needs a realization drawn with generate_channels')
    L, Z = config.n_trau, config.n_rrau
    sites = np.vstack([ch.layout.trau_xy, ch.layout.rrau_xy])
    ccfd = config.replace(
        n_trau=L + Z, n_rrau=L + Z,
        trau_power=np.concatenate([config.trau_power, np.full(Z, config.trau_power.mean())]),
        backhaul=np.concatenate([config.backhaul, np.full(Z, config.backhaul.mean())]),
        rrau_noise=np.concatenate([np.full(L, config.rrau_noise.mean()), config.rrau_noise]),
        uu_pairing=None)
    layout = Layout(trau_xy=sites, rrau_xy=sites, du_xy=ch.layout.du_xy, uu_xy=ch.layout.uu_xy)
    rng = np.random.default_rng([int(ch.seed), 1])
    drawn = draw_channels(ccfd, layout, rng, seed=ch.seed)
    h_d = np.array(drawn.h_d)
    h_d[:ch.h_d.shape[0]] = ch.h_d
    return dataclasses.replace(drawn, h_d=h_d), ccfd


def solve_cran_ccfd(ch: ChannelRealization, config: ScenarioConfig,
                    options: Optional[SolverOptions] = None) -> BaselineResult:
    """Co-located full-duplex baseline solved with the SPCA algorithm."""
    ccfd_ch, ccfd_config = ccfd_scenario(ch, config)
    outcome = SpcaSolver(ccfd_config, options).solve(ccfd_ch)
    outcome.trace.algorithm = 'cran-ccfd'
    du_rates = downlink_rates(ccfd_ch, outcome.tx, ccfd_config)
    uu_rates = uplink_rates(ccfd_ch, outcome.tx, outcome.rx, ccfd_config)
    feasible = check_feasibility(ccfd_ch, outcome.tx, outcome.rx, ccfd_config).feasible
    logger.info(f'cran-ccfd: SE {outcome.se:.4f} bps/Hz over {ccfd_config.n_trau} co-located sites')
    return BaselineResult(scheme='cran-ccfd', se=outcome.se, du_rates=du_rates, uu_rates=uu_rates,
                          feasible=feasible, trace=outcome.trace, phases={'ccfd': outcome})


class TddBaseline:
    """Solver-map adapter for :func:`solve_tdd`."""
    name = 'tdd'

    def __init__(self, config: ScenarioConfig, options: Optional[SolverOptions] = None):
        self.config = config
        self.options = options or SolverOptions()

    def solve(self, ch: ChannelRealization) -> BaselineResult:
        return solve_tdd(ch, self.config, self.options)


class CcfdBaseline(TddBaseline):
    """Solver-map adapter for :func:`solve_cran_ccfd`."""
    name = 'cran-ccfd'

    def solve(self, ch: ChannelRealization) -> BaselineResult:
        return solve_cran_ccfd(ch, self.config, self.options)
