"""Two-stage outer loop shared by the iterative solvers.

Stage 1 optimizes with the smoothed backhaul constraint, users are then
associated to T-RAUs by thresholding the smoothed link indicator, and stage 2
re-optimizes with the pruned links and the exact backhaul constraint.
Subclasses supply the per-iteration convex program and the state update.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..errors import InfeasibleError, SubproblemError
from ..kernel import ConvexProgram, KernelOptions, SolveReport, solve
from ..scenario import (ChannelRealization, FeasibilityReport, ReceiveDesign, ScenarioConfig, TransmitDesign,
                        check_feasibility, smoothed_indicator, sum_rate, whiten)

logger = logging.getLogger(__name__)

# An unconverged subproblem point is still taken when it violates no constraint by more
# than this and does not lower the sum rate.
RECOVER_VIOLATION = 1e-4


@dataclass(frozen=True)
class SolverOptions:
    """Settings shared by every algorithm.

    Attributes:
        outer_tol: Relative objective change that ends a stage
        max_outer: Outer iteration limit per stage
        kernel: Settings of the convex subproblem solver
        randomization_samples: Gaussian randomization draws for rank-one recovery
        rank1_gap_threshold: Gap above which randomization is attempted
        debug: Check surrogate tightness at every expansion point
        tdd_downlink_share: Time share of the downlink phase in the TDD baseline
        seed: Seed of the randomization generator
    """
    outer_tol: float = 1e-4
    max_outer: int = 50
    kernel: KernelOptions = field(default_factory=KernelOptions)
    randomization_samples: int = 20
    rank1_gap_threshold: float = 0.05
    debug: bool = False
    tdd_downlink_share: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.outer_tol <= 0:
            raise ValueError('outer_tol must be positive')
        if self.max_outer < 1:
            raise ValueError('max_outer must be at least 1')
        if not 0.0 < self.tdd_downlink_share < 1.0:
            raise ValueError('tdd_downlink_share must lie in (0, 1)')

    def replace(self, **changes) -> 'SolverOptions':
        return dataclasses.replace(self, **changes)


@dataclass
class IterationRecord:
    """One outer iteration: surrogate objective, exact sum-rate and timing."""
    stage: int
    iteration: int
    objective: float
    sum_rate: float
    residual: float
    time_ms: float
    rank1_gap: float = math.nan
    kkt: float = math.nan


@dataclass
class AssociationMap:
    """Which T-RAU serves which DU, as an (L, K) boolean matrix."""
    links: np.ndarray

    def __post_init__(self):
        self.links = np.array(self.links, dtype=bool, ndmin=2)

    @classmethod
    def all_links(cls, n_trau: int, n_du: int) -> 'AssociationMap':
        return cls(np.ones((n_trau, n_du), dtype=bool))

    @classmethod
    def from_powers(cls, link_power: np.ndarray, config: ScenarioConfig) -> 'AssociationMap':
        """Keep link (l, k) when ``1 - exp(-θ·power) > ξ``."""
        link_power = np.maximum(np.asarray(link_power, dtype=float), 0.0)
        return cls(smoothed_indicator(link_power, config.theta) > config.xi)

    def users_of(self, l: int) -> List[int]:
        return np.flatnonzero(self.links[l]).tolist()

    def rau_set(self, k: int) -> List[int]:
        return np.flatnonzero(self.links[:, k]).tolist()

    @property
    def n_links(self) -> int:
        return int(self.links.sum())

    def __and__(self, other: 'AssociationMap') -> 'AssociationMap':
        return AssociationMap(self.links & other.links)


def associate_users(tx: TransmitDesign, config: ScenarioConfig) -> AssociationMap:
    """Threshold association of a stage-1 design.

    Examples:
        >>> config = ScenarioConfig(n_trau=1, n_rrau=1, n_du=1, n_uu=0, n_antennas=1)
        >>> associate_users(TransmitDesign([[0.1]], []), config).links
        array([[ True]])
    """
    return AssociationMap.from_powers(tx.link_powers(config.n_antennas), config)


@dataclass
class SolveTrace:
    """Iteration history and termination data of one run."""
    algorithm: str
    records: List[IterationRecord] = field(default_factory=list)
    association: Optional[AssociationMap] = None
    status: str = 'converged'
    feasibility: Optional[FeasibilityReport] = None
    rank1_gap: float = math.nan
    kkt: float = math.nan
    wall_time_ms: float = 0.0

    def objectives(self, stage: Optional[int] = None) -> np.ndarray:
        return np.array([r.objective for r in self.records if stage is None or r.stage == stage])

    def is_monotone(self, tol: float = 1e-6) -> bool:
        """Objective nondecreasing (within ``tol``) inside every stage."""
        for stage in sorted({r.stage for r in self.records}):
            values = self.objectives(stage)
            if values.size > 1 and np.any(np.diff(values) < -tol):
                return False
        return True

    @property
    def n_iterations(self) -> int:
        return len(self.records)


@dataclass
class Outcome:
    """Final design of a run, in the units of the scenario it was given."""
    algorithm: str
    tx: TransmitDesign
    rx: ReceiveDesign
    trace: SolveTrace
    se: float
    feasibility: FeasibilityReport
    rank1_gap: float = math.nan
    extras: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def evaluate(cls, algorithm: str, ch: ChannelRealization, config: ScenarioConfig, tx: TransmitDesign,
                 rx: ReceiveDesign, trace: SolveTrace, rank1_gap: float = math.nan) -> 'Outcome':
        feasibility = check_feasibility(ch, tx, rx, config)
        trace.feasibility = feasibility
        trace.rank1_gap = rank1_gap
        return cls(algorithm, tx, rx, trace, sum_rate(ch, tx, rx, config), feasibility, rank1_gap)

    def as_tuple(self) -> Tuple[TransmitDesign, ReceiveDesign, SolveTrace]:
        return self.tx, self.rx, self.trace

    @property
    def feasible(self) -> bool:
        return self.feasibility.feasible

    @property
    def designs(self) -> Dict[str, Tuple[TransmitDesign, ReceiveDesign]]:
        return {'design': (self.tx, self.rx)}


@dataclass(frozen=True)
class SolveContext:
    """A scenario in the original units and its whitened copy used for optimization."""
    ch: ChannelRealization
    config: ScenarioConfig
    wch: ChannelRealization
    wconfig: ScenarioConfig

    @classmethod
    def create(cls, ch: ChannelRealization, config: ScenarioConfig) -> 'SolveContext':
        wch, wconfig = whiten(ch, config)
        return cls(ch, config, wch, wconfig)

    def alive(self) -> AssociationMap:
        """All links except those of T-RAUs without backhaul."""
        links = np.ones((self.config.n_trau, self.config.n_du), dtype=bool)
        links[self.config.backhaul <= 0, :] = False
        return AssociationMap(links)


class TwoStageSolver:
    """Template of a two-stage sparse beamforming algorithm.

    Subclasses implement the hooks ``initial_state``, ``build_program``,
    ``advance``, ``link_power_of``, ``state_sum_rate``, ``prune`` and
    ``finalize``. States are opaque to this class.

    Args:
        config: Scenario of the channels that will be solved
        options: Solver settings
    """
    name = 'two-stage'

    def __init__(self, config: ScenarioConfig, options: Optional[SolverOptions] = None):
        self.config = config
        self.options = options or SolverOptions()

    def initial_state(self, ctx: SolveContext, links: AssociationMap):
        raise NotImplementedError

    def build_program(self, state, ctx: SolveContext, links: AssociationMap, stage: int) -> ConvexProgram:
        raise NotImplementedError

    def advance(self, state, report: SolveReport, ctx: SolveContext, links: AssociationMap, stage: int):
        raise NotImplementedError

    def link_power_of(self, state) -> np.ndarray:
        raise NotImplementedError

    def state_sum_rate(self, state, ctx: SolveContext) -> float:
        raise NotImplementedError

    def prune(self, state, ctx: SolveContext, links: AssociationMap):
        raise NotImplementedError

    def finalize(self, state, ctx: SolveContext, links: AssociationMap) -> Tuple[TransmitDesign, ReceiveDesign, float]:
        raise NotImplementedError

    def tightness(self, state, ctx: SolveContext, links: AssociationMap, stage: int) -> float:
        """Largest surrogate mismatch at the expansion point (debug checks)."""
        return 0.0

    def iteration_gap(self, state) -> float:
        return math.nan

    def extras(self, state, ctx: SolveContext) -> Dict[str, Any]:
        """Algorithm-specific numbers attached to :attr:`Outcome.extras`."""
        return {}

    def solve(self, ch: ChannelRealization) -> Outcome:
        """Run both stages on ``ch`` and evaluate the final design.

        Raises:
            InfeasibleError: If the QoS floors cannot be met
            SubproblemError: If a convex subproblem fails
        """
        config = self.config
        start = time.perf_counter()
        trace = SolveTrace(self.name)
        if ch.n_du + ch.n_uu == 0:
            tx = TransmitDesign.zeros(config)
            rx = ReceiveDesign(np.zeros((ch.n_antennas, 0), dtype=complex), ch.serving)
            return Outcome.evaluate(self.name, ch, config, tx, rx, trace)

        ctx = SolveContext.create(ch, config)
        alive = ctx.alive()
        state = self.initial_state(ctx, alive)
        logger.info(f'{self.name}: stage 1 from sum-rate {self.state_sum_rate(state, ctx):.4f} bps/Hz')
        state, iteration, converged_1 = self._iterate(state, ctx, alive, 1, trace, 0)

        association = AssociationMap.from_powers(self.link_power_of(state), ctx.wconfig) & alive
        trace.association = association
        lost = [f'DU{k}' for k in range(ch.n_du)
                if not association.links[:, k].any() and config.du_rate_min[k] > 0]
        if lost:
            raise InfeasibleError('association leaves QoS-constrained users without a serving T-RAU', lost)
        logger.info(f'{self.name}: stage 2 with {association.n_links} of {alive.n_links} links')

        state = self.prune(state, ctx, association)
        state, iteration, converged_2 = self._iterate(state, ctx, association, 2, trace, iteration)
        trace.status = 'converged' if converged_1 and converged_2 else 'max_iter'

        tx, rx, gap = self.finalize(state, ctx, association)
        if trace.records:
            trace.kkt = trace.records[-1].kkt
        outcome = Outcome.evaluate(self.name, ch, config, tx, rx, trace, gap)
        outcome.extras.update(self.extras(state, ctx))
        trace.wall_time_ms = 1e3 * (time.perf_counter() - start)
        logger.info(f'{self.name}: {trace.status} after {trace.n_iterations} iterations, '
                    f'SE {outcome.se:.4f} bps/Hz, feasible={outcome.feasibility.feasible}')
        return outcome

    def _iterate(self, state, ctx: SolveContext, links: AssociationMap, stage: int, trace: SolveTrace,
                 iteration: int):
        previous = None
        for _ in range(self.options.max_outer):
            tick = time.perf_counter()
            if self.options.debug:
                mismatch = self.tightness(state, ctx, links, stage)
                logger.debug(f'{self.name}: stage {stage} iteration {iteration} surrogate mismatch {mismatch:.2e}')
            program = self.build_program(state, ctx, links, stage)
            report = solve(program, self.options.kernel)
            if report.usable:
                state = self.advance(state, report, ctx, links, stage)
            else:
                state = self._recover(state, report, ctx, links, stage, iteration)
            objective = report.objective
            residual = math.nan if previous is None else abs(objective - previous) / max(1.0, abs(previous))
            trace.records.append(IterationRecord(
                stage=stage, iteration=iteration, objective=objective,
                sum_rate=self.state_sum_rate(state, ctx), residual=residual,
                time_ms=1e3 * (time.perf_counter() - tick), rank1_gap=self.iteration_gap(state), kkt=report.kkt))
            logger.debug(f'{self.name}: stage {stage} iteration {iteration} objective {objective:.9g} '
                         f'residual {residual:.2e}')
            iteration += 1
            if previous is not None and residual <= self.options.outer_tol:
                return state, iteration, True
            if math.isfinite(objective):
                previous = objective
        logger.warning(f'{self.name}: stage {stage} stopped at the iteration limit {self.options.max_outer}')
        return state, iteration, False

    def _recover(self, state, report: SolveReport, ctx: SolveContext, links: AssociationMap, stage: int,
                 iteration: int):
        """Advance from a point the solver returned without converging, if it is safe to.

        Raises:
            SubproblemError: If there is no point, it violates a constraint by
                more than :data:`RECOVER_VIOLATION`, or it lowers the sum rate
        """
        failure = SubproblemError(report.status, stage, iteration)
        if not report.values or not report.max_violation <= RECOVER_VIOLATION:
            raise failure
        try:
            candidate = self.advance(state, report, ctx, links, stage)
        except (TypeError, ValueError, AttributeError) as e:
            raise failure from e
        before = self.state_sum_rate(state, ctx)
        after = self.state_sum_rate(candidate, ctx)
        if not after >= before - 1e-9 * max(1.0, abs(before)):
            raise failure
        logger.warning(f'{self.name}: stage {stage} iteration {iteration} kept a {report.status} point '
                       f'(violation {report.max_violation:.1e}, sum rate {before:.6g} -> {after:.6g})')
        return candidate

    def run(self, ch: ChannelRealization) -> Tuple[TransmitDesign, ReceiveDesign, SolveTrace]:
        return self.solve(ch).as_tuple()
