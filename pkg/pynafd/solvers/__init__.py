# Joint beamforming, receiver and power control algorithms for NAFD networks.
# SOLVER_MAP maps the algorithm names used by the harness to solver classes;
# every class takes (config, options) and has a solve(ch) method.

from .base import (AssociationMap, IterationRecord, Outcome, SolveContext, SolverOptions, SolveTrace,
                   TwoStageSolver, associate_users)
from .baselines import BaselineResult, CcfdBaseline, TddBaseline, solve_cran_ccfd, solve_tdd
from .sdr_bcd import SdrBcdSolver
from .spca import SpcaSolver

SOLVER_MAP = {}


def register_solver_map(solver_map: dict):
    """Register solver classes by algorithm name."""
    SOLVER_MAP.update(solver_map)


def get_solver(name: str, config, options: SolverOptions = None):
    """Instantiate the solver registered under ``name``.

    Raises:
        KeyError: If no solver has that name
    """
    try:
        solver_cls = SOLVER_MAP[name]
    except KeyError:
        raise KeyError(f'unknown algorithm {name!r}, expected one of {sorted(SOLVER_MAP)}') from None
    return solver_cls(config, options)


register_solver_map({
    'sdr-bcd': SdrBcdSolver,
    'spca': SpcaSolver,
    'tdd': TddBaseline,
    'cran-ccfd': CcfdBaseline,
})
