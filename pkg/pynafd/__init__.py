# Joint sparse beamforming, uplink receiver design and power control for
# network-assisted full-duplex (NAFD) cell-free networks.
# The main entry points are the scenario model, the two solvers and the
# experiment harness; the command line lives in pynafd.cli.

__version__ = '0.1.0'

from .errors import ConfigError, InfeasibleError, SingularCovarianceError, SubproblemError
from .scenario import (ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign, check_feasibility,
                       generate_channels, mmse_receiver, sum_rate)
from .solvers import SOLVER_MAP, SdrBcdSolver, SolverOptions, SpcaSolver, get_solver
from .harness import ExperimentSpec, run_experiment
