"""Convex subproblem kernel.

Every per-iteration problem of the solvers is a :class:`ConvexProgram` built
from cvxpy expressions. :func:`solve` compiles it to conic form, runs the
interior-point solver (Clarabel, with SCS as fallback) and reports the KKT
residuals of the conic problem computed from the returned primal/dual triple.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import cvxpy as cp
import cvxpy.settings as cvxpy_settings
import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

# Largest primal violation accepted from a solver that reported reduced accuracy.
USABLE_VIOLATION = 1e-6

STATUSES = ('optimal', 'inaccurate', 'max_iter', 'infeasible', 'numerical')

VariableBlock = Union[cp.Variable, List[cp.Variable]]


@dataclass(frozen=True)
class KernelOptions:
    """Settings of the conic solver.

    Attributes:
        tol: Gap and feasibility tolerance passed to the solver
        max_iter: Interior-point iteration limit
        kkt_tol: Largest KKT residual for which a solve is reported ``optimal``
        solver: cvxpy name of the preferred solver
        fallback: Solver tried when the preferred one is missing or fails
    """
    tol: float = 1e-8
    max_iter: int = 200
    kkt_tol: float = 1e-6
    solver: str = 'CLARABEL'
    fallback: Optional[str] = 'SCS'

    def __post_init__(self):
        if self.tol <= 0 or self.kkt_tol <= 0:
            raise ValueError('tolerances must be positive')
        if self.max_iter < 1:
            raise ValueError('max_iter must be at least 1')

    def solver_opts(self, solver: str) -> Dict[str, Any]:
        if solver == 'CLARABEL':
            return {'tol_gap_abs': self.tol, 'tol_gap_rel': self.tol, 'tol_feas': self.tol,
                    'max_iter': self.max_iter}
        if solver == 'SCS':
            eps = max(self.tol, 1e-7)
            return {'eps_abs': eps, 'eps_rel': eps, 'max_iters': 100 * self.max_iter}
        return {}


@dataclass
class ConvexProgram:
    """A concave maximization over cvxpy variables.

    Attributes:
        name: Label used in logs
        objective: Concave cvxpy expression to maximize
        constraints: cvxpy constraints (convex inequalities, affine equalities,
            cones and Hermitian PSD blocks)
        variables: Named variable blocks whose values the report returns
        start_value: Objective value at a known feasible point, if any
    """
    name: str
    objective: cp.Expression
    constraints: List[cp.Constraint]
    variables: Dict[str, VariableBlock] = field(default_factory=dict)
    start_value: Optional[float] = None

    def problem(self) -> cp.Problem:
        return cp.Problem(cp.Maximize(self.objective), self.constraints)


@dataclass
class SolveReport:
    """Outcome of :func:`solve`.

    Attributes:
        status: One of ``optimal``, ``inaccurate``, ``max_iter``, ``infeasible``, ``numerical``
        objective: Objective value at the returned point (NaN without a point)
        values: Variable values keyed like ``ConvexProgram.variables``
        multipliers: Dual value of every constraint, in program order
        residuals: ``stationarity``, ``primal`` and ``complementarity`` KKT residuals
        max_violation: Largest constraint violation at the returned point
        iterations: Interior-point iterations
        wall_time_ms: Time spent in compilation and solve
        solver: Name of the solver that produced the point
    """
    status: str
    objective: float = math.nan
    values: Dict[str, Any] = field(default_factory=dict)
    multipliers: List[Any] = field(default_factory=list)
    residuals: Dict[str, float] = field(default_factory=dict)
    max_violation: float = math.nan
    iterations: int = 0
    wall_time_ms: float = 0.0
    solver: str = ''

    @property
    def usable(self) -> bool:
        return self.status in ('optimal', 'inaccurate')

    @property
    def kkt(self) -> float:
        """Largest of the three KKT residuals."""
        if not self.residuals:
            return math.nan
        return max(self.residuals.values())

    def value(self, name: str):
        return self.values[name]


def _installed(name: Optional[str]) -> bool:
    return name is not None and name in cp.installed_solvers()


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(-1)


def kkt_residuals(data: Dict[str, Any], raw: Any) -> Dict[str, float]:
    """KKT residuals of ``min ½xᵀPx + cᵀx s.t. Ax + s = b, s ∈ K``.

    ``raw`` is the native solver output: a Clarabel solution (``x``, ``s``,
    ``z``) or an SCS result dictionary (``x``, ``s``, ``y``).
    """
    try:
        A, b, c = data['A'], _as_array(data['b']), _as_array(data['c'])
        if isinstance(raw, dict):
            x, s, z = _as_array(raw['x']), _as_array(raw['s']), _as_array(raw['y'])
        else:
            x, s, z = _as_array(raw.x), _as_array(raw.s), _as_array(raw.z)
        gradient = c + A.T @ z
        if data.get('P') is not None:
            gradient = gradient + data['P'] @ x
        return {
            'stationarity': float(np.linalg.norm(gradient, np.inf) / (1.0 + np.linalg.norm(c, np.inf))),
            'primal': float(np.linalg.norm(A @ x + s - b, np.inf) / (1.0 + np.linalg.norm(b, np.inf))),
            'complementarity': float(abs(s @ z) / (1.0 + abs(c @ x))),
        }
    except Exception as e:
        logger.debug(f'could not compute KKT residuals: {e}')
        return {'stationarity': math.nan, 'primal': math.nan, 'complementarity': math.nan}


def _max_violation(constraints: Sequence[cp.Constraint]) -> float:
    worst = 0.0
    for constraint in constraints:
        try:
            violation = np.max(np.atleast_1d(constraint.violation()))
        except (ValueError, TypeError):
            return math.inf
        worst = max(worst, float(violation))
    return worst


def _value_of(block) -> Optional[np.ndarray]:
    if isinstance(block, cp.Expression):
        return None if block.value is None else np.array(block.value)
    return np.array(block)


def _collect(variables: Dict[str, VariableBlock]) -> Dict[str, Any]:
    values = {}
    for name, block in variables.items():
        if isinstance(block, (list, tuple)):
            values[name] = [_value_of(v) for v in block]
        else:
            values[name] = _value_of(block)
    return values


def _status(problem_status: str, residuals: Dict[str, float], violation: float, options: KernelOptions) -> str:
    if problem_status in (cvxpy_settings.INFEASIBLE, cvxpy_settings.INFEASIBLE_INACCURATE):
        return 'infeasible'
    if problem_status == cvxpy_settings.USER_LIMIT:
        return 'max_iter'
    if problem_status not in (cvxpy_settings.OPTIMAL, cvxpy_settings.OPTIMAL_INACCURATE):
        return 'numerical'
    worst = max(residuals.values())
    if problem_status == cvxpy_settings.OPTIMAL and worst <= options.kkt_tol and violation <= options.kkt_tol:
        return 'optimal'
    if violation <= USABLE_VIOLATION:
        return 'inaccurate'
    return 'numerical'


def _solve_with(problem: cp.Problem, program: ConvexProgram, solver: str, options: KernelOptions) -> SolveReport:
    data, chain, inverse = problem.get_problem_data(solver)
    raw = chain.solve_via_data(problem, data, warm_start=False, verbose=False,
                               solver_opts=options.solver_opts(solver))
    problem.unpack_results(raw, chain, inverse)
    residuals = kkt_residuals(data, raw)
    iterations = 0
    if problem.solver_stats is not None and problem.solver_stats.num_iters is not None:
        iterations = int(problem.solver_stats.num_iters)
    if problem.status not in cvxpy_settings.SOLUTION_PRESENT:
        return SolveReport(status=_status(problem.status, residuals, math.inf, options), residuals=residuals,
                           iterations=iterations, solver=solver)
    violation = _max_violation(program.constraints)
    return SolveReport(
        status=_status(problem.status, residuals, violation, options),
        objective=float(problem.value),
        values=_collect(program.variables),
        multipliers=[c.dual_value for c in program.constraints],
        residuals=residuals,
        max_violation=violation,
        iterations=iterations,
        solver=solver,
    )


def solve(program: ConvexProgram, options: Optional[KernelOptions] = None) -> SolveReport:
    """Maximize a convex program.

    The preferred solver is tried first; the fallback is used when the
    preferred one is not installed, raises, or returns an unusable point.

    Args:
        program: Program to solve
        options: Solver settings (defaults to :class:`KernelOptions`)

    Returns:
        SolveReport: The best report obtained. Solver exceptions are reported
        with status ``numerical``, never raised.

    Raises:
        ValueError: If the program does not follow the DCP rules
        RuntimeError: If neither solver is installed

    Examples:
        >>> x = cp.Variable()
        >>> report = solve(ConvexProgram('bound', -cp.square(x - 3), [x <= 2], {'x': x}))
        >>> round(float(report.value('x')), 6)
        2.0
    """
    options = options or KernelOptions()
    problem = program.problem()
    if not problem.is_dcp():
        raise ValueError(f'program {program.name!r} is not DCP-compliant')
    candidates = [s for s in (options.solver, options.fallback) if _installed(s)]
    if not candidates:
        raise RuntimeError(f'neither {options.solver} nor {options.fallback} is installed')

    start = time.perf_counter()
    report = SolveReport(status='numerical')
    for solver in dict.fromkeys(candidates):
        try:
            report = _solve_with(problem, program, solver, options)
        except (cp.error.SolverError, TypeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            logger.warning(f'{program.name}: {solver} failed ({type(e).__name__}: {e})')
            report = SolveReport(status='numerical', solver=solver)
        if report.usable:
            break
        logger.warning(f'{program.name}: {solver} returned status {report.status}')
    report.wall_time_ms = 1e3 * (time.perf_counter() - start)

    if report.status == 'inaccurate':
        logger.warning(f'{program.name}: reduced accuracy, KKT residual {report.kkt:.2e}, '
                       f'violation {report.max_violation:.2e}')
    if report.usable and program.start_value is not None:
        slack = 1e-6 * max(1.0, abs(program.start_value))
        if report.objective < program.start_value - slack:
            logger.warning(f'{program.name}: objective {report.objective:.9g} below the start value '
                           f'{program.start_value:.9g}')
    logger.debug(f'{program.name}: {report.status} via {report.solver}, objective {report.objective:.9g}, '
                 f'{report.iterations} iterations, {report.wall_time_ms:.1f} ms')
    return report


def psd_floor(matrix: np.ndarray) -> np.ndarray:
    """Project a Hermitian matrix onto the PSD cone by clipping negative eigenvalues.

    A matrix that is already PSD is returned unchanged.

    Raises:
        ValueError: If ``matrix`` is not square and Hermitian

    Examples:
        >>> psd_floor(np.diag([1.0, -1e-9]))
        array([[1., 0.],
               [0., 0.]])
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError('psd_floor needs a square matrix')
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    if not np.allclose(matrix, matrix.conj().T, rtol=0.0, atol=1e-9 * scale):
        raise ValueError('psd_floor needs a Hermitian matrix')
    values, vectors = scipy.linalg.eigh(0.5 * (matrix + matrix.conj().T))
    if values.size == 0 or values[0] >= 0:
        return matrix.copy()
    clipped = (vectors * np.clip(values, 0.0, None)) @ vectors.conj().T
    clipped = 0.5 * (clipped + clipped.conj().T)
    return clipped if np.iscomplexobj(matrix) else clipped.real


def finite_diff_check(func: Callable[[np.ndarray], float], grad: Union[Callable, np.ndarray],
                      point: np.ndarray, step: float = 1e-5) -> float:
    """Largest component-wise gap between ``grad`` and central differences of ``func``.

    For a complex ``point`` the gradient convention is ``∂f/∂Re + i·∂f/∂Im``,
    so that the first-order change of ``func`` is ``Re(sum(conj(grad)·dx))``.

    Args:
        func: Real-valued function of an array
        grad: Analytic gradient, or a callable returning it at ``point``
        point: Expansion point
        step: Central difference step

    Returns:
        float: Maximum absolute component error
    """
    point = np.asarray(point)
    analytic = np.asarray(grad(point) if callable(grad) else grad)
    is_complex = np.iscomplexobj(point) or np.iscomplexobj(analytic)
    base = point.astype(complex if is_complex else float)
    numeric = np.zeros(base.shape, dtype=base.dtype)
    directions = (1.0, 1j) if is_complex else (1.0,)
    for index in np.ndindex(base.shape):
        for direction in directions:
            forward = base.copy()
            backward = base.copy()
            forward[index] += direction * step
            backward[index] -= direction * step
            numeric[index] += direction * (float(func(forward)) - float(func(backward))) / (2.0 * step)
    if analytic.shape != numeric.shape:
        raise ValueError(f'gradient shape {analytic.shape} does not match point shape {numeric.shape}')
    return float(np.max(np.abs(numeric - analytic))) if numeric.size else 0.0
