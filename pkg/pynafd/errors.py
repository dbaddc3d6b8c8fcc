from __future__ import annotations

from typing import Optional, Sequence


class ConfigError(ValueError):
    """Raised when a scenario or experiment description is invalid.

    Args:
        message: Human readable description of the problem
        line: 1-based line of the offending key in the source file, if known
        source: Path of the file being loaded, if any
        key: Configuration key the message refers to, if any
    """

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None,
                 key: Optional[str] = None):
        self.line = line
        self.key = key
        self.source = source
        super().__init__(message)

    def __str__(self) -> str:
        message = super().__str__()
        location = self.source or ''
        if self.line is not None:
            location = f'{location}:{self.line}' if location else f'line {self.line}'
        return f'{location}: {message}' if location else message


class InfeasibleError(RuntimeError):
    """Raised when QoS floors (or an association) cannot be met.

    The ``violating`` attribute is the certificate: labels such as ``'DU2'`` or
    ``'UU0'`` of the users whose floor could not be attained.
    """

    def __init__(self, message: str, violating: Sequence[str] = ()):
        self.violating = tuple(violating)
        if self.violating:
            message = f'{message} (violating: {", ".join(self.violating)})'
        super().__init__(message)


class SubproblemError(RuntimeError):
    """Raised when a convex subproblem does not return a usable point."""

    def __init__(self, status: str, stage: int, iteration: int):
        self.status = status
        self.stage = stage
        self.iteration = iteration
        super().__init__(f'stage {stage} subproblem failed at iteration {iteration} with status {status!r}')


class SingularCovarianceError(ValueError):
    """Raised when the MMSE interference-plus-noise covariance is singular."""
