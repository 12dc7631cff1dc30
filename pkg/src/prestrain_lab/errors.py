"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; anything carrying a diagnostic payload (offending determinant,
failing time, violation list) stores it as an attribute so tests can
assert on the value rather than parse the message.
"""

from __future__ import annotations


class PrestrainLabError(Exception):
    """Base class for all package-specific errors."""


class NonZeroMeanError(PrestrainLabError):
    """Operation requires a mean-zero field but the mean mode is not small."""

    def __init__(self, mean_value: float, tol: float):
        self.mean_value = mean_value
        self.tol = tol
        super().__init__(f"field mean {mean_value!r} exceeds tolerance {tol!r}")


class GridMismatchError(PrestrainLabError):
    """Fields from different grids were combined."""


class NotSPDError(PrestrainLabError):
    """Matrix expected to be symmetric positive definite is not."""

    def __init__(self, message: str, eigenvalue: float | None = None):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class OutOfDomainError(PrestrainLabError):
    """Energy density evaluated where the deformation determinant is not positive.

    Carries the offending determinant (the most negative one found in a
    batched evaluation) and, when raised from a solver loop, the time at
    which the state left the admissible set.
    """

    def __init__(self, determinant: float, time: float | None = None):
        self.determinant = determinant
        self.time = time
        at = "" if time is None else f" at t={time!r}"
        super().__init__(f"determinant {determinant!r} is not positive{at}")


class NotEllipticError(PrestrainLabError):
    """Acoustic symbol has a non-positive eigenvalue for some retained mode."""

    def __init__(self, message: str, eigenvalue: float | None = None):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class UnstableStepError(PrestrainLabError):
    """Time step rejected: norm blow-up, NaN, or a CFL violation."""

    def __init__(self, message: str, time: float | None = None):
        self.time = time
        super().__init__(message if time is None else f"{message} at t={time!r}")


class NoContractionError(PrestrainLabError):
    """Picard iteration stopped contracting (or hit its iteration cap)."""

    def __init__(self, message: str, time: float | None = None, iterations: int | None = None):
        self.time = time
        self.iterations = iterations
        super().__init__(message if time is None else f"{message} at t={time!r}")


class NewtonDivergedError(PrestrainLabError):
    """Newton polish failed to reduce the residual."""

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message)


class ParseError(PrestrainLabError):
    """Config text could not be tokenized as key = value lines."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        super().__init__(message if line_number is None else f"line {line_number}: {message}")


class ValidationError(PrestrainLabError):
    """One or more config keys failed validation.

    ``violations`` lists every problem found in a single pass so a bad
    config is reported in one shot rather than one key at a time.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        summary = "; ".join(self.violations)
        super().__init__(f"{len(self.violations)} config violation(s): {summary}")
