"""Pseudo-spectral solvers and diagnostics for prestrained elastic diffusion.

The package simulates a coupled system on the periodic box [0, L)^3: an
elastic displacement whose stored energy depends on a scalar order
parameter through a prestrain map, and the order parameter diffusing
along the gradient of its energy conjugate.  A hyperbolic solver keeps
the inertial term; a quasi-static solver replaces it with an elliptic
balance.  Diagnostics track the discrete energy law, decay, and the
higher-order functionals used in the well-posedness estimates.
"""

__version__ = "0.1.0"

from .errors import (
    GridMismatchError,
    NewtonDivergedError,
    NoContractionError,
    NonZeroMeanError,
    NotEllipticError,
    NotSPDError,
    OutOfDomainError,
    ParseError,
    PrestrainLabError,
    UnstableStepError,
    ValidationError,
)

__all__ = [
    "__version__",
    "PrestrainLabError",
    "NonZeroMeanError",
    "GridMismatchError",
    "NotSPDError",
    "OutOfDomainError",
    "NotEllipticError",
    "UnstableStepError",
    "NoContractionError",
    "NewtonDivergedError",
    "ParseError",
    "ValidationError",
]
