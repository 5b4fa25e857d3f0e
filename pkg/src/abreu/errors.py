from enum import Enum


class AbreuError(Exception):
    """Base class for solver errors."""


class MaskError(AbreuError, ValueError):
    """Domain or grid rejected at construction."""


class DomainError(AbreuError, ValueError):
    """Input outside the domain of a map (non-positive density, w below the floor, ...)."""


class DegenerateError(AbreuError):
    """Hessian determinant is not positive where a uniformly elliptic operator is needed."""


class LinearSolveError(AbreuError):
    """Sparse solve failed to reach its residual contract."""


class ProblemError(AbreuError, ValueError):
    """Problem or model violates a hypothesis checked at construction."""


class Status(str, Enum):
    CONVERGED = "CONVERGED"
    NOT_CONVERGED = "NOT_CONVERGED"
    NONCONVEX_RESULT = "NONCONVEX_RESULT"
    DEGENERATE = "DEGENERATE"
    MAX_ITERS = "MAX_ITERS"
