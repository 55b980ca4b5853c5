"""
Exception hierarchy for lattice / determinant-sum computations
"""
from contextlib import contextmanager
from typing import Iterator, Optional


class DetsumError(Exception):
    """Base error; carries an optional pipeline stage label"""

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class InvalidArgument(DetsumError, ValueError):
    """Numeric precondition violated (negative shift, non-positive radius, ...)"""


class DimensionMismatch(DetsumError, ValueError):
    """Basis matrices or operands with inconsistent shapes"""


class DependentBasis(DetsumError, ValueError):
    """Basis matrices are (numerically) linearly dependent over R"""


class BudgetExceeded(DetsumError):
    """Predicted lattice point count exceeds the configured cap"""


class UnsupportedDegree(DetsumError, ValueError):
    """Requested code dimension is not implemented"""


class SingularPoint(DetsumError, ArithmeticError):
    """A lattice point with zero determinant was hit"""


class HypothesisViolated(DetsumError):
    """An analytic lemma's hypothesis does not hold on the data"""


class MissingExponent(DetsumError, KeyError):
    """Growth exponent table lacks a required entry"""


class DegenerateFit(DetsumError):
    """Least-squares design matrix is rank deficient"""


class CodeTooLarge(DetsumError):
    """Finite code too large for exhaustive ML decoding"""


class RadiusOverflow(DetsumError):
    """Sphere decoder radius grew beyond the allowed multiple of the Babai distance"""


class InsufficientStatistics(DetsumError):
    """Not enough error events to estimate a slope"""


class ConfigError(DetsumError, ValueError):
    """Invalid experiment configuration"""


class ArtifactConflict(DetsumError):
    """Report directory belongs to a different config hash"""


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Label DetsumErrors raised inside the block with a stage name"""
    try:
        yield
    except DetsumError as e:
        if e.stage is None:
            e.stage = name
        raise
