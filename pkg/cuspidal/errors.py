"""
Exception hierarchy shared by the numerical modules and the command line tools.
The command line maps ScenarioError, ConvergenceError and InvariantViolation to
exit codes 2, 3 and 4.
"""
from typing import Optional, Sequence, Tuple

import numpy as np


class CuspidalError(Exception):
    """Base class for all package errors."""


class ScenarioError(CuspidalError, ValueError):
    """Invalid scenario document or invalid construction arguments."""


class ConvergenceError(CuspidalError, RuntimeError):
    """A numerical refinement did not reach its tolerance."""


class UnresolvedMinimumError(ConvergenceError):
    """
    A scan minimum looks like a pole but its refinement stays above the pole tolerance.

    Attributes:
        bracket (Tuple[float, float]): Grid interval holding the minimum.

        sigma_min (float): Best relative σ_min reached in the bracket.

    """

    def __init__(self, bracket: Tuple[float, float], sigma_min: float):
        self.bracket = (float(bracket[0]), float(bracket[1]))
        self.sigma_min = sigma_min
        super().__init__(
            f"unresolved scan minimum in [{self.bracket[0]:.10g}, {self.bracket[1]:.10g}] "
            f"with relative σ_min {sigma_min:.3e}, refine the scan grid"
        )


class InvariantViolation(CuspidalError, AssertionError):
    """
    A checked identity failed.

    Attributes:
        invariant (str): Name of the violated invariant.

        value (float): Measured defect.

    """

    def __init__(self, invariant: str, value: float = float("nan"), detail: str = ""):
        self.invariant = invariant
        self.value = value
        message = f"{invariant} violated (value {value:.3e})"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class PSDViolation(InvariantViolation):
    """Residue operator has a negative eigenvalue beyond tolerance."""


class DivergentTail(InvariantViolation):
    """Exponential sum is not square integrable."""


class SpectralError(CuspidalError, ValueError):
    """Domain error in spectral arithmetic."""


class BranchPointError(SpectralError):
    pass


class SheetError(SpectralError):
    pass


class ContinuousSpectrumError(SpectralError):
    pass


class QuadratureError(SpectralError):
    pass


class SingularMatchingError(CuspidalError, ArithmeticError):
    """
    The matching matrix is singular to tolerance, i.e. the point is a pole.

    Attributes:
        sigma_min (float): Relative smallest singular value of the matching matrix.

        direction (Optional[np.ndarray]): Right singular vector of the smallest
            singular value.

    """

    def __init__(
        self, message: str, sigma_min: float, direction: Optional[np.ndarray] = None
    ):
        self.sigma_min = sigma_min
        self.direction = direction
        super().__init__(message)


class PoleProximityError(SingularMatchingError):
    pass


class CavitySingularError(CuspidalError, ArithmeticError):
    """Y(0) is near singular, the point is a cavity Dirichlet eigenvalue."""


class DualityError(CuspidalError, ValueError):
    pass


class GuardError(CuspidalError, ValueError):
    pass


class InsufficientDataError(ScenarioError):
    """
    Classifier input lacks blocks.

    Attributes:
        missing (Sequence[tuple]): Bidegrees without data.

    """

    def __init__(self, missing: Sequence[tuple]):
        self.missing = list(missing)
        super().__init__(
            "insufficient scattering data for blocks "
            + ", ".join(f"(r={r}, k={k})" for r, k in self.missing)
        )


class AmbiguousMembershipError(CuspidalError, ValueError):
    pass


class DimensionParityError(CuspidalError, ValueError):
    pass
