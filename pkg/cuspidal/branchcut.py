"""
Branch-aware square roots and the s-parametrization of the two-sheeted spectral
surface near λ=0. All rates returned here are gauged, i.e. the factor e^{a·u} of a
channel is removed and the channel operator is −∂² + θ.
"""
import cmath
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from cuspidal.errors import BranchPointError, ConvergenceError, SheetError, SpectralError

logger = logging.getLogger(__name__)

# thresholds are compared after rounding to this many decimals
THRESHOLD_DECIMALS = 12

# substeps used when tracking square roots between two path samples
TRACKING_SUBSTEPS = 4

RADIAL_STEPS = 16


class Sheet(str, Enum):
    PHYSICAL = "physical"
    CONTINUED = "continued"


class Direction(str, Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"


def threshold_key(theta: float) -> float:
    return round(float(theta), THRESHOLD_DECIMALS)


def sqrt_plus(z: complex) -> complex:
    """Square root with Im w > 0 off the nonnegative real axis.

    On the positive real axis the limit from the upper half-plane, +√z, is
    returned regardless of the sign of a zero imaginary part.

    Args:
        z (complex): Argument.

    """
    z = complex(z)
    if z.imag == 0.0 and z.real >= 0.0:
        return complex(math.sqrt(z.real), 0.0)
    return 1j * cmath.sqrt(-z)


def lambda_of_s(s: complex, d: float) -> complex:
    return complex(s) * (2 * d - complex(s))


def s_of_lambda(lam: complex, d: float) -> complex:
    return d - 1j * sqrt_plus(complex(lam) - d * d)


def tau_one(thresholds: Iterable[float]) -> float:
    """Smallest strictly positive threshold, infinity if there is none."""
    positive = [t for t in thresholds if threshold_key(t) > 0]
    return min(positive) if positive else math.inf


@dataclass(frozen=True)
class SpectralPoint:
    """
    A point of the spectral surface in the s-parametrization of a reference
    fiber degree.

    Attributes:
        s (complex): Spectral parameter, λ = s(2d − s).

        k (int): Reference fiber degree.

        d (float): Weight d_k of the reference fiber degree.

        sheets (Tuple[Tuple[float, Sheet], ...]): Sheet records for thresholds other
            than the reference threshold d². Thresholds without a record are on the
            physical sheet.

        window (float): τ₁ of the scenario the point belongs to.

    """

    s: complex
    k: int
    d: float
    sheets: Tuple[Tuple[float, Sheet], ...] = ()
    window: float = math.inf

    @classmethod
    def from_lambda(
        cls, lam: complex, k: int, d: float, window: float = math.inf
    ) -> "SpectralPoint":
        """Physical point above λ; used for middle fiber degrees where s = −i√λ."""
        return cls(s=s_of_lambda(lam, d), k=k, d=d, window=window)

    @property
    def lam(self) -> complex:
        return lambda_of_s(self.s, self.d)

    @property
    def reference_threshold(self) -> float:
        return self.d * self.d

    def sheet(self, threshold: float) -> Sheet:
        key = threshold_key(threshold)
        if key == threshold_key(self.reference_threshold):
            return Sheet.PHYSICAL if complex(self.s).real >= self.d else Sheet.CONTINUED
        for recorded, sheet in self.sheets:
            if recorded == key:
                return sheet
        return Sheet.PHYSICAL

    def with_sheets(self, sheets: Dict[float, Sheet]) -> "SpectralPoint":
        record = tuple(
            sorted(
                (threshold_key(t), sheet)
                for t, sheet in sheets.items()
                if sheet is not Sheet.PHYSICAL
            )
        )
        return replace(self, sheets=record)

    @property
    def is_physical(self) -> bool:
        if self.sheet(self.reference_threshold) is not Sheet.PHYSICAL:
            return False
        return all(sheet is Sheet.PHYSICAL for _, sheet in self.sheets)

    def root(self, threshold: float) -> complex:
        """Branch-consistent sqrt(λ − θ) on this point's sheet for θ."""
        if threshold_key(threshold) == threshold_key(self.reference_threshold):
            # i·root = d − s is analytic in s across the branch point
            return -1j * (self.d - complex(self.s))
        w = sqrt_plus(self.lam - threshold)
        return -w if self.sheet(threshold) is Sheet.CONTINUED else w


def channel_rate(pt: SpectralPoint, channel, direction: Direction) -> complex:
    """Gauged exponential rate of a channel at a spectral point.

    Args:
        pt (SpectralPoint): Spectral point.

        channel (Channel): Channel carrying ν and the weight d.

        direction (Direction): Incoming rates exist only on the reference block
            (ν = 0, fiber degree k).

    """
    direction = Direction(direction)
    if direction is Direction.INCOMING:
        if channel.nu != 0 or channel.s != pt.k:
            raise SpectralError(
                f"Channel {channel.label} is outside the reference block k={pt.k}"
            )
        return complex(pt.s) - pt.d

    return 1j * pt.root(channel.threshold)


def deck_flip(pt: SpectralPoint) -> SpectralPoint:
    """s ↦ 2d − s, flipping the reference-threshold sheet only."""
    if abs(pt.lam) >= pt.window:
        raise SheetError(
            f"|λ| = {abs(pt.lam):.6g} is outside the two-sheeted region τ₁ = {pt.window:.6g}"
        )
    return replace(pt, s=2 * pt.d - complex(pt.s))


def _choose_sheet(lam: complex, threshold: float, previous: complex) -> Tuple[Sheet, complex]:
    w = sqrt_plus(lam - threshold)
    if abs(w - previous) <= abs(-w - previous):
        return Sheet.PHYSICAL, w
    return Sheet.CONTINUED, -w


def continue_path(
    start: SpectralPoint, path: Sequence[complex], thresholds: Iterable[float]
) -> List[SpectralPoint]:
    """Continue the non-reference square roots of start along a sampled s-path.

    Each root is continued by continuity, so a path that crosses the cut of
    sqrt_plus lands on the continued sheet for that threshold.

    Args:
        start (SpectralPoint): Point at the beginning of the path.

        path (Sequence[complex]): Subsequent s values.

        thresholds (Iterable[float]): Thresholds to track; the reference threshold is
            skipped since its root is analytic in s.

    """
    tracked = sorted(
        {
            threshold_key(t)
            for t in thresholds
            if threshold_key(t) != threshold_key(start.reference_threshold)
        }
    )
    roots = {t: start.root(t) for t in tracked}
    previous_s = complex(start.s)
    points = []

    for s in path:
        s = complex(s)
        sheets = {}
        for step in range(1, TRACKING_SUBSTEPS + 1):
            s_sub = previous_s + (s - previous_s) * step / TRACKING_SUBSTEPS
            lam = lambda_of_s(s_sub, start.d)
            for t in tracked:
                sheets[t], roots[t] = _choose_sheet(lam, t, roots[t])
        points.append(replace(start, s=s).with_sheets(sheets))
        previous_s = s

    return points


def circle_points(
    center: SpectralPoint,
    rho: float,
    M: int,
    thresholds: Iterable[float],
    max_winding: int = 2,
) -> Tuple[List[SpectralPoint], int]:
    """Contour points s₀ + ρe^{iθ} on a single analytic branch.

    The branch is reached from the center along the real direction and continued
    around the circle. If the sheets do not close after one turn the circle is
    traversed again until they do.

    Args:
        center (SpectralPoint): Center point, defines the starting sheets.

        rho (float): Radius.

        M (int): Points per turn.

        thresholds (Iterable[float]): Thresholds of the scenario.

        max_winding (int): Largest number of turns before giving up.

    Returns:
        Tuple of the contour points (θ_j = 2πj/M over all turns) and the number of
        turns.

    """
    thresholds = list(thresholds)
    if abs(complex(center.s) - center.d) <= rho and center.d > 0:
        raise BranchPointError(
            f"contour of radius {rho} around s={center.s} encloses the branch point s={center.d}"
        )
    radial = complex(center.s) + rho * np.linspace(0.0, 1.0, RADIAL_STEPS)[1:]
    first = continue_path(center, radial, thresholds)[-1]

    points = [first]
    current = first
    for winding in range(1, max_winding + 1):
        angles = 2 * np.pi * np.arange(1, M + 1) / M
        turn = continue_path(
            current, complex(center.s) + rho * np.exp(1j * angles), thresholds
        )
        closing = turn[-1]
        points.extend(turn[:-1])
        if closing.sheets == first.sheets:
            logger.debug("Contour around %s closes after %d turn(s)", center.s, winding)
            return points, winding
        points.append(closing)
        current = closing

    raise ConvergenceError(
        f"contour around s={center.s} does not close after {max_winding} turns"
    )
