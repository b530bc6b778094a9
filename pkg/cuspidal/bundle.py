"""
Data model of the fibration M → B: the fiber-harmonic channel inventory of each
form degree, cohomology dimensions h[r][s] = dim H^r(B, H^s(F)) and the channel
level Hodge star. Dimensions are input data; nothing here is computed from a metric.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cuspidal.errors import DualityError, ScenarioError

logger = logging.getLogger(__name__)

Bidegree = Tuple[int, int]


@dataclass(frozen=True)
class Channel:
    """
    One fiber-harmonic mode of the cusp.

    Attributes:
        r (int): Base degree.

        s (int): Fiber degree.

        nu (float): Eigenvalue of Δ₁,₀, zero for harmonic channels.

        mult (int): Multiplicity.

        normal (bool): True for du∧ components.

        f (int): Fiber dimension, fixes the weight a = f/2 − s.

    """

    r: int
    s: int
    nu: float
    mult: int
    normal: bool
    f: int

    @property
    def a(self) -> float:
        return self.f / 2 - self.s

    @property
    def d(self) -> float:
        return abs(self.a)

    @property
    def threshold(self) -> float:
        return self.nu + self.d * self.d

    @property
    def degree(self) -> int:
        return self.r + self.s + (1 if self.normal else 0)

    @property
    def key(self) -> Tuple[int, float, bool]:
        return (self.s, self.nu, self.normal)

    @property
    def label(self) -> str:
        kind = "S" if self.normal else "T"
        greek = "gamma" if self.normal else "nu"
        return f"{kind}[l={self.s},{greek}={self.nu:g},r={self.r}]"


@dataclass(frozen=True)
class BundleData:
    """
    Cohomological data of the fibration.

    Attributes:
        f (int): Fiber dimension.

        b (int): Base dimension.

        h (Tuple[Tuple[int, ...], ...]): h[r][s] = dim H^r(B, H^s(F)).

        nu_lists (Dict[Bidegree, Tuple[Tuple[float, int], ...]]): Ascending positive
            Δ₁,₀ eigenvalues with multiplicities per bidegree.

        star_signs (Dict[Bidegree, int]): Sign overrides for the channel level star.

        nu_max (Optional[float]): Truncation threshold the nu lists were cut at.

    """

    f: int
    b: int
    h: Tuple[Tuple[int, ...], ...]
    nu_lists: Dict[Bidegree, Tuple[Tuple[float, int], ...]] = field(default_factory=dict)
    star_signs: Dict[Bidegree, int] = field(default_factory=dict)
    nu_max: Optional[float] = None

    def __post_init__(self):
        if self.f < 0 or self.b < 0:
            raise ScenarioError("Bundle dimensions must be nonnegative")

        table = tuple(tuple(int(x) for x in row) for row in self.h)
        object.__setattr__(self, "h", table)

        if len(table) != self.b + 1 or any(len(row) != self.f + 1 for row in table):
            raise ScenarioError(
                f"Cohomology table must have shape ({self.b + 1}, {self.f + 1})"
            )
        if any(x < 0 for row in table for x in row):
            raise ScenarioError("Cohomology dimensions must be nonnegative")

        for bidegree, values in self.nu_lists.items():
            nus = [nu for nu, _ in values]
            if any(nu <= 0 for nu in nus):
                raise ScenarioError(f"Nonpositive eigenvalue in nu list {bidegree}")
            if any(b <= a for a, b in zip(nus, nus[1:])):
                raise ScenarioError(f"Nu list {bidegree} is not strictly ascending")
            if any(int(mult) < 1 for _, mult in values):
                raise ScenarioError(f"Nonpositive multiplicity in nu list {bidegree}")

        for bidegree, sign in self.star_signs.items():
            if sign not in (1, -1):
                raise ScenarioError(f"Star sign for {bidegree} must be +1 or -1")

    @property
    def n(self) -> int:
        return self.b + self.f

    def dim(self, r: int, s: int) -> int:
        if 0 <= r <= self.b and 0 <= s <= self.f:
            return self.h[r][s]
        return 0

    def is_dual_symmetric(self) -> bool:
        return all(
            self.dim(r, s) == self.dim(self.b - r, self.f - s)
            for r in range(self.b + 1)
            for s in range(self.f + 1)
        )


def channels_for_degree(
    bundle: BundleData, p: int, include_nonzero_nu: bool = False
) -> List[Channel]:
    """Fiber-harmonic channels of p-forms on the cusp.

    Tangential channels have r + s = p, normal (du∧) channels r + s = p − 1.
    Ordering is by fiber degree, tangential before normal, then base degree and ν.

    Args:
        bundle (BundleData): Bundle data.

        p (int): Form degree.

        include_nonzero_nu (bool): Include the truncated ν > 0 channels.

    """
    channels = []
    for normal, q in ((False, p), (True, p - 1)):
        for s in range(bundle.f + 1):
            r = q - s
            if not 0 <= r <= bundle.b:
                continue
            if bundle.dim(r, s) > 0:
                channels.append(Channel(r, s, 0.0, bundle.dim(r, s), normal, bundle.f))
            if include_nonzero_nu:
                for nu, mult in bundle.nu_lists.get((r, s), ()):
                    channels.append(Channel(r, s, float(nu), int(mult), normal, bundle.f))

    return sorted(channels, key=lambda c: (c.s, c.normal, c.r, c.nu))


def total_cohomology(bundle: BundleData, p: int) -> int:
    return sum(bundle.dim(r, p - r) for r in range(bundle.b + 1))


def kunneth_table(betti_B: Sequence[int], betti_F: Sequence[int]) -> BundleData:
    """Cohomology table of a trivial product B × F."""
    if len(betti_B) == 0 or len(betti_F) == 0:
        raise ScenarioError("Betti lists must be nonempty")
    h = [[int(x) * int(y) for y in betti_F] for x in betti_B]
    return BundleData(f=len(betti_F) - 1, b=len(betti_B) - 1, h=h)


def row_slices(channels: Sequence[Channel]) -> List[slice]:
    """Row ranges of each channel once multiplicities are expanded."""
    slices = []
    start = 0
    for channel in channels:
        slices.append(slice(start, start + channel.mult))
        start += channel.mult
    return slices


def _double_star_sign(bundle: BundleData, r: int, s: int) -> int:
    q = r + s
    return (-1) ** (q * (bundle.n - q))


def star_sign(bundle: BundleData, r: int, s: int) -> int:
    """Sign of the channel level star on the bidegree (r, s).

    The lexicographically first bidegree of a pair (r, s), (b − r, f − s) carries
    +1 unless overridden; its partner carries the sign forced by ∗∗ = (−1)^{q(n−q)}.
    """
    partner = (bundle.b - r, bundle.f - s)
    first, second = sorted([(r, s), partner])
    forced = _double_star_sign(bundle, *first)

    first_sign = bundle.star_signs.get(first, 1)
    if first == second:
        return first_sign

    if second in bundle.star_signs and first in bundle.star_signs:
        if bundle.star_signs[second] * first_sign != forced:
            raise ScenarioError(
                f"Star signs for {first} and {second} must multiply to {forced}"
            )
    if (r, s) == first:
        return first_sign
    if first not in bundle.star_signs and second in bundle.star_signs:
        return bundle.star_signs[second]
    return forced * first_sign


def star_map(bundle: BundleData, c: Channel) -> Tuple[Channel, int]:
    """Channel level Hodge star (r, s) ↦ (b − r, f − s).

    Args:
        bundle (BundleData): Bundle data.

        c (Channel): Channel to map.

    Returns:
        Tuple of the image channel and its sign. Self-paired bidegrees whose star
        squares to −1 report sign +1; their block is the complex structure returned by
        star_block.

    """
    r, s = bundle.b - c.r, bundle.f - c.s
    if bundle.dim(c.r, c.s) != bundle.dim(r, s):
        raise DualityError(
            f"h[{c.r}][{c.s}] = {bundle.dim(c.r, c.s)} differs from h[{r}][{s}] = {bundle.dim(r, s)}"
        )
    if c.nu != 0:
        partners = dict(bundle.nu_lists.get((r, s), ()))
        if partners.get(c.nu) != c.mult:
            raise DualityError(f"No dual partner for ν={c.nu} at bidegree ({r}, {s})")

    image = Channel(r, s, c.nu, c.mult, c.normal, c.f)
    return image, star_sign(bundle, c.r, c.s)


def star_block(bundle: BundleData, c: Channel) -> np.ndarray:
    """Matrix of the star from the coefficient space of c to that of its image."""
    image, sign = star_map(bundle, c)
    if (image.r, image.s) == (c.r, c.s) and _double_star_sign(bundle, c.r, c.s) < 0:
        if c.mult % 2:
            raise DualityError(
                f"Self-paired bidegree ({c.r}, {c.s}) with ∗∗ = −1 needs even multiplicity"
            )
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        return np.kron(J, np.eye(c.mult // 2))
    return sign * np.eye(c.mult)


def star_matrix(
    bundle: BundleData, source: Sequence[Channel], target: Sequence[Channel]
) -> np.ndarray:
    """Star as a row permutation matrix from the rows of source to those of target."""
    target_slices = {c: sl for c, sl in zip(target, row_slices(target))}
    lookup = {(c.r, c.s, c.nu, c.normal): c for c in target}
    rows = sum(c.mult for c in target)
    cols = sum(c.mult for c in source)
    P = np.zeros((rows, cols), dtype=complex)

    for c, sl in zip(source, row_slices(source)):
        image, _ = star_map(bundle, c)
        match = lookup.get((image.r, image.s, image.nu, image.normal))
        if match is None:
            raise DualityError(f"Star image of {c.label} is not among the target channels")
        P[target_slices[match], sl] = star_block(bundle, c)

    return P
