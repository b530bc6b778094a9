"""
Generalized eigenforms E(s, φ): the incoming exponential of the reference block is
matched at u = 0 to outgoing cusp exponentials and the compact part. The outgoing
coefficients, regrouped by channel, are the scattering blocks T₀ν^[l] (tangential)
and S₀γ^[l] (normal).

The matching is written with the Lagrangian pair (X, Y) of the compact part:
E(0) = Xc and E'(0) = Yc give (diag(o)X − Y)c = diag(o − ι)·embed(φ) and
t = Xc − embed(φ). Where X is invertible this is the DtN system
(diag(o) − N)t = (N − ι)·embed(φ).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from cuspidal.branchcut import (
    Direction,
    SpectralPoint,
    channel_rate,
    circle_points,
    deck_flip,
    lambda_of_s,
    tau_one,
    threshold_key,
)
from cuspidal.bundle import (
    BundleData,
    Channel,
    channels_for_degree,
    row_slices,
    star_block,
    star_matrix,
)
from cuspidal.cavity import BoundaryPair, CompactModel, DerivedBoundary
from cuspidal.cusp import CuspField
from cuspidal.errors import (
    BranchPointError,
    DualityError,
    GuardError,
    InvariantViolation,
    PoleProximityError,
    ScenarioError,
    SingularMatchingError,
    SpectralError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """
    Numerical tolerances of a scenario.

    Attributes:
        rank (float): Relative eigenvalue threshold for the ker/im split.

        floor (float): Absolute floor below which a residue counts as zero.

        hermitian (float): Relative Hermitian defect allowed for residues.

        psd (float): Negative eigenvalue allowed for residues.

        order (float): Bound on the (s − s₀)⁻² Laurent coefficient.

        leak (float): Bound on residues of open channels.

        ms (float): Relative Maaß–Selberg defect.

        pairing (float): Residue pairing defect relative to 1 + ‖C̃‖.

        pole (float): Relative σ_min accepting a scan minimum as a pole.

        unresolved (float): Relative σ_min below which a scan minimum that fails the
            pole tolerance is reported as unresolved.

        involution (float): Defect of T₀² = I and T₀ = T₀*.

        membership (float): Decision margin of the classifier.

        identity (float): Functional equation defects.

        condition (float): Relative σ_min below which the matching is singular.

        refuse (float): Distance to a pole below which evaluations are refused.

    """

    rank: float = 1e-8
    floor: float = 1e-9
    hermitian: float = 1e-9
    psd: float = 1e-10
    order: float = 1e-7
    leak: float = 1e-8
    ms: float = 1e-6
    pairing: float = 1e-6
    pole: float = 1e-7
    unresolved: float = 1e-3
    involution: float = 1e-8
    membership: float = 1e-6
    identity: float = 1e-7
    condition: float = 1e-13
    refuse: float = 1e-3

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ScenarioError(f"Tolerance {name} must be positive, got {value}")


@dataclass(frozen=True)
class Numerics:
    """
    Grids and contour settings of a scenario.

    Attributes:
        rho (Optional[float]): Contour radius, chosen per point if unset.

        M (int): Contour points per turn.

        s_grid (Optional[Tuple[float, float, int]]): Real sweep grid.

        imag_grid (Tuple[float, ...]): Imaginary offsets added to the sweep grid.

        tau (Tuple[float, ...]): Maaß–Selberg spectral values.

        r (Tuple[float, ...]): Maaß–Selberg cut-off radii.

        scan_points (int): Real-axis points of the pole scan.

        rect_eps (float): Smallest |Im s| of the rectangle sweep.

        rect_height (float): Largest |Im s| of the rectangle sweep.

        rect_floor (float): σ_min floor asserted on the rectangle.

        seed (int): Seed for randomized checks.

        tolerances (Tolerances): Tolerances.

    """

    rho: Optional[float] = None
    M: int = 64
    s_grid: Optional[Tuple[float, float, int]] = None
    imag_grid: Tuple[float, ...] = ()
    tau: Tuple[float, ...] = ()
    r: Tuple[float, ...] = ()
    scan_points: int = 400
    rect_eps: float = 1e-2
    rect_height: float = 0.3
    rect_floor: float = 1e-6
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)


@dataclass(frozen=True)
class Scenario:
    """
    A form degree of the model together with the incoming block.

    Attributes:
        bundle (BundleData): Bundle data.

        model (CompactModel | DerivedBoundary): Boundary source at u = 0.

        p (int): Form degree.

        k (int): Fiber degree of the incoming block.

        normal (bool): Whether the incoming block is a du∧ block.

        numerics (Numerics): Numerical settings.

        name (str): Scenario name.

        dual_of (Optional[Scenario]): Parent scenario when built by dualize.

        companion_of (Optional[Scenario]): Parent scenario when built as the
            d-image companion.

    """

    bundle: BundleData
    model: object
    p: int
    k: int
    normal: bool = False
    numerics: Numerics = field(default_factory=Numerics)
    name: str = ""
    dual_of: Optional["Scenario"] = None
    companion_of: Optional["Scenario"] = None

    def __post_init__(self):
        if self.incoming_index is None:
            raise ScenarioError(
                f"Incoming block (k={self.k}, normal={self.normal}) is not a channel of degree {self.p}"
            )

    @property
    def channels(self) -> Tuple[Channel, ...]:
        return tuple(self.model.channels)

    @property
    def rows(self) -> List[slice]:
        return row_slices(self.channels)

    @property
    def n(self) -> int:
        return sum(c.mult for c in self.channels)

    @property
    def incoming_index(self) -> Optional[int]:
        for index, c in enumerate(self.channels):
            if c.s == self.k and c.nu == 0 and c.normal == self.normal:
                return index
        return None

    @property
    def incoming(self) -> Channel:
        return self.channels[self.incoming_index]

    @property
    def incoming_rows(self) -> slice:
        return self.rows[self.incoming_index]

    @property
    def m(self) -> int:
        return self.incoming.mult

    @property
    def d(self) -> float:
        return abs(self.bundle.f / 2 - self.k)

    @property
    def is_middle(self) -> bool:
        return 2 * self.k == self.bundle.f

    @property
    def thresholds(self) -> List[float]:
        return [c.threshold for c in self.channels]

    @property
    def tau1(self) -> float:
        return tau_one(self.thresholds)

    @property
    def tolerances(self) -> Tolerances:
        return self.numerics.tolerances

    @property
    def embedding(self) -> np.ndarray:
        E = np.zeros((self.n, self.m), dtype=complex)
        E[self.incoming_rows] = np.eye(self.m)
        return E

    def row_values(self, attribute: str) -> np.ndarray:
        return np.concatenate(
            [np.full(c.mult, getattr(c, attribute), dtype=float) for c in self.channels]
        )

    def reference_rows(self) -> np.ndarray:
        """Mask of rows on the reference threshold d²."""
        key = threshold_key(self.d * self.d)
        return np.concatenate(
            [
                np.full(c.mult, c.nu == 0 and threshold_key(c.threshold) == key)
                for c in self.channels
            ]
        )

    def point(self, s: complex) -> SpectralPoint:
        return SpectralPoint(complex(s), self.k, self.d, window=self.tau1)

    def point_from_lambda(self, lam: complex) -> SpectralPoint:
        return SpectralPoint.from_lambda(lam, self.k, self.d, window=self.tau1)

    def derivative_companion(self) -> "Scenario":
        """Degree p + 1 scenario carrying the d-image of this scenario's eigenforms."""
        _require_tangential_harmonic(self, "derivative companion")
        channels = [replace(c, normal=True) for c in self.channels]
        boundary = DerivedBoundary(self.model, channels)
        return Scenario(
            self.bundle,
            boundary,
            self.p + 1,
            self.k,
            normal=True,
            numerics=self.numerics,
            name=f"d({self.name})",
            companion_of=self,
        )


def make_scenario(
    bundle: BundleData,
    p: int,
    k: int,
    L: float = 1.0,
    V=None,
    left=None,
    vertex=None,
    normal: bool = False,
    normal_channels: bool = True,
    nonzero_nu: bool = False,
    numerics: Optional[Numerics] = None,
    h_max: Optional[float] = None,
    name: str = "",
) -> Scenario:
    """Build a scenario from bundle data and cavity settings.

    Args:
        bundle (BundleData): Bundle data.

        p (int): Form degree.

        k (int): Incoming fiber degree.

        L (float): Cavity length.

        V (Potential): Potential, zero if unset.

        left (BoundaryCondition): Left condition, Dirichlet if unset.

        vertex (BoundaryCondition): Vertex mode, transparent if unset.

        normal (bool): Incoming block is a du∧ block.

        normal_channels (bool): Keep normal channels.

        nonzero_nu (bool): Keep ν > 0 channels.

        numerics (Numerics): Numerical settings.

        h_max (float): Largest integration step.

        name (str): Scenario name.

    """
    if not 0 <= p <= bundle.n + 1:
        raise ScenarioError(f"Degree {p} outside [0, {bundle.n + 1}]")

    channels = channels_for_degree(bundle, p, include_nonzero_nu=nonzero_nu)
    if not normal_channels:
        channels = [c for c in channels if not c.normal]

    kwargs = {"L": L, "channels": tuple(channels), "h_max": h_max}
    if V is not None:
        kwargs["V"] = V
    if left is not None:
        kwargs["left"] = left
    if vertex is not None:
        kwargs["vertex"] = vertex
    return Scenario(
        bundle,
        CompactModel(**kwargs),
        p,
        k,
        normal=normal,
        numerics=numerics if numerics is not None else Numerics(),
        name=name,
    )


@dataclass(frozen=True)
class EigenForm:
    """
    A generalized eigenform or residue field.

    Attributes:
        pt (SpectralPoint): Spectral point.

        cusp (CuspField): Cusp part, one row per matching row.

        a (np.ndarray): Row weights a_c for un-gauged values.

        thresholds (np.ndarray): Row thresholds θ_c.

        grid (Optional[np.ndarray]): Cavity sample points.

        interior (Optional[np.ndarray]): Cavity samples, shape (len(grid), rows).

    """

    pt: SpectralPoint
    cusp: CuspField
    a: np.ndarray
    thresholds: np.ndarray
    grid: Optional[np.ndarray] = None
    interior: Optional[np.ndarray] = None

    def boundary_value(self) -> np.ndarray:
        return self.cusp.evaluate(0.0)

    def interior_norm(self) -> float:
        if self.interior is None:
            return 0.0
        density = np.sum(np.abs(self.interior) ** 2, axis=1)
        return float(simpson(density, x=self.grid))

    def interior_inner(self, other: "EigenForm") -> complex:
        if self.interior is None or other.interior is None:
            return 0j
        density = np.sum(self.interior * np.conj(other.interior), axis=1)
        return complex(simpson(density.real, x=self.grid) + 1j * simpson(density.imag, x=self.grid))


@dataclass(frozen=True)
class ScatteringData:
    """
    Outgoing coefficients of the eigenforms at one spectral point.

    Attributes:
        scenario (Scenario): Scenario.

        pt (SpectralPoint): Spectral point.

        t (np.ndarray): Outgoing coefficients, rows × data columns.

        c (np.ndarray): Coefficients in the normalized boundary basis.

        phi (np.ndarray): Incoming data, incoming rows × columns.

        rates (np.ndarray): Gauged outgoing rate per row.

        incoming_rate (complex): Gauged incoming rate s − d_k.

        pair (BoundaryPair): Boundary pair used for the matching.

        sigma_min (float): Relative smallest singular value of the matching matrix.

        cond (float): Condition number of the matching matrix.

    """

    scenario: Scenario
    pt: SpectralPoint
    t: np.ndarray
    c: np.ndarray
    phi: np.ndarray
    rates: np.ndarray
    incoming_rate: complex
    pair: BoundaryPair
    sigma_min: float
    cond: float

    @property
    def T(self) -> np.ndarray:
        """Reference block T₀₀^[k] on the incoming rows."""
        return self.t[self.scenario.incoming_rows]

    def block(self, channel_index: int) -> np.ndarray:
        return self.t[self.scenario.rows[channel_index]]

    @property
    def T_blocks(self) -> Dict[Tuple[int, float], np.ndarray]:
        return {
            (c.s, c.nu): self.t[sl]
            for c, sl in zip(self.scenario.channels, self.scenario.rows)
            if not c.normal
        }

    @property
    def S_blocks(self) -> Dict[Tuple[int, float], np.ndarray]:
        return {
            (c.s, c.nu): self.t[sl]
            for c, sl in zip(self.scenario.channels, self.scenario.rows)
            if c.normal
        }

    def eigenform(self, x: Optional[np.ndarray] = None) -> EigenForm:
        """Eigenform of the datum φ·x, x a coefficient vector over the data columns."""
        scn = self.scenario
        x = np.ones(self.t.shape[1]) if x is None else np.asarray(x, dtype=complex)
        incoming = np.zeros(scn.n, dtype=complex)
        incoming[scn.incoming_rows] = self.phi @ x
        outgoing = self.t @ x
        rates_in = np.zeros(scn.n, dtype=complex)
        rates_in[scn.incoming_rows] = self.incoming_rate
        cusp = CuspField(
            np.column_stack([incoming, outgoing]), np.column_stack([rates_in, self.rates])
        )
        interior = self.pair.interior(self.c @ x)
        grid, values = interior if interior is not None else (None, None)
        return EigenForm(
            self.pt, cusp, scn.row_values("a"), scn.row_values("threshold"), grid, values
        )


def outgoing_rates(scn: Scenario, pt: SpectralPoint) -> np.ndarray:
    return np.concatenate(
        [np.full(c.mult, channel_rate(pt, c, Direction.OUTGOING)) for c in scn.channels]
    )


def _matching(scn: Scenario, pt: SpectralPoint, samples: bool):
    pair = scn.model.boundary_pair(pt.lam, samples=samples)
    rates = outgoing_rates(scn, pt)
    A = rates[:, None] * pair.X - pair.Y
    return pair, rates, A


def _relative_sigma(A: np.ndarray, rates: np.ndarray) -> Tuple[float, np.ndarray]:
    # √(1 + max|o|²) bounds ‖A‖ since (X, Y) has orthonormal columns
    _, sigma, Vh = np.linalg.svd(A)
    scale = math.sqrt(1.0 + float(np.max(np.abs(rates), initial=0.0)) ** 2)
    return float(sigma[-1]) / scale, Vh[-1].conj()


def matching_sigma(scn: Scenario, pt: SpectralPoint) -> Tuple[float, np.ndarray]:
    """Relative σ_min of the matching matrix and its right singular vector."""
    _, rates, A = _matching(scn, pt, samples=False)
    return _relative_sigma(A, rates)


def scatter(
    scn: Scenario,
    pt: SpectralPoint,
    phi: Optional[np.ndarray] = None,
    interior: bool = False,
) -> ScatteringData:
    """Solve the matching system at pt for the data columns of phi.

    Args:
        scn (Scenario): Scenario.

        pt (SpectralPoint): Spectral point.

        phi (Optional[np.ndarray]): Incoming data, identity if unset.

        interior (bool): Keep the cavity fundamental solution for interior fields.

    """
    phi = np.eye(scn.m, dtype=complex) if phi is None else np.asarray(phi, dtype=complex)
    if phi.ndim == 1:
        phi = phi[:, None]

    samples = interior and getattr(scn.model, "has_interior", False)
    pair, rates, A = _matching(scn, pt, samples)
    iota = channel_rate(pt, scn.incoming, Direction.INCOMING)

    ratio, direction = _relative_sigma(A, rates)
    if ratio < scn.tolerances.condition:
        raise SingularMatchingError(
            f"matching matrix singular at s={pt.s} (relative σ_min = {ratio:.3e})",
            ratio,
            direction,
        )

    embedded = scn.embedding @ phi
    c = np.linalg.solve(A, (rates - iota)[:, None] * embedded)
    t = pair.X @ c - embedded

    lam = pt.lam
    if pt.is_physical and abs(lam.imag) > 1e-12 * max(1.0, abs(lam)):
        growing = rates.real >= 0
        if np.any(growing & np.any(t != 0, axis=1)):
            raise InvariantViolation(
                "physical-sheet L2 property",
                float(np.max(rates.real[growing])),
                f"outgoing rate with nonnegative real part at s={pt.s}",
            )

    return ScatteringData(scn, pt, t, c, phi, rates, iota, pair, ratio, 1.0 / max(ratio, 1e-300))


def assemble(
    scn: Scenario, pt: SpectralPoint, phi: np.ndarray, interior: bool = True
) -> Tuple[ScatteringData, EigenForm]:
    """Generalized eigenform E(s, φ) and its scattering data.

    Args:
        scn (Scenario): Scenario.

        pt (SpectralPoint): Spectral point, not a pole.

        phi (np.ndarray): Nonzero vector over the incoming block.

        interior (bool): Sample the cavity part.

    """
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    if phi.shape != (scn.m,):
        raise ScenarioError(f"Incoming datum must have {scn.m} entries")
    if not np.linalg.norm(phi) > 0:
        raise ScenarioError("Incoming datum must be nonzero")
    data = scatter(scn, pt, phi[:, None], interior=interior)
    return data, data.eigenform(np.ones(1))


def field_from_boundary(
    scn: Scenario, pt: SpectralPoint, cusp: CuspField, interior: bool = True
) -> EigenForm:
    """Attach the cavity solution matching the Cauchy data of a cusp field at u = 0."""
    grid = values = None
    if interior and getattr(scn.model, "has_interior", False):
        pair = scn.model.boundary_pair(pt.lam, samples=True)
        data = np.concatenate([cusp.evaluate(0.0), cusp.derivative(0.0)])
        c, *_ = np.linalg.lstsq(np.vstack([pair.X, pair.Y]), data, rcond=None)
        grid, values = pair.interior(c)
    return EigenForm(pt, cusp, scn.row_values("a"), scn.row_values("threshold"), grid, values)


def eigenform_residual(scn: Scenario, pt: SpectralPoint, E: EigenForm, cusp_extent: float = 10.0) -> Tuple[float, float]:
    """Residual of (−∂² + Θ + V − λ)E on the cusp and in the cavity.

    The cusp residual is evaluated analytically term by term, the cavity residual by
    second-order central differences on the sample grid (points next to potential
    jumps are skipped).

    Returns:
        Tuple of the cusp and cavity residuals.

    """
    lam = pt.lam
    u = np.linspace(0.0, cusp_extent, 101)
    factors = E.thresholds[:, None] - lam - E.cusp.rates**2
    applied = CuspField(E.cusp.coefficients * factors, E.cusp.rates)
    cusp = float(np.max(np.abs(applied.evaluate(u))))

    if E.interior is None:
        return cusp, 0.0

    model = scn.model
    grid, Y = E.grid, E.interior
    h = grid[1] - grid[0]
    inner = np.arange(1, len(grid) - 1)
    V = potential_at(model, grid[inner])
    second = (Y[2:] - 2 * Y[1:-1] + Y[:-2]) / h**2
    shift = np.diag(model.thresholds) - lam * np.eye(model.n)
    applied = -second + np.einsum("jab,jb->ja", V + shift, Y[1:-1])

    keep = np.ones(len(inner), dtype=bool)
    if model.V.is_closed_form:
        for start, _, _ in model.V.segments(model.L, model.n)[1:]:
            keep &= np.abs(grid[inner] - start) > 1.5 * h
    cavity = float(np.max(np.abs(applied[keep]))) if np.any(keep) else 0.0
    return cusp, cavity


def potential_at(model: CompactModel, u: np.ndarray) -> np.ndarray:
    """V at the points u, shape (len(u), n, n)."""
    u = np.asarray(u, dtype=float)
    n = model.n
    if not model.V.is_closed_form:
        return model.V.spline(n)(u)
    out = np.zeros((u.size, n, n), dtype=complex)
    for start, end, value in model.V.segments(model.L, n):
        mask = (u >= start) & (u <= end)
        out[mask] = value
    return out


def selfadjoint_check(scn: Scenario, s: complex, phi: np.ndarray, psi: np.ndarray) -> float:
    """|⟨T(s̄)φ, ψ⟩ − ⟨φ, T(s)ψ⟩| on the reference block."""
    phi = np.asarray(phi, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    try:
        T = scatter(scn, scn.point(s)).T
        T_bar = scatter(scn, scn.point(np.conj(s))).T
    except SingularMatchingError as exc:
        raise PoleProximityError(
            f"s={s} is too close to a pole for the self-adjointness check",
            exc.sigma_min,
            exc.direction,
        ) from exc
    return float(abs(np.vdot(psi, T_bar @ phi) - np.vdot(T @ psi, phi)))


def _check_deck_guard(scn: Scenario):
    reference = scn.reference_rows()
    incoming = np.zeros(scn.n, dtype=bool)
    incoming[scn.incoming_rows] = True
    if np.any(reference & ~incoming):
        extra = [
            c.label
            for c, sl in zip(scn.channels, scn.rows)
            if np.any(reference[sl]) and not np.all(incoming[sl])
        ]
        raise GuardError(
            "deck relation needs every reference-threshold channel in the incoming block, found "
            + ", ".join(extra)
        )


def deck_equation_check(
    scn: Scenario, pt: SpectralPoint, phi: np.ndarray, cusp_extent: float = 5.0
) -> float:
    """max |E(s, φ) − E(2d_k − s, T(s)φ)| over a cusp test grid.

    Both fields share the same Cauchy data at u = 0 when they agree on the cusp, so
    the comparison on [0, cusp_extent] covers the cavity as well.
    """
    _check_deck_guard(scn)
    if abs(complex(pt.s) - pt.d) < 1e-12:
        raise BranchPointError(f"s={pt.s} is the branch point, the deck transform fixes it")

    flipped = deck_flip(pt)
    phi = np.asarray(phi, dtype=complex)
    try:
        first, E1 = assemble(scn, pt, phi, interior=False)
        _, E2 = assemble(scn, flipped, first.T @ phi, interior=False)
    except SingularMatchingError as exc:
        raise PoleProximityError(
            f"s={pt.s} or its deck image is a pole", exc.sigma_min, exc.direction
        ) from exc

    u = np.linspace(0.0, cusp_extent, 51)
    difference = np.abs(E1.cusp.evaluate(u) - E2.cusp.evaluate(u))
    return float(np.max(difference))


def deck_composition_defect(scn: Scenario, s: complex) -> float:
    """‖T(2d_k − s)·T(s) − I‖ on the reference block."""
    _check_deck_guard(scn)
    pt = scn.point(s)
    T = scatter(scn, pt).T
    T_flip = scatter(scn, deck_flip(pt)).T
    return float(np.linalg.norm(T_flip @ T - np.eye(scn.m)))


def _require_tangential_harmonic(scn: Scenario, what: str):
    for c in scn.channels:
        if c.normal or c.nu != 0:
            raise DualityError(f"{what} needs tangential ν=0 channels only, found {c.label}")
    if scn.normal:
        raise DualityError(f"{what} needs a tangential incoming block")


def dualize(scn: Scenario) -> Scenario:
    """Companion scenario in degree n − p obtained from the d-image and the star.

    The channels are the star images of the channels of scn, the incoming block is
    (f − k, tangential), and the boundary relation is the d-image of the parent
    relation relabelled by the star permutation.
    """
    _require_tangential_harmonic(scn, "dualize")
    bundle = scn.bundle
    if not bundle.is_dual_symmetric():
        raise DualityError("bundle violates h[r][s] = h[b−r][f−s]")

    degree = bundle.n - scn.p
    dual_channels = [
        c for c in channels_for_degree(bundle, degree) if not c.normal
    ]
    P = star_matrix(bundle, scn.channels, dual_channels)
    boundary = DerivedBoundary(scn.model, dual_channels, P)
    return Scenario(
        bundle,
        boundary,
        degree,
        bundle.f - scn.k,
        normal=False,
        numerics=scn.numerics,
        name=f"*{scn.name}",
        dual_of=scn,
    )


def star_duality_check(scn: Scenario, s: complex, phi: np.ndarray) -> Optional[float]:
    """Blockwise defect of (a_k − d_k + s)·T_dual(s, ∗φ) = Σ_l (a_l + o_l)·∗T^[l](s, φ).

    Args:
        scn (Scenario): Scenario produced by dualize.

        s (complex): Spectral parameter.

        phi (np.ndarray): Datum over the incoming block of the parent.

    Returns:
        The defect, or None when scn was not produced by dualize.

    """
    parent = scn.dual_of
    if parent is None:
        logger.info("Star duality check is not applicable to %s", scn.name or "scenario")
        return None

    phi = np.asarray(phi, dtype=complex)
    bundle = scn.bundle
    parent_data = scatter(parent, parent.point(s), phi[:, None])
    star_phi = star_block(bundle, parent.incoming) @ phi
    dual_data = scatter(scn, scn.point(s), star_phi[:, None])

    k_factor = parent.incoming.a - parent.d + complex(s)
    lhs = k_factor * dual_data.t[:, 0]
    a = parent.row_values("a")
    P = star_matrix(bundle, parent.channels, scn.channels)
    rhs = P @ ((a + parent_data.rates) * parent_data.t[:, 0])
    return float(np.max(np.abs(lhs - rhs)))


def normal_block_from_tangential(data: ScatteringData) -> Dict[Tuple[int, float], np.ndarray]:
    """Ť^[l] = ((a_l + o_l)/(a_k − d_k + s))·T^[l] for every tangential block."""
    scn = data.scenario
    pt = data.pt
    denominator = scn.incoming.a - pt.d + complex(pt.s)
    if abs(denominator) < 1e-12:
        raise SpectralError(f"a_k − d_k + s vanishes at s={pt.s}")

    blocks = {}
    for c, sl in zip(scn.channels, scn.rows):
        if c.normal:
            continue
        factor = (c.a + channel_rate(pt, c, Direction.OUTGOING)) / denominator
        blocks[(c.s, c.nu)] = factor * data.t[sl]
    return blocks


def branch_distance(scn: Scenario, s: complex) -> float:
    """Distance from s to the nearest square-root branch point of a channel."""
    s = complex(s)
    d = scn.d
    reference = threshold_key(d * d)
    distances = []
    for theta in {threshold_key(t) for t in scn.thresholds}:
        if theta == reference:
            if d > 0:
                distances.append(abs(s - d))
            continue
        root = np.sqrt(complex(d * d - theta))
        distances.extend([abs(s - (d + root)), abs(s - (d - root))])
    return min(distances) if distances else math.inf


def contour_radius(scn: Scenario, s: complex, limit: float = 0.05) -> float:
    if scn.numerics.rho is not None:
        return scn.numerics.rho
    return min(limit, 0.25 * branch_distance(scn, s))


def contour_scatter(
    scn: Scenario, center: SpectralPoint, rho: float, M: int
) -> Tuple[List[SpectralPoint], List[ScatteringData], int]:
    """Scattering data at contour points around center on one analytic branch."""
    points, winding = circle_points(center, rho, M, scn.thresholds)
    data = [scatter(scn, pt) for pt in points]
    return points, data, winding


def t_derivative(
    scn: Scenario,
    s: complex,
    order: int = 1,
    rho: Optional[float] = None,
    M: Optional[int] = None,
    variable: str = "lambda",
    center: Optional[SpectralPoint] = None,
) -> np.ndarray:
    """Derivative of the outgoing coefficients by Cauchy contour quadrature.

    Args:
        scn (Scenario): Scenario.

        s (complex): Center.

        order (int): Derivative order; 0 returns the value.

        rho (Optional[float]): Radius, chosen from the branch-point distance if unset.

        M (Optional[int]): Contour points.

        variable (str): "s" or "lambda"; the λ-derivative is available for order ≤ 1.

        center (Optional[SpectralPoint]): Center point with explicit sheets.

    Returns:
        Matrix of shape rows × incoming multiplicity.

    """
    center = center if center is not None else scn.point(s)
    rho = rho if rho is not None else contour_radius(scn, center.s)
    M = M if M is not None else scn.numerics.M
    points, data, winding = contour_scatter(scn, center, rho, M)
    if winding != 1:
        raise BranchPointError(f"contour around s={center.s} encloses a branch point")

    offsets = np.array([complex(pt.s) - complex(center.s) for pt in points])
    values = np.array([item.t for item in data])

    residue = np.mean(offsets[:, None, None] * values, axis=0)
    scale = 1.0 + float(np.max(np.abs(values)))
    if np.max(np.abs(residue)) > scn.tolerances.identity * scale:
        raise PoleProximityError(
            f"pole inside the contour of radius {rho} around s={center.s}",
            float(np.max(np.abs(residue))),
        )

    angles = np.angle(offsets / rho)
    weights = np.exp(-1j * order * angles)
    derivative = math.factorial(order) / rho**order * np.mean(
        weights[:, None, None] * values, axis=0
    )

    if variable == "s" or order == 0:
        return derivative
    if order != 1:
        raise ValueError("λ-derivatives are available for order ≤ 1")
    dlam_ds = 2 * center.d - 2 * complex(center.s)
    if abs(dlam_ds) < 1e-14:
        raise BranchPointError("dλ/ds vanishes at the branch point")
    return derivative / dlam_ds


@dataclass(frozen=True)
class RegularValue:
    """
    Value of the scattering data at a removable point, by contour mean value.

    Attributes:
        scenario (Scenario): Scenario.

        pt (SpectralPoint): The point.

        t (np.ndarray): Outgoing coefficients at the point.

        winding (int): Turns the contour needed to close.

    """

    scenario: Scenario
    pt: SpectralPoint
    t: np.ndarray
    winding: int

    @property
    def T(self) -> np.ndarray:
        return self.t[self.scenario.incoming_rows]

    def eigenform(self, phi: np.ndarray, interior: bool = True) -> EigenForm:
        scn = self.scenario
        pt = self.pt
        phi = np.asarray(phi, dtype=complex)
        incoming = np.zeros(scn.n, dtype=complex)
        incoming[scn.incoming_rows] = phi
        rates_in = np.zeros(scn.n, dtype=complex)
        rates_in[scn.incoming_rows] = channel_rate(pt, scn.incoming, Direction.INCOMING)
        cusp = CuspField(
            np.column_stack([incoming, self.t @ phi]),
            np.column_stack([rates_in, outgoing_rates(scn, pt)]),
        )
        return field_from_boundary(scn, pt, cusp, interior=interior)


def regular_value(
    scn: Scenario, s0: complex, rho: Optional[float] = None, M: Optional[int] = None
) -> RegularValue:
    """T(s₀) as the mean of T over a circle, valid where s₀ is removable."""
    center = scn.point(s0)
    rho = rho if rho is not None else contour_radius(scn, s0)
    M = M if M is not None else scn.numerics.M
    _, data, winding = contour_scatter(scn, center, rho, M)
    t = np.mean(np.array([item.t for item in data]), axis=0)
    return RegularValue(scn, center, t, winding)


def unitarity_defect(scn: Scenario, tau: float) -> float:
    """‖T_R*T_R − I‖ at real λ = τ for the middle degree, T_R the θ=0 rows."""
    if not scn.is_middle:
        raise SpectralError("unitarity diagnostic applies to the middle fiber degree")
    data = scatter(scn, scn.point_from_lambda(tau))
    T_R = data.t[scn.reference_rows()]
    defect = float(np.linalg.norm(T_R.conj().T @ T_R - np.eye(scn.m)))
    if defect > scn.tolerances.identity:
        logger.warning("Middle-degree unitarity defect %.3e at τ=%s", defect, tau)
    return defect


def sweep(scn: Scenario, s_values: Sequence[complex], pool=None) -> List[tuple]:
    """Rows (Re s, Im s, Re λ, Im λ, blockId, row, col, Re T, Im T, sigma_min, cond).

    Args:
        scn (Scenario): Scenario.

        s_values (Sequence[complex]): Points, evaluated in order.

        pool: Optional pool with an order-preserving map.

    """
    mapper = pool.map if pool is not None else map
    results = list(mapper(lambda s: _sweep_point(scn, s), list(s_values)))
    return [row for rows in results for row in rows]


def _sweep_point(scn: Scenario, s: complex) -> List[tuple]:
    pt = scn.point(s)
    lam = pt.lam
    try:
        data = scatter(scn, pt)
    except SingularMatchingError as exc:
        logger.info("Sweep point s=%s is at a pole", s)
        return [(pt.s.real, pt.s.imag, lam.real, lam.imag, "pole", 0, 0, math.nan, math.nan, exc.sigma_min, math.inf)]

    rows = []
    for c, sl in zip(scn.channels, scn.rows):
        block = data.t[sl]
        for i in range(block.shape[0]):
            for j in range(block.shape[1]):
                rows.append(
                    (
                        pt.s.real,
                        pt.s.imag,
                        lam.real,
                        lam.imag,
                        c.label,
                        i,
                        j,
                        block[i, j].real,
                        block[i, j].imag,
                        data.sigma_min,
                        data.cond,
                    )
                )
    return rows
