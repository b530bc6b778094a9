"""
Poles of the reference block T₀₀^[k] in (d_k, 2d_k] and their residues. Poles are
located as minima of σ_min of the matching matrix on the real axis; residues are
taken by trapezoidal contour quadrature on one analytic branch of the scattering
data, with a double loop when an open-channel branch point sits at the pole.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from cuspidal.branchcut import circle_points, threshold_key
from cuspidal.cusp import CuspField, inner_product
from cuspidal.errors import (
    ConvergenceError,
    InvariantViolation,
    PSDViolation,
    SpectralError,
    UnresolvedMinimumError,
)
from cuspidal.scatter import (
    EigenForm,
    Scenario,
    field_from_boundary,
    matching_sigma,
    outgoing_rates,
    scatter,
)

logger = logging.getLogger(__name__)

# points of the rectangle sweep along Re s and |Im s|
RECTANGLE_SHAPE = (40, 8)

# scan interval starts this fraction of d_k above the branch point
SCAN_MARGIN = 1e-3


@dataclass(frozen=True)
class ResidueData:
    """
    Residue of the scattering data at a pole s₀.

    Attributes:
        scenario (Scenario): Scenario.

        s0 (float): Pole.

        C (np.ndarray): Residue of all outgoing coefficients, rows × incoming rows.

        order (float): Size of the (s − s₀)⁻² coefficient relative to 1 + ‖C‖.

        convergence (float): Change of C between M/2 and M contour points.

        leak (float): Largest residue entry on an open channel.

        winding (int): Contour turns.

        rho (float): Contour radius.

        M (int): Contour points per turn.

    """

    scenario: Scenario
    s0: float
    C: np.ndarray
    order: float
    convergence: float
    leak: float
    winding: int
    rho: float
    M: int

    @property
    def C_tilde(self) -> np.ndarray:
        """Residue of the reference block T₀₀^[k]."""
        return self.C[self.scenario.incoming_rows]

    @property
    def lam(self) -> float:
        return float(self.s0 * (2 * self.scenario.d - self.s0))

    @property
    def rank_tolerance(self) -> float:
        tolerances = self.scenario.tolerances
        return max(tolerances.rank * float(np.linalg.norm(self.C_tilde, 2)), tolerances.floor)

    @property
    def rank(self) -> int:
        _, image, _ = psd_split(self.C_tilde, self.rank_tolerance)
        return image.shape[1]

    def blocks(self) -> List[dict]:
        """Residue rows of each outgoing channel l against the incoming block."""
        blocks = []
        for l, (channel, rows) in enumerate(zip(self.scenario.channels, self.scenario.rows)):
            C = self.C[rows]
            blocks.append(
                {
                    "l": l,
                    "r": channel.r,
                    "s": channel.s,
                    "nu": channel.nu,
                    "normal": channel.normal,
                    "matrix": {"re": C.real.tolist(), "im": C.imag.tolist()},
                }
            )
        return blocks

    def to_dict(self) -> dict:
        return {
            "s0": self.s0,
            "lambda": self.lam,
            "rank": self.rank,
            "blocks": self.blocks(),
            "orderCertificate": self.order,
            "convergence": self.convergence,
            "leak": self.leak,
            "winding": self.winding,
            "rho": self.rho,
            "M": self.M,
        }


def psd_split(
    C: np.ndarray, rank_tol: float, psd_tol: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel and image of a Hermitian positive semidefinite residue.

    Args:
        C (np.ndarray): Residue matrix.

        rank_tol (float): Eigenvalues above this count as image.

        psd_tol (Optional[float]): Most negative eigenvalue tolerated, unchecked if
            unset.

    Returns:
        Tuple of orthonormal kernel basis, orthonormal image basis (columns) and
        eigenvalues in ascending order.

    """
    C = np.asarray(C, dtype=complex)
    values, vectors = np.linalg.eigh((C + C.conj().T) / 2)
    if psd_tol is not None and values.size and values[0] < -psd_tol:
        raise PSDViolation(
            "residue positive semidefinite", float(values[0]), "negative residue eigenvalue"
        )
    image = values > rank_tol
    return vectors[:, ~image], vectors[:, image], values


def scan_window(scn: Scenario) -> Tuple[float, float]:
    """Real interval searched by pole_scan."""
    d = scn.d
    if d == 0:
        raise SpectralError("the middle fiber degree has no pole window")
    return d + max(SCAN_MARGIN * d, 1e-6), 2 * d


def _sigma(scn: Scenario, s: float) -> float:
    return matching_sigma(scn, scn.point(s))[0]


def _threshold_root(scn: Scenario, grid: np.ndarray, sigma: np.ndarray) -> Optional[float]:
    """Zero of σ_min extrapolated from the first two grid points into the ε-margin."""
    if len(grid) < 2 or not sigma[1] > sigma[0]:
        return None
    root = grid[0] - sigma[0] * (grid[1] - grid[0]) / (sigma[1] - sigma[0])
    margin = grid[0] - scn.d
    if scn.d - margin <= root <= grid[0]:
        return float(root)
    return None


def _scan(scn: Scenario, pool=None) -> Tuple[List[float], List[dict]]:
    lo, hi = scan_window(scn)
    grid = np.linspace(lo, hi, scn.numerics.scan_points)
    mapper = pool.map if pool is not None else map
    sigma = np.array(list(mapper(lambda s: _sigma(scn, s), grid)))
    tolerances = scn.tolerances

    poles, unresolved = [], []
    for j in range(len(grid)):
        left = sigma[j - 1] if j > 0 else math.inf
        right = sigma[j + 1] if j + 1 < len(grid) else math.inf
        if not (sigma[j] <= left and sigma[j] <= right):
            continue
        if j == 0:
            root = _threshold_root(scn, grid, sigma)
            if root is not None:
                logger.warning(
                    "Threshold-adjacent minimum near s=%.10f (σ_min %.3e at the margin), unresolved",
                    root,
                    sigma[0],
                )
                unresolved.append(
                    {
                        "s": root,
                        "bracket": [scn.d, float(grid[0])],
                        "sigma": float(sigma[0]),
                        "reason": "threshold-adjacent",
                    }
                )
                continue
        a = grid[max(j - 1, 0)]
        b = grid[min(j + 1, len(grid) - 1)]
        result = minimize_scalar(
            lambda s: _sigma(scn, s), bounds=(a, b), method="bounded", options={"xatol": 1e-13}
        )
        s_best, sigma_best = float(result.x), float(result.fun)
        if sigma[j] < sigma_best:
            s_best, sigma_best = float(grid[j]), float(sigma[j])
        logger.debug("Scan minimum at s=%.12f with relative σ_min %.3e", s_best, sigma_best)
        if sigma_best < tolerances.pole:
            if not poles or abs(s_best - poles[-1]) > 1e-9:
                poles.append(s_best)
        elif 0 < j < len(grid) - 1 and sigma_best < tolerances.unresolved:
            raise UnresolvedMinimumError((a, b), sigma_best)

    logger.info("Found %d pole(s) of %s in (%.6g, %.6g]", len(poles), scn.name or "scenario", lo, hi)
    return poles, unresolved


def pole_scan(scn: Scenario, pool=None) -> List[float]:
    """Poles of T₀₀^[k] in (d_k, 2d_k], ascending.

    σ_min of the matching matrix is sampled on a uniform real grid, each local
    minimum is refined by bounded Brent minimization, and minima with relative
    σ_min below the pole tolerance are accepted. A zero of σ_min inside the
    ε-margin above d_k is not a pole of the window; scan_report lists it as
    unresolved.

    Args:
        scn (Scenario): Scenario with k ≠ f/2.

        pool: Optional pool with an order-preserving map.

    Raises:
        UnresolvedMinimumError: An interior minimum stays between the pole and the
            unresolved tolerances, the grid is too coarse to separate it.

    """
    return _scan(scn, pool)[0]


def rectangle_floor(scn: Scenario, pool=None) -> Tuple[float, complex]:
    """Smallest relative σ_min over d < Re s < 2d, eps ≤ |Im s| ≤ height.

    Returns:
        Tuple of the floor and the point attaining it.

    """
    numerics = scn.numerics
    d = scn.d
    re = np.linspace(d, 2 * d, RECTANGLE_SHAPE[0] + 2)[1:-1]
    im = np.linspace(numerics.rect_eps, numerics.rect_height, RECTANGLE_SHAPE[1])
    points = [complex(x, sign * y) for x in re for y in im for sign in (1, -1)]
    mapper = pool.map if pool is not None else map
    sigma = np.array(list(mapper(lambda s: _sigma(scn, s), points)))
    j = int(np.argmin(sigma))
    return float(sigma[j]), points[j]


def _residue_radius(scn: Scenario, s0: float, others: Sequence[float]) -> float:
    if scn.numerics.rho is not None:
        return scn.numerics.rho
    d = scn.d
    distances = [abs(s0 - d)] + [abs(s0 - s) for s in others if abs(s0 - s) > 1e-9]
    reference = threshold_key(d * d)
    for theta in {threshold_key(t) for t in scn.thresholds}:
        if theta == reference:
            continue
        root = np.sqrt(complex(d * d - theta))
        for branch in (d + root, d - root):
            distance = abs(s0 - branch)
            if distance > 1e-9:
                distances.append(distance)
    return min(0.05, 0.25 * min(distances))


def _open_rows(scn: Scenario, lam: float) -> np.ndarray:
    reference = scn.incoming_rows
    thresholds = scn.row_values("threshold")
    mask = thresholds <= lam + 1e-12
    mask[reference] = False
    return mask


def contour_residue(
    scn: Scenario,
    s0: float,
    rho: Optional[float] = None,
    M: Optional[int] = None,
    others: Sequence[float] = (),
) -> ResidueData:
    """Residue of the outgoing coefficients at s₀ by contour quadrature.

    C = mean((s_j − s₀)·t(s_j)) over the contour; over a double loop the half-integer
    powers of a branch point at s₀ average out as well. The (s − s₀)⁻² coefficient
    and the change between M/2 and M points are recorded as certificates.

    Args:
        scn (Scenario): Scenario.

        s0 (float): Pole.

        rho (Optional[float]): Radius, a quarter of the distance to the nearest
            singularity (at most 0.05) if unset.

        M (Optional[int]): Points per turn.

        others (Sequence[float]): Other poles that must stay outside the contour.

    Raises:
        ConvergenceError: The order or convergence certificate fails.

        InvariantViolation: The residue has components on open channels.

    """
    M = M if M is not None else scn.numerics.M
    if M % 2:
        raise ValueError("Contour point count must be even")
    rho = rho if rho is not None else _residue_radius(scn, s0, others)
    center = scn.point(s0)
    points, winding = circle_points(center, rho, M, scn.thresholds)
    values = np.array([scatter(scn, pt).t for pt in points])
    offsets = np.array([complex(pt.s) - s0 for pt in points])[:, None, None]

    C = np.mean(offsets * values, axis=0)
    C_half = np.mean((offsets * values)[::2], axis=0)
    second = np.mean(offsets**2 * values, axis=0)

    scale = 1.0 + float(np.linalg.norm(C, 2))
    tolerances = scn.tolerances
    order = float(np.linalg.norm(second, 2)) / scale
    convergence = float(np.linalg.norm(C - C_half, 2)) / scale
    if order > tolerances.order:
        raise ConvergenceError(
            f"pole at s={s0} is not simple, (s − s₀)⁻² coefficient {order:.3e}"
        )
    if convergence > tolerances.order:
        raise ConvergenceError(
            f"residue at s={s0} changed by {convergence:.3e} between {M // 2} and {M} points"
        )

    lam = s0 * (2 * scn.d - s0)
    open_rows = _open_rows(scn, lam)
    leak = float(np.max(np.abs(C[open_rows]))) if np.any(open_rows) else 0.0
    if leak > tolerances.leak * scale:
        raise InvariantViolation(
            "residue vanishes on open channels", leak, f"open-channel residue at s={s0}"
        )

    logger.info(
        "Residue at s=%.10f: ‖C̃‖=%.6e winding=%d order=%.2e", s0,
        float(np.linalg.norm(C[scn.incoming_rows], 2)), winding, order,
    )
    return ResidueData(scn, float(s0), C, order, convergence, leak, winding, rho, M)


def check_residue(res: ResidueData) -> np.ndarray:
    """Hermitian and PSD checks of C̃; returns its eigenvalues."""
    tolerances = res.scenario.tolerances
    C = res.C_tilde
    scale = 1.0 + float(np.linalg.norm(C, 2))
    defect = float(np.linalg.norm(C - C.conj().T, 2))
    if defect > tolerances.hermitian * scale:
        raise InvariantViolation(
            "residue Hermitian", defect, f"‖C̃ − C̃*‖ at s={res.s0}"
        )
    _, _, values = psd_split(C, res.rank_tolerance, tolerances.psd * scale)
    return values


def harmonic_residue(scn: Scenario, rho: Optional[float] = None, M: Optional[int] = None) -> ResidueData:
    """Residue at s = 2d_k, zero when T₀₀^[k] is regular there."""
    return contour_residue(scn, 2 * scn.d, rho=rho, M=M)


def residue_field(res: ResidueData, phi: np.ndarray, interior: bool = True) -> EigenForm:
    """The L² eigenform res_{s₀} E(s, φ) with cusp coefficients C·φ."""
    scn = res.scenario
    pt = scn.point(res.s0)
    phi = np.asarray(phi, dtype=complex)
    coefficients = res.C @ phi
    rates = outgoing_rates(scn, pt)
    cusp = CuspField(coefficients[:, None], rates[:, None])
    return field_from_boundary(scn, pt, cusp, interior=interior)


def form_inner(F: EigenForm, G: EigenForm) -> complex:
    """⟨F, G⟩ over the cavity and the cusp."""
    return F.interior_inner(G) + inner_product(F.cusp, G.cusp)


def residue_pairing_check(res: ResidueData, phi: np.ndarray, psi: np.ndarray) -> float:
    """|⟨res E(φ), res E(ψ)⟩ − ⟨C̃φ, ψ⟩| relative to 1 + ‖C̃‖."""
    F = residue_field(res, phi)
    G = residue_field(res, psi)
    expected = np.vdot(np.asarray(psi, dtype=complex), res.C_tilde @ np.asarray(phi, dtype=complex))
    scale = 1.0 + float(np.linalg.norm(res.C_tilde, 2))
    return float(abs(form_inner(F, G) - expected)) / scale


def scan_report(scn: Scenario, pool=None) -> dict:
    """Certify the off-axis σ_min floor and locate the poles on the real window.

    Raises:
        InvariantViolation: The floor is below the rectangle tolerance.

        UnresolvedMinimumError: See pole_scan.

    """
    floor, where = rectangle_floor(scn, pool)
    if floor < scn.numerics.rect_floor:
        raise InvariantViolation(
            "no poles off the real axis", floor, f"σ_min floor attained at s={where}"
        )
    lo, hi = scan_window(scn)
    poles, unresolved = _scan(scn, pool)
    return {
        "poles": poles,
        "unresolved": unresolved,
        "window": [lo, hi],
        "floor": floor,
        "floorAt": [where.real, where.imag],
    }
