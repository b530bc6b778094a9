"""
Maaß–Selberg relations: the norm of a generalized eigenform truncated at height r
expressed through its scattering data and their λ-derivatives, for real λ = τ in
(0, τ₁). Derivatives come from contour quadrature in s.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cuspidal.branchcut import threshold_key
from cuspidal.cavity import CompactModel
from cuspidal.cusp import inner_product, interval_norm
from cuspidal.errors import InvariantViolation, PoleProximityError, ScenarioError, SpectralError
from cuspidal.scatter import Scenario, assemble, contour_radius, scatter, t_derivative

logger = logging.getLogger(__name__)

TAIL_CUTOFF = 1e-16


@dataclass(frozen=True)
class MSResult:
    """
    One Maaß–Selberg comparison.

    Attributes:
        tau (float): Spectral value.

        r (float): Truncation height.

        lhs (float): Truncated norm.

        rhs (float): Scattering-data side.

        defect (float): |lhs − rhs| / max(|lhs|, 1).

        truncation (float): Truncation bound in the units of defect.

        flux (float): Flux identity defect at the same point.

    """

    tau: float
    r: float
    lhs: float
    rhs: float
    defect: float
    truncation: float
    flux: float

    def row(self) -> tuple:
        return (self.tau, self.r, self.lhs, self.rhs, self.defect, self.truncation)


def _check_point(scn: Scenario, tau: float, poles: Sequence[float] = ()):
    if not isinstance(scn.model, CompactModel):
        raise ScenarioError("Maaß–Selberg relations need a cavity model, not a derived boundary")
    if not 0 < tau < scn.tau1:
        raise SpectralError(f"τ={tau} is outside (0, τ₁ = {scn.tau1})")
    if not scn.is_middle and not tau < scn.d**2:
        raise SpectralError(f"τ={tau} is above the reference threshold {scn.d ** 2}")
    keys = {threshold_key(t) for t in scn.thresholds}
    if threshold_key(tau) in keys:
        raise SpectralError(f"τ={tau} is a threshold")
    for pole in poles:
        lam = pole * (2 * scn.d - pole)
        if abs(tau - lam) < scn.tolerances.refuse:
            raise PoleProximityError(
                f"τ={tau} is within {scn.tolerances.refuse} of the pole λ={lam}", abs(tau - lam)
            )


def _row_masks(scn: Scenario, tau: float):
    theta = scn.row_values("threshold")
    incoming = np.zeros(scn.n, dtype=bool)
    incoming[scn.incoming_rows] = True
    opened = (theta < tau) & ~incoming
    closed = (theta > tau) & ~incoming
    return theta, incoming, opened, closed


def ms_lhs(scn: Scenario, tau: float, r: float, phi: np.ndarray) -> float:
    """‖E(s_τ, φ)‖² over the cavity and the cusp up to height r."""
    phi = np.asarray(phi, dtype=complex)
    _, E = assemble(scn, scn.point_from_lambda(tau), phi, interior=True)
    return E.interior_norm() + interval_norm(E.cusp, 0.0, r)


def ms_rhs(
    scn: Scenario,
    tau: float,
    r: float,
    phi: np.ndarray,
    t: Optional[np.ndarray] = None,
    t_dot: Optional[np.ndarray] = None,
) -> float:
    """Scattering-data side of the truncated norm.

    Away from the middle degree, with κ = s_τ − d_k:
        e^{2κr}/(2κ)‖φ‖² + 2r Re⟨t_I, φ⟩ + 2κ Re⟨ṫ_I, φ⟩ − e^{−2κr}/(2κ)‖t_I‖²
        + Σ_open (r|t|² + 2w Im⟨ṫ, t⟩) − Σ_closed e^{−2μr}/(2μ)|t|²
    and in the middle degree, with w = √τ:
        r(‖φ‖² + ‖t_I‖²) + 2w Im⟨ṫ_I, t_I⟩ + (1/2iw)(e^{2iwr}⟨t_I, φ⟩ − e^{−2iwr}⟨φ, t_I⟩)
        + the same open and closed sums.
    Here ṫ = dt/dλ, w = √(τ − θ) on open rows and μ = √(θ − τ) on closed rows.

    Args:
        scn (Scenario): Scenario.

        tau (float): Spectral value.

        r (float): Truncation height.

        phi (np.ndarray): Incoming datum.

        t (Optional[np.ndarray]): Outgoing coefficients, computed if unset.

        t_dot (Optional[np.ndarray]): Their λ-derivative, computed if unset.

    """
    phi = np.asarray(phi, dtype=complex)
    pt = scn.point_from_lambda(tau)
    if t is None:
        t = scatter(scn, pt, phi[:, None]).t[:, 0]
    if t_dot is None:
        t_dot = t_derivative(scn, pt.s, center=pt) @ phi

    theta, incoming, opened, closed = _row_masks(scn, tau)
    t_in, t_dot_in = t[incoming], t_dot[incoming]

    if scn.is_middle:
        w = math.sqrt(tau)
        phase = np.exp(2j * w * r)
        total = (
            r * (np.vdot(phi, phi).real + np.vdot(t_in, t_in).real)
            + 2 * w * np.vdot(t_in, t_dot_in).imag
            + ((phase * np.vdot(phi, t_in) - np.conj(phase) * np.vdot(t_in, phi)) / (2j * w)).real
        )
    else:
        kappa = complex(pt.s).real - scn.d
        total = (
            math.exp(2 * kappa * r) / (2 * kappa) * np.vdot(phi, phi).real
            + 2 * r * np.vdot(phi, t_in).real
            + 2 * kappa * np.vdot(phi, t_dot_in).real
            - math.exp(-2 * kappa * r) / (2 * kappa) * np.vdot(t_in, t_in).real
        )

    w_open = np.sqrt(tau - theta[opened])
    t_open, t_dot_open = t[opened], t_dot[opened]
    total += r * float(np.sum(np.abs(t_open) ** 2))
    total += 2 * float(np.sum(w_open * (t_dot_open * np.conj(t_open)).imag))

    mu = np.sqrt(theta[closed] - tau)
    decay = np.exp(-2 * mu * r)
    kept = decay >= TAIL_CUTOFF
    total -= float(np.sum(decay[kept] / (2 * mu[kept]) * np.abs(t[closed][kept]) ** 2))
    return float(total)


def truncation_bound(
    scn: Scenario, tau: float, r: float, phi: np.ndarray, t: Optional[np.ndarray] = None
) -> float:
    """Absolute bound on what the closed-channel sum leaves out at (τ, r).

    Two parts: closed rows dropped by ms_rhs because e^{−2μr} < 1e−16, and, when the
    ν lists were cut at ν_max, the estimate e^{−2μr}/(2μ)‖φ‖² for the first channel
    beyond the cut, with μ² = ν_max + d_min² − τ.

    Raises:
        SpectralError: The cut at ν_max lies below τ, so an omitted channel is open.

    """
    phi = np.asarray(phi, dtype=complex)
    if t is None:
        t = scatter(scn, scn.point_from_lambda(tau), phi[:, None]).t[:, 0]
    theta, _, _, closed = _row_masks(scn, tau)
    mu = np.sqrt(theta[closed] - tau)
    decay = np.exp(-2 * mu * r)
    dropped = decay < TAIL_CUTOFF
    bound = float(np.sum(decay[dropped] / (2 * mu[dropped]) * np.abs(t[closed][dropped]) ** 2))

    nu_max = scn.bundle.nu_max
    if nu_max is None:
        return bound
    d_min = float(np.min(scn.row_values("d")))
    gap = nu_max + d_min**2 - tau
    if gap <= 0:
        raise SpectralError(f"ν_max={nu_max} leaves an open channel unmodelled at τ={tau}")
    mu_cut = math.sqrt(gap)
    tail = math.exp(-2 * mu_cut * r)
    if tail >= TAIL_CUTOFF:
        logger.warning(
            "Channel list cut at ν_max=%s leaves a tail e^{-2μr}=%.3e at τ=%s, r=%s",
            nu_max,
            tail,
            tau,
            r,
        )
    return bound + tail / (2 * mu_cut) * float(np.vdot(phi, phi).real)


def flux_defect(scn: Scenario, tau: float, phi: np.ndarray, t: Optional[np.ndarray] = None) -> float:
    """Defect of the real-λ flux identity, relative to ‖φ‖².

    Away from the middle degree 2κ Im⟨t_I, φ⟩ = Σ_open w|t|²; in the middle degree
    w‖φ‖² = w‖t_I‖² + Σ_open w_row|t|².
    """
    phi = np.asarray(phi, dtype=complex)
    pt = scn.point_from_lambda(tau)
    if t is None:
        t = scatter(scn, pt, phi[:, None]).t[:, 0]
    theta, incoming, opened, _ = _row_masks(scn, tau)
    outflow = float(np.sum(np.sqrt(tau - theta[opened]) * np.abs(t[opened]) ** 2))

    if scn.is_middle:
        w = math.sqrt(tau)
        balance = w * (np.vdot(phi, phi).real - np.vdot(t[incoming], t[incoming]).real) - outflow
    else:
        kappa = complex(pt.s).real - scn.d
        balance = 2 * kappa * np.vdot(phi, t[incoming]).imag - outflow
    return float(abs(balance)) / max(float(np.vdot(phi, phi).real), 1e-300)


def verify_ms(
    scn: Scenario, tau: float, r: float, phi: np.ndarray, poles: Sequence[float] = ()
) -> MSResult:
    """Compare both sides of the truncated-norm identity at (τ, r).

    Raises:
        PoleProximityError: τ is too close to a located pole.

        InvariantViolation: The relative defect exceeds the ms tolerance.

    """
    _check_point(scn, tau, poles)
    phi = np.asarray(phi, dtype=complex)
    pt = scn.point_from_lambda(tau)
    rho = contour_radius(scn, pt.s)
    for pole in poles:
        rho = min(rho, 0.25 * abs(complex(pt.s) - pole))
    t = scatter(scn, pt, phi[:, None]).t[:, 0]
    t_dot = t_derivative(scn, pt.s, rho=rho, center=pt) @ phi

    lhs = ms_lhs(scn, tau, r, phi)
    rhs = ms_rhs(scn, tau, r, phi, t=t, t_dot=t_dot)
    scale = max(abs(lhs), 1.0)
    defect = abs(lhs - rhs) / scale
    truncation = truncation_bound(scn, tau, r, phi, t=t) / scale
    flux = flux_defect(scn, tau, phi, t=t)
    logger.debug(
        "MS at τ=%s r=%s: lhs=%.12g rhs=%.12g defect=%.3e truncation=%.3e",
        tau,
        r,
        lhs,
        rhs,
        defect,
        truncation,
    )

    if defect > scn.tolerances.ms + truncation:
        raise InvariantViolation(
            "Maass-Selberg relation", defect, f"relative defect at τ={tau}, r={r}"
        )
    return MSResult(tau, r, lhs, rhs, defect, truncation, flux)


def _boundary_form(terms_f, terms_g, r: float) -> complex:
    """Σ_rows [Ḟ·conj(G') − Ḟ'·conj(G)] at u = r for exponential sums.

    Each argument is a tuple (c, ρ, ċ, ρ̇) of arrays of shape (rows, terms).
    """
    c, rho, c_dot, rho_dot = terms_f
    g, sigma, _, _ = terms_g
    e = np.exp(rho * r)
    F_dot = np.sum((c_dot + c * rho_dot * r) * e, axis=1)
    F_dot_prime = np.sum((c_dot * rho + c * rho_dot + c * rho_dot * rho * r) * e, axis=1)
    G = np.sum(g * np.exp(sigma * r), axis=1)
    G_prime = np.sum(g * sigma * np.exp(sigma * r), axis=1)
    return complex(np.sum(F_dot * np.conj(G_prime) - F_dot_prime * np.conj(G)))


def pairing_identity_defect(
    scn: Scenario, tau: float, r: float, phi: np.ndarray, psi: np.ndarray
) -> float:
    """Polarized truncated-norm identity ⟨E(φ), E(ψ)⟩_r = B(Ė(φ), E(ψ))(r).

    B is the Wronskian-type boundary form at height r; every rate ρ obeys
    ρ² = θ − λ, so dρ/dλ = −1/(2ρ).

    Returns:
        Defect relative to max(|⟨E(φ), E(ψ)⟩_r|, 1).

    """
    _check_point(scn, tau)
    pt = scn.point_from_lambda(tau)
    derivative = t_derivative(scn, pt.s, center=pt)

    def terms(x):
        x = np.asarray(x, dtype=complex)
        _, E = assemble(scn, pt, x, interior=True)
        c = E.cusp.coefficients
        rho = E.cusp.rates
        c_dot = np.zeros_like(c)
        c_dot[:, 1] = derivative @ x
        rho_dot = np.zeros_like(rho)
        active = rho != 0
        rho_dot[active] = -1 / (2 * rho[active])
        return E, (c, rho, c_dot, rho_dot)

    E_phi, terms_phi = terms(phi)
    E_psi, terms_psi = terms(psi)
    direct = E_phi.interior_inner(E_psi)
    direct += inner_product(E_phi.cusp, E_psi.cusp, 0.0, r)
    boundary = _boundary_form(terms_phi, terms_psi, r)
    return float(abs(direct - boundary)) / max(abs(direct), 1.0)
