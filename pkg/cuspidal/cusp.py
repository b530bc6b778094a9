"""
Exact solutions on the cusp half-line [0, ∞). Fields are finite exponential sums
stored in the gauged frame, where every channel operator is −∂² + θ and the L²
pairing is a plain integral of coefficient products.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.integrate import trapezoid

from cuspidal.branchcut import Direction, SpectralPoint, channel_rate, sqrt_plus
from cuspidal.bundle import Channel
from cuspidal.errors import ContinuousSpectrumError, DivergentTail, QuadratureError

logger = logging.getLogger(__name__)

# below this |w|·(u + r) the kernel is evaluated by its Taylor series
KERNEL_SERIES_CUTOFF = 1e-4

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class CuspField:
    """
    Σ coefficient · e^{rate·u} per row, valid on u ≥ 0.

    Attributes:
        coefficients (np.ndarray): Array of shape (rows, terms).

        rates (np.ndarray): Gauged rates, same shape as coefficients.

    """

    coefficients: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=complex))
        rates = np.atleast_2d(np.asarray(self.rates, dtype=complex))
        if coefficients.shape != rates.shape:
            raise ValueError(
                f"Coefficient shape {coefficients.shape} differs from rate shape {rates.shape}"
            )
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "rates", rates)

    @property
    def rows(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, u: ArrayLike, order: int = 0) -> np.ndarray:
        """Values (or u-derivatives) at u, shape (rows,) + shape(u)."""
        u = np.asarray(u, dtype=float)
        exponent = np.multiply.outer(self.rates, u)
        weights = self.coefficients.reshape(self.coefficients.shape + (1,) * u.ndim)
        if order:
            weights = weights * self.rates.reshape(weights.shape) ** order
        return np.sum(weights * np.exp(exponent), axis=1)

    def derivative(self, u: ArrayLike) -> np.ndarray:
        return self.evaluate(u, order=1)

    def ungauged(self, u: ArrayLike, a: np.ndarray) -> np.ndarray:
        """Values with the e^{a_c u} factor of each row restored."""
        u = np.asarray(u, dtype=float)
        a = np.asarray(a, dtype=float).reshape((-1,) + (1,) * u.ndim)
        return self.evaluate(u) * np.exp(a * u)

    @property
    def l2_flags(self) -> np.ndarray:
        active = self.coefficients != 0
        return np.all(~active | (self.rates.real < 0), axis=1)

    def restricted(self, rows) -> "CuspField":
        return CuspField(self.coefficients[rows], self.rates[rows])

    def scaled(self, factors: np.ndarray) -> "CuspField":
        """Multiply each row by a factor."""
        factors = np.asarray(factors, dtype=complex).reshape(-1, 1)
        return CuspField(self.coefficients * factors, self.rates)


def _exp_integral(beta: np.ndarray, a: float, b: float) -> np.ndarray:
    """∫_a^b e^{βu} du elementwise, b may be infinite."""
    beta = np.asarray(beta, dtype=complex)
    if np.isinf(b):
        return -np.exp(beta * a) / beta
    out = np.empty_like(beta)
    small = np.abs(beta) * max(abs(b - a), 1.0) < 1e-300
    out[small] = b - a
    big = ~small
    out[big] = np.exp(beta[big] * a) * np.expm1(beta[big] * (b - a)) / beta[big]
    return out


def inner_product(
    f: CuspField, g: CuspField, start: float = 0.0, stop: float = np.inf
) -> complex:
    """Exact ∫ Σ_rows f(u)·conj(g(u)) du over [start, stop].

    Args:
        f (CuspField): First field.

        g (CuspField): Second field, conjugated.

        start (float): Lower limit.

        stop (float): Upper limit, may be infinite.

    """
    if f.rows != g.rows:
        raise ValueError("Fields have different row counts")

    beta = f.rates[:, :, None] + np.conj(g.rates[:, None, :])
    weight = f.coefficients[:, :, None] * np.conj(g.coefficients[:, None, :])
    active = weight != 0

    if np.isinf(stop):
        divergent = active & (beta.real >= 0)
        if np.any(divergent):
            row = int(np.argwhere(divergent)[0][0])
            raise DivergentTail(
                "square integrability",
                float(np.max(beta.real[divergent])),
                f"rate pair with nonnegative real part on row {row}",
            )

    total = 0j
    # fixed summation order, row by row
    for row in range(f.rows):
        mask = active[row]
        if np.any(mask):
            total += np.sum(weight[row][mask] * _exp_integral(beta[row][mask], start, stop))
    return complex(total)


def l2_norm_tail(field: CuspField, start: float = 0.0) -> float:
    """Closed-form ∫_start^∞ |field|² du."""
    return float(inner_product(field, field, start, np.inf).real)


def interval_norm(field: CuspField, start: float, stop: float) -> float:
    return float(inner_product(field, field, start, stop).real)


def free_solution(c: Channel, pt: SpectralPoint, sign: int) -> CuspField:
    """e_± of a channel, gauged rate ±i·sqrt(λ − θ) on the sheet of pt."""
    rate = channel_rate(pt, c, Direction.OUTGOING)
    if sign < 0:
        rate = -rate
    return CuspField([[1.0]], [[rate]])


def sin_solution(c: Channel, lam: complex) -> CuspField:
    """(e₊ − e₋)/2i: value 0 and derivative sqrt_plus(λ − θ) at u = 0."""
    w = sqrt_plus(lam - c.threshold)
    return CuspField([[0.5 / 1j, -0.5 / 1j]], [[1j * w, -1j * w]])


def wronskian(f: CuspField, g: CuspField, u: ArrayLike) -> np.ndarray:
    return f.evaluate(u) * g.derivative(u) - f.derivative(u) * g.evaluate(u)


def _check_resolvent_set(c: Channel, lam: complex):
    lam = complex(lam)
    if lam.imag == 0.0 and lam.real >= c.threshold:
        raise ContinuousSpectrumError(
            f"λ={lam} lies on the continuous spectrum [{c.threshold}, ∞) of {c.label}"
        )


def resolvent_kernel(
    c: Channel, lam: complex, u: ArrayLike, r: ArrayLike, gauged: bool = False
) -> np.ndarray:
    """Dirichlet resolvent kernel of one cusp channel.

    K(u, r) = (i/2)·e^{a(u+r)}·(e^{i|u−r|w} − e^{i(u+r)w})/w with w = sqrt_plus(λ − θ);
    the gauged kernel drops the e^{a(u+r)} factor and is the Green's function of
    −∂² + θ − λ with a Dirichlet condition at u = 0.

    Args:
        c (Channel): Channel.

        lam (complex): Spectral value off [θ, ∞).

        u (ArrayLike): First argument, u ≥ 0.

        r (ArrayLike): Second argument, r ≥ 0.

        gauged (bool): Drop the e^{a(u+r)} factor.

    """
    _check_resolvent_set(c, lam)
    w = sqrt_plus(complex(lam) - c.threshold)
    u, r = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(r, dtype=float))
    A = np.abs(u - r)
    B = u + r

    kernel = np.empty(u.shape, dtype=complex)
    series = abs(w) * B < KERNEL_SERIES_CUTOFF
    if np.any(series):
        As, Bs = A[series], B[series]
        kernel[series] = (
            (Bs - As) / 2
            - 0.25j * w * (As**2 - Bs**2)
            + w**2 / 12 * (As**3 - Bs**3)
            + 1j * w**3 / 48 * (As**4 - Bs**4)
        )
    exact = ~series
    if np.any(exact):
        kernel[exact] = (
            0.5j * (np.exp(1j * w * A[exact]) - np.exp(1j * w * B[exact])) / w
        )

    if not gauged:
        kernel = kernel * np.exp(c.a * B)
    return kernel if kernel.ndim else complex(kernel)


def apply_resolvent(
    c: Channel, lam: complex, u: np.ndarray, f: np.ndarray
) -> np.ndarray:
    """g(u) = ∫ K(u, r) f(r) dr on a uniform grid by the composite trapezoid rule.

    Args:
        c (Channel): Channel.

        lam (complex): Spectral value off [θ, ∞).

        u (np.ndarray): Uniform grid on [0, U].

        f (np.ndarray): Samples of a function supported in [0, U].

    """
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=complex)
    if u.size < 2:
        raise QuadratureError("Quadrature grid needs at least two points")

    step = u[1] - u[0]
    w = sqrt_plus(complex(lam) - c.threshold)
    if abs(w) > 0 and step >= np.pi / (4 * abs(w)):
        raise QuadratureError(
            f"step {step:.3g} does not resolve the oscillation, need < {np.pi / (4 * abs(w)):.3g}"
        )

    K = resolvent_kernel(c, lam, u[:, None], u[None, :], gauged=True)
    return trapezoid(K * f[None, :], u, axis=1)
