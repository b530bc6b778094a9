"""
The compact part of the manifold as a matrix Sturm–Liouville cavity on [−L, 0].
Boundary behaviour at u = 0 is carried as a Lagrangian pair (X, Y) = (Y(0), Y'(0))
of a basis of admissible solutions; the DtN map N = Y X⁻¹ is derived from it where
X is invertible.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm, qr
from scipy.optimize import brentq

from cuspidal.bundle import Channel
from cuspidal.errors import CavitySingularError, ConvergenceError, ScenarioError

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 2000

HERMITIAN_TOL = 1e-12

# relative change allowed between the h and h/2 runs of the sampled integrator
HALVING_TOL = 1e-8

CONDITION_LIMIT = 1e12

# relative slack when checking that sampled potentials cover [−L, 0]
GRID_TOL = 1e-9


class PotentialKind(str, Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    PIECEWISE = "piecewise-constant"
    SAMPLES = "samples"


class BoundaryKind(str, Enum):
    TRANSPARENT = "transparent"
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"


def _as_matrix(value, n: int) -> np.ndarray:
    value = np.asarray(value, dtype=complex)
    if value.ndim == 0:
        return value * np.eye(n, dtype=complex)
    if value.shape != (n, n):
        raise ScenarioError(f"Matrix of shape {value.shape} does not match {n} channels")
    return value


def _check_hermitian(matrix: np.ndarray, what: str):
    if matrix.ndim == 0:
        if abs(complex(matrix).imag) > HERMITIAN_TOL:
            raise ScenarioError(f"{what} must be real when given as a scalar")
        return
    if not np.allclose(matrix, np.conj(np.swapaxes(matrix, -1, -2)), atol=HERMITIAN_TOL):
        raise ScenarioError(f"{what} is not Hermitian")


@dataclass(frozen=True)
class Potential:
    """
    Hermitian coupling potential on [−L, 0].

    Attributes:
        kind (PotentialKind): Closed-form tag or sampled.

        pieces (Tuple[Tuple[float, np.ndarray], ...]): (until, value) pairs of a
            piecewise-constant potential; a piece extends from the previous until (or
            −L) to its own until. Values are scalars or matrices.

        grid (Optional[np.ndarray]): Uniform sample grid for sampled potentials.

        samples (Optional[np.ndarray]): Samples of shape (len(grid), n, n).

    """

    kind: PotentialKind
    pieces: Tuple[Tuple[float, np.ndarray], ...] = ()
    grid: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        for _, value in self.pieces:
            _check_hermitian(np.asarray(value, dtype=complex), "Potential")
        if self.samples is not None:
            _check_hermitian(np.asarray(self.samples, dtype=complex), "Potential sample")

    @classmethod
    def zero(cls) -> "Potential":
        return cls(PotentialKind.ZERO, pieces=((0.0, np.asarray(0.0)),))

    @classmethod
    def constant(cls, value) -> "Potential":
        return cls(PotentialKind.CONSTANT, pieces=((0.0, np.asarray(value, dtype=complex)),))

    @classmethod
    def piecewise(cls, pieces: Sequence[Tuple[float, object]]) -> "Potential":
        pieces = tuple(
            (float(until), np.asarray(value, dtype=complex))
            for until, value in sorted(pieces, key=lambda piece: piece[0])
        )
        if not pieces or pieces[-1][0] != 0.0:
            raise ScenarioError("The last piece of a piecewise potential must end at u=0")
        return cls(PotentialKind.PIECEWISE, pieces=pieces)

    @classmethod
    def from_samples(cls, grid: np.ndarray, samples: np.ndarray) -> "Potential":
        grid = np.asarray(grid, dtype=float)
        samples = np.asarray(samples, dtype=complex)
        steps = np.diff(grid)
        if grid.size < 4 or np.any(steps <= 0) or not np.allclose(steps, steps[0]):
            raise ScenarioError("Potential samples need a uniform increasing grid")
        return cls(PotentialKind.SAMPLES, grid=grid, samples=samples)

    @property
    def is_closed_form(self) -> bool:
        return self.kind is not PotentialKind.SAMPLES

    def segments(self, L: float, n: int) -> List[Tuple[float, float, np.ndarray]]:
        """Constant segments (start, end, matrix) covering [−L, 0]."""
        segments = []
        start = -L
        for until, value in self.pieces:
            end = max(min(until, 0.0), -L)
            if end > start:
                segments.append((start, end, _as_matrix(value, n)))
                start = end
        if start < 0.0:
            raise ScenarioError("Piecewise potential does not cover the cavity")
        return segments

    def spline(self, n: int):
        """Callable u ↦ V(u) of shape (len(u), n, n) interpolating the samples."""
        if self.samples.shape[1:] != (n, n):
            raise ScenarioError(
                f"Potential samples of shape {self.samples.shape[1:]} do not match {n} channels"
            )
        real = CubicSpline(self.grid, self.samples.real, axis=0)
        imag = CubicSpline(self.grid, self.samples.imag, axis=0)
        return lambda u: real(u) + 1j * imag(u)


@dataclass(frozen=True)
class BoundaryCondition:
    """
    Boundary condition at u = −L (left) or u = 0 (vertex).

    Attributes:
        kind (BoundaryKind): Condition type.

        value (Optional[np.ndarray]): Hermitian Robin matrix.

    """

    kind: BoundaryKind
    value: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind is BoundaryKind.ROBIN:
            if self.value is None:
                raise ScenarioError("Robin condition needs a matrix")
            _check_hermitian(np.asarray(self.value, dtype=complex), "Robin matrix")

    def pair(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Cauchy data (value, derivative) of a basis of admissible solutions."""
        I = np.eye(n, dtype=complex)
        if self.kind is BoundaryKind.DIRICHLET:
            return np.zeros((n, n), dtype=complex), I
        if self.kind is BoundaryKind.NEUMANN:
            return I, np.zeros((n, n), dtype=complex)
        if self.kind is BoundaryKind.ROBIN:
            return I, _as_matrix(self.value, n)
        raise ScenarioError(f"{self.kind.value} is not a boundary condition with fixed data")


@dataclass(frozen=True)
class Propagation:
    """
    Fundamental solution data of the cavity at one λ.

    Attributes:
        lam (complex): Spectral value.

        Y0 (np.ndarray): Y(0).

        dY0 (np.ndarray): Y'(0).

        grid (Optional[np.ndarray]): Sample points in [−L, 0].

        Y (Optional[np.ndarray]): Y at the sample points, shape (len(grid), n, n).

        error (float): Step-halving error estimate, zero for exact propagation.

    """

    lam: complex
    Y0: np.ndarray
    dY0: np.ndarray
    grid: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    error: float = 0.0


@dataclass(frozen=True)
class DtNMap:
    lam: complex
    N: np.ndarray


@dataclass(frozen=True)
class BoundaryPair:
    """
    Normalized Lagrangian pair at u = 0.

    Attributes:
        X (np.ndarray): Boundary values of the solution basis.

        Y (np.ndarray): Boundary derivatives of the solution basis.

        G (np.ndarray): Normalization, pair = raw pair · G.

        propagation (Optional[Propagation]): Cavity data for interior fields.

    """

    X: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    propagation: Optional[Propagation] = None

    @classmethod
    def normalized(
        cls, X: np.ndarray, Y: np.ndarray, propagation: Optional[Propagation] = None
    ) -> "BoundaryPair":
        n = X.shape[0]
        Q, R = qr(np.vstack([X, Y]), mode="economic")
        return cls(Q[:n], Q[n:], np.linalg.inv(R), propagation)

    def interior(self, c: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Interior samples of the solution with coefficient c in the normalized basis."""
        if self.propagation is None or self.propagation.Y is None:
            return None
        return self.propagation.grid, self.propagation.Y @ (self.G @ c)


@dataclass(frozen=True)
class CompactModel:
    """
    Cavity [−L, 0] with a Hermitian potential.

    Attributes:
        L (float): Cavity length.

        channels (Tuple[Channel, ...]): Channels in matching order.

        V (Potential): Potential.

        left (BoundaryCondition): Condition at u = −L.

        vertex (BoundaryCondition): Junction at u = 0; anything but transparent
            ignores the cavity.

        h_max (Optional[float]): Largest integration step, L/2000 if unset.

    """

    L: float
    channels: Tuple[Channel, ...]
    V: Potential = field(default_factory=Potential.zero)
    left: BoundaryCondition = BoundaryCondition(BoundaryKind.DIRICHLET)
    vertex: BoundaryCondition = BoundaryCondition(BoundaryKind.TRANSPARENT)
    h_max: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.L > 0:
            raise ScenarioError("No positive cavity length L provided")
        if self.left.kind is BoundaryKind.TRANSPARENT:
            raise ScenarioError("The left boundary condition cannot be transparent")
        if self.h_max is not None and not self.h_max > 0:
            raise ScenarioError("hMax must be positive")
        if self.V.grid is not None:
            tol = GRID_TOL * self.L
            if self.V.grid[0] > -self.L + tol or self.V.grid[-1] < -tol:
                raise ScenarioError(
                    f"Potential samples on [{self.V.grid[0]}, {self.V.grid[-1]}] do not cover "
                    f"the cavity [{-self.L}, 0]"
                )

    @property
    def n(self) -> int:
        return sum(c.mult for c in self.channels)

    @property
    def thresholds(self) -> np.ndarray:
        return np.concatenate(
            [np.full(c.mult, c.threshold) for c in self.channels] or [np.zeros(0)]
        )

    @property
    def step(self) -> float:
        h = self.h_max if self.h_max is not None else self.L / DEFAULT_STEPS
        return self.L / math.ceil(self.L / h - 1e-9)

    @property
    def has_interior(self) -> bool:
        return self.vertex.kind is BoundaryKind.TRANSPARENT

    def with_channels(self, channels: Sequence[Channel]) -> "CompactModel":
        return CompactModel(self.L, tuple(channels), self.V, self.left, self.vertex, self.h_max)

    def boundary_pair(self, lam: complex, samples: bool = False) -> BoundaryPair:
        if self.vertex.kind is not BoundaryKind.TRANSPARENT:
            X, Y = self.vertex.pair(self.n)
            return BoundaryPair.normalized(X, Y)
        prop = propagate(self, lam, samples=samples)
        return BoundaryPair.normalized(prop.Y0, prop.dY0, prop)


def _generator(Theta: np.ndarray, V: np.ndarray, lam: complex) -> np.ndarray:
    n = Theta.shape[0]
    A = np.zeros((2 * n, 2 * n), dtype=complex)
    A[:n, n:] = np.eye(n)
    A[n:, :n] = np.diag(Theta) + V - lam * np.eye(n)
    return A


def _propagate_exact(model: CompactModel, lam: complex, samples: bool) -> Propagation:
    n = model.n
    Theta = model.thresholds
    Y, dY = model.left.pair(n)
    Z = np.vstack([Y, dY])
    segments = model.V.segments(model.L, n)
    generators = [_generator(Theta, V, lam) for _, _, V in segments]

    if not samples:
        for (start, end, _), A in zip(segments, generators):
            Z = expm(A * (end - start)) @ Z
        return Propagation(lam, Z[:n], Z[n:])

    steps = round(model.L / model.step)
    grid = np.linspace(-model.L, 0.0, steps + 1)
    values = [Z[:n]]
    cache = {}
    for u0, u1 in zip(grid[:-1], grid[1:]):
        for index, ((start, end, _), A) in enumerate(zip(segments, generators)):
            lo, hi = max(u0, start), min(u1, end)
            if hi - lo <= 1e-15:
                continue
            key = (index, round(hi - lo, 14))
            if key not in cache:
                cache[key] = expm(A * (hi - lo))
            Z = cache[key] @ Z
        values.append(Z[:n])

    return Propagation(lam, Z[:n], Z[n:], grid, np.array(values))


def _rk4(Theta, V_fine, lam, Z, h, stride):
    """Fixed-step RK4 for (Y, Y')' = (Y', (Θ + V − λ)Y); V_fine holds V on a grid of
    spacing h/2 after striding."""
    n = Theta.shape[0]
    shift = np.diag(Theta) - lam * np.eye(n)
    Y, P = Z
    values = [Y]
    steps = (len(V_fine) - 1) // (2 * stride)
    for j in range(steps):
        A0 = shift + V_fine[2 * j * stride]
        Am = shift + V_fine[(2 * j + 1) * stride]
        A1 = shift + V_fine[(2 * j + 2) * stride]
        k1y, k1p = P, A0 @ Y
        k2y, k2p = P + h / 2 * k1p, Am @ (Y + h / 2 * k1y)
        k3y, k3p = P + h / 2 * k2p, Am @ (Y + h / 2 * k2y)
        k4y, k4p = P + h * k3p, A1 @ (Y + h * k3y)
        Y = Y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        P = P + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        values.append(Y)
    return Y, P, values


def _propagate_sampled(model: CompactModel, lam: complex, samples: bool) -> Propagation:
    n = model.n
    Theta = model.thresholds
    steps = round(model.L / model.step)
    h = model.L / steps

    # V on the quarter-step grid serves both the h and h/2 runs
    fine = np.linspace(-model.L, 0.0, 4 * steps + 1)
    V_fine = model.V.spline(n)(fine)

    start = model.left.pair(n)
    Y_h, P_h, values_h = _rk4(Theta, V_fine, lam, start, h, stride=2)
    Y_half, P_half, values = _rk4(Theta, V_fine, lam, start, h / 2, stride=1)

    coarse = np.vstack([Y_h, P_h])
    refined = np.vstack([Y_half, P_half])
    error = np.linalg.norm(refined - coarse) / max(np.linalg.norm(refined), 1e-300)
    logger.debug("Step halving at λ=%s changed the solution by %.3e", lam, error)
    if error > HALVING_TOL:
        raise ConvergenceError(
            f"step halving changed the cavity solution by {error:.3e} at λ={lam}"
        )

    Z = (16 * refined - coarse) / 15
    if not samples:
        return Propagation(lam, Z[:n], Z[n:], error=error)

    # same fourth-order extrapolation on every coarse grid point
    Y = (16 * np.array(values[::2]) - np.array(values_h)) / 15
    grid = np.linspace(-model.L, 0.0, steps + 1)
    return Propagation(lam, Z[:n], Z[n:], grid, Y, error)


def propagate(model: CompactModel, lam: complex, samples: bool = False) -> Propagation:
    """Integrate Y'' = (Θ + V − λ)Y from −L to 0.

    Initial data encode the left boundary condition: Dirichlet Y = 0, Y' = I;
    Neumann Y = I, Y' = 0; Robin Y = I, Y' = R. Closed-form potentials are
    propagated exactly with segment transfer matrices, sampled potentials with
    fixed-step RK4 and a step-halving check.

    Args:
        model (CompactModel): Cavity model.

        lam (complex): Spectral value.

        samples (bool): Also return Y on the integration grid.

    """
    lam = complex(lam)
    if model.V.is_closed_form:
        return _propagate_exact(model, lam, samples)
    return _propagate_sampled(model, lam, samples)


def _checked_inverse_basis(prop: Propagation) -> None:
    cond = np.linalg.cond(prop.Y0)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise CavitySingularError(
            f"Y(0) has condition number {cond:.3e} at λ={prop.lam}, perturb λ"
        )


def dtn(model: CompactModel, lam: complex) -> DtNMap:
    """Dirichlet-to-Neumann map N = Y'(0)·Y(0)⁻¹ of the cavity."""
    prop = propagate(model, lam)
    _checked_inverse_basis(prop)
    N = np.linalg.solve(prop.Y0.T, prop.dY0.T).T
    return DtNMap(complex(lam), N)


def interior_field(
    model: CompactModel, lam: complex, boundary_value: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Left-BC solution with the given value at u = 0, sampled on the cavity grid.

    Returns:
        Tuple of the grid and the samples, shape (len(grid),) + shape(boundary_value).

    """
    prop = propagate(model, lam, samples=True)
    _checked_inverse_basis(prop)
    c = np.linalg.solve(prop.Y0, np.asarray(boundary_value, dtype=complex))
    return prop.grid, prop.Y @ c


class DerivedBoundary:
    """
    Boundary relation of the d-image of a parent boundary, optionally relabelled by a
    signed channel permutation.

    The d-image F = E' + aE of a cusp solution has Cauchy data F(0) = aX + Y and
    F'(0) = aY + (Θ − λ)X at u = 0⁺, where (X, Y) is the parent pair.

    Attributes:
        parent: Object with boundary_pair(lam) and channels.

        channels (Tuple[Channel, ...]): Channels of the derived boundary.

        permutation (np.ndarray): Rows of the parent to rows of the derived channels.

    """

    has_interior = False

    def __init__(self, parent, channels: Sequence[Channel], permutation: Optional[np.ndarray] = None):
        self.parent = parent
        self.channels = tuple(channels)
        self._a = np.concatenate([np.full(c.mult, c.a) for c in parent.channels])
        self._theta = np.concatenate(
            [np.full(c.mult, c.threshold) for c in parent.channels]
        )
        self.permutation = (
            np.eye(self._a.size, dtype=complex) if permutation is None else permutation
        )
        if self.permutation.shape != (self.n, self._a.size):
            raise ScenarioError("Permutation does not map parent rows to derived rows")

    @property
    def n(self) -> int:
        return sum(c.mult for c in self.channels)

    @property
    def thresholds(self) -> np.ndarray:
        return np.concatenate([np.full(c.mult, c.threshold) for c in self.channels])

    def boundary_pair(self, lam: complex, samples: bool = False) -> BoundaryPair:
        pair = self.parent.boundary_pair(lam)
        a = self._a[:, None]
        X = a * pair.X + pair.Y
        Y = a * pair.Y + (self._theta[:, None] - complex(lam)) * pair.X
        return BoundaryPair.normalized(self.permutation @ X, self.permutation @ Y)


def tuned_well_depth(d: float, L: float, s0: float) -> float:
    """Constant potential value placing a single-channel pole at s₀ ∈ (d, 2d].

    With a Dirichlet left condition the cavity solution is sin(q(u + L)) with
    q² = λ − θ − V, and the pole condition q·cot(qL) = d − s₀ is solved on the first
    branch qL ∈ (π/2, π).

    Args:
        d (float): Channel weight, threshold d².

        L (float): Cavity length.

        s0 (float): Requested pole.

    """
    if not d < s0 <= 2 * d:
        raise ScenarioError(f"Pole {s0} is outside the window ({d}, {2 * d}]")
    lam0 = s0 * (2 * d - s0)
    target = d - s0

    def mismatch(q):
        return q / math.tan(q * L) - target

    eps = 1e-12
    q = brentq(mismatch, math.pi / (2 * L) + eps, math.pi / L - eps, xtol=1e-15, rtol=1e-15)
    return -(q * q + d * d - lam0)


def random_hermitian_potential(
    n: int, L: float, seed: int, scale: float = 0.3, pieces: int = 4
) -> Potential:
    """Piecewise-constant Hermitian potential drawn from a seeded generator."""
    rng = np.random.default_rng(seed)
    values = []
    for index in range(pieces):
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        values.append((-L + L * (index + 1) / pieces, scale * (A + A.conj().T) / 2))
    values[-1] = (0.0, values[-1][1])
    return Potential.piecewise(values)


def potential_from_csv(path: str) -> Potential:
    """Read a sampled potential: header row, then u followed by column-major
    entries with real and imaginary parts interleaved."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    entries = (data.shape[1] - 1) // 2
    n = int(round(math.sqrt(entries)))
    if n * n != entries or data.shape[1] != 2 * entries + 1:
        raise ScenarioError(f"{path}: {data.shape[1]} columns do not form a square matrix stream")

    samples = np.empty((data.shape[0], n, n), dtype=complex)
    for j in range(entries):
        samples[:, j % n, j // n] = data[:, 1 + 2 * j] + 1j * data[:, 2 + 2 * j]
    return Potential.from_samples(data[:, 0], samples)
