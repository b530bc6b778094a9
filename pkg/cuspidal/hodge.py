"""
Cohomological bookkeeping on top of the scattering data: the H± split of the middle
block at s = 0, the restriction image assembled from residues at s = 2d_k, the
singular-value classification Ξ and the signature splitting in middle degree.

Everything here is linear algebra once C̃^[k] and T₀ are known. They can be computed
from scenarios or supplied by hand.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from cuspidal.bundle import BundleData, Channel, star_block
from cuspidal.cusp import interval_norm
from cuspidal.errors import (
    AmbiguousMembershipError,
    DimensionParityError,
    InsufficientDataError,
    InvariantViolation,
    ScenarioError,
)
from cuspidal.residues import contour_residue, harmonic_residue, psd_split, residue_field
from cuspidal.scatter import (
    Scenario,
    Tolerances,
    normal_block_from_tangential,
    outgoing_rates,
    regular_value,
    scatter,
)

logger = logging.getLogger(__name__)

COMPUTED = "computed"
USER_SUPPLIED = "user-supplied"

RESIDUE = "residue"
MIDDLE_VALUE = "middleValue"
VALUE_AT_2D = "valueAt2d"
ZERO = "zero"

ScenarioFactory = Callable[[int, int], Scenario]


@dataclass
class ClassifierInput:
    """
    Scattering data the classification is built from.

    Attributes:
        bundle (BundleData): Bundle data.

        c_tilde (Dict[Tuple[int, int], np.ndarray]): Residue C̃^[k] at s = 2d_k per
            bidegree (r, k) with k < f/2, a matrix over H^{r,k}.

        t_zero (Dict[int, np.ndarray]): T^[f/2](0) per base degree r, f even.

        provenance (str): "computed" or "user-supplied".

        tolerances (Tolerances): Tolerances for the decisions.

    """

    bundle: BundleData
    c_tilde: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    t_zero: Dict[int, np.ndarray] = field(default_factory=dict)
    provenance: str = USER_SUPPLIED
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        bundle = self.bundle
        for (r, k), C in list(self.c_tilde.items()):
            C = np.asarray(C, dtype=complex)
            if 2 * k >= bundle.f:
                raise ScenarioError(f"C̃ given for k={k}, only k < f/2 carries residues")
            h = bundle.dim(r, k)
            if C.shape != (h, h):
                raise ScenarioError(f"C̃ for ({r}, {k}) must be {h}×{h}, got {C.shape}")
            scale = 1.0 + float(np.linalg.norm(C, 2)) if h else 1.0
            if h and np.linalg.norm(C - C.conj().T, 2) > self.tolerances.hermitian * scale:
                raise InvariantViolation("residue Hermitian", float(np.linalg.norm(C - C.conj().T, 2)))
            self.c_tilde[(r, k)] = C

        for r, T in list(self.t_zero.items()):
            T = np.asarray(T, dtype=complex)
            if bundle.f % 2:
                raise ScenarioError("T₀ needs an even fiber dimension")
            h = bundle.dim(r, bundle.f // 2)
            if T.shape != (h, h):
                raise ScenarioError(f"T₀ for r={r} must be {h}×{h}, got {T.shape}")
            check_involution(T, self.tolerances.involution)
            self.t_zero[r] = T


def check_involution(T: np.ndarray, tol: float):
    """‖T² − I‖ and ‖T − T*‖ within tol."""
    if T.size == 0:
        return
    square = float(np.linalg.norm(T @ T - np.eye(T.shape[0]), 2))
    adjoint = float(np.linalg.norm(T - T.conj().T, 2))
    if square > tol:
        raise InvariantViolation("T0 involution", square, "‖T₀² − I‖")
    if adjoint > tol:
        raise InvariantViolation("T0 self-adjoint", adjoint, "‖T₀ − T₀*‖")


def middle_split(T0: np.ndarray, tol: float = 1e-8) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of the ±1 eigenspaces of T₀."""
    T0 = np.asarray(T0, dtype=complex)
    values, vectors = np.linalg.eigh((T0 + T0.conj().T) / 2)
    off = np.minimum(np.abs(values - 1), np.abs(values + 1))
    if values.size and np.max(off) > tol:
        raise InvariantViolation("T0 involution", float(np.max(off)), "eigenvalue off ±1")
    plus = values > 0
    return vectors[:, plus], vectors[:, ~plus]


def _tangential(bundle: BundleData, r: int, k: int) -> Channel:
    return Channel(r, k, 0.0, bundle.dim(r, k), False, bundle.f)


@dataclass(frozen=True)
class ImageBlock:
    """
    One bidegree block 𝒜^{(r,k)} of the restriction image.

    Attributes:
        r (int): Base degree.

        k (int): Fiber degree.

        kind (str): Tag of the nonzero classes of the block.

        basis (np.ndarray): Orthonormal basis of the block in H^{r,k} coordinates.

        complement (np.ndarray): Orthonormal basis of its complement.

    """

    r: int
    k: int
    kind: str
    basis: np.ndarray
    complement: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def h(self) -> int:
        return self.basis.shape[0]


def _rank_tolerance(C: np.ndarray, tolerances: Tolerances) -> float:
    norm = float(np.linalg.norm(C, 2)) if C.size else 0.0
    return max(tolerances.rank * norm, tolerances.floor)


def _image_and_kernel(C: np.ndarray, tolerances: Tolerances) -> Tuple[np.ndarray, np.ndarray]:
    scale = 1.0 + (float(np.linalg.norm(C, 2)) if C.size else 0.0)
    kernel, image, _ = psd_split(C, _rank_tolerance(C, tolerances), tolerances.psd * scale)
    return image, kernel


def _block(inp: ClassifierInput, r: int, k: int, missing: List[Tuple[int, int]]) -> Optional[ImageBlock]:
    bundle = inp.bundle
    h = bundle.dim(r, k)
    empty = np.zeros((h, 0), dtype=complex)
    if h == 0:
        return ImageBlock(r, k, ZERO, empty, empty)

    if 2 * k < bundle.f:
        if (r, k) not in inp.c_tilde:
            missing.append((r, k))
            return None
        image, kernel = _image_and_kernel(inp.c_tilde[(r, k)], inp.tolerances)
        return ImageBlock(r, k, RESIDUE, image, kernel)

    if 2 * k == bundle.f:
        if r not in inp.t_zero:
            missing.append((r, k))
            return None
        plus, minus = middle_split(inp.t_zero[r], inp.tolerances.involution)
        return ImageBlock(r, k, MIDDLE_VALUE, plus, minus)

    partner = (bundle.b - r, bundle.f - k)
    if partner not in inp.c_tilde:
        missing.append((r, k))
        return None
    image, kernel = _image_and_kernel(inp.c_tilde[partner], inp.tolerances)
    S = star_block(bundle, _tangential(bundle, *partner))
    return ImageBlock(r, k, VALUE_AT_2D, S @ kernel, S @ image)


@dataclass(frozen=True)
class RestrictionImage:
    """
    The restriction image 𝒜^p as bidegree blocks.

    Attributes:
        p (int): Degree.

        blocks (List[ImageBlock]): Blocks with h[r][k] ≥ 0 in ascending k.

    """

    p: int
    blocks: List[ImageBlock]

    @property
    def dim(self) -> int:
        return sum(block.dim for block in self.blocks)

    def block(self, k: int) -> ImageBlock:
        for block in self.blocks:
            if block.k == k:
                return block
        raise KeyError(k)


def restriction_image(inp: ClassifierInput, p: int) -> RestrictionImage:
    """Assemble 𝒜^p: im C̃ below the middle, H₊ in the middle, ∗ker C̃ above.

    Raises:
        InsufficientDataError: A required C̃ or T₀ block is missing.

    """
    bundle = inp.bundle
    blocks = []
    missing: List[Tuple[int, int]] = []
    for k in range(bundle.f + 1):
        r = p - k
        if not 0 <= r <= bundle.b:
            continue
        block = _block(inp, r, k, missing)
        if block is not None:
            blocks.append(block)
    if missing:
        raise InsufficientDataError(sorted(missing))
    return RestrictionImage(p, blocks)


def h_inf_dimension(inp: ClassifierInput, p: int) -> int:
    """dim H_inf^p, equal to dim 𝒜^p."""
    if not 0 <= p <= inp.bundle.n + 1:
        return 0
    return restriction_image(inp, p).dim


@dataclass(frozen=True)
class Classification:
    """
    Ξ-tag of one class.

    Attributes:
        tag (str): residue, middleValue, valueAt2d or zero.

        witness (float): Squared projection norm onto the selected subspace.

        field_norm (Optional[float]): Norm of the attached field on [0, 1] of the cusp
            and the cavity.

        closedness (Optional[float]): Largest coefficient of the d-image on the cusp.

    """

    tag: str
    witness: float
    field_norm: Optional[float] = None
    closedness: Optional[float] = None


def xi_classify(inp: ClassifierInput, p: int, k: int, phi: np.ndarray) -> Classification:
    """Decide which singular value represents the class of φ ∈ H^{p−k,k}.

    Raises:
        AmbiguousMembershipError: The projection norm is within the membership
            margin of neither 0 nor 1.

    """
    phi = np.asarray(phi, dtype=complex)
    norm = np.linalg.norm(phi)
    if not norm > 0:
        raise ScenarioError("φ must be nonzero")
    phi = phi / norm

    block = restriction_image(inp, p).block(k)
    if block.h != phi.size:
        raise ScenarioError(f"φ must have {block.h} entries for bidegree ({p - k}, {k})")

    weight = float(np.sum(np.abs(block.basis.conj().T @ phi) ** 2)) if block.dim else 0.0
    tol = inp.tolerances.membership
    if weight > 1 - tol:
        return Classification(block.kind, weight)
    if weight < tol:
        return Classification(ZERO, weight)
    raise AmbiguousMembershipError(
        f"φ has weight {weight:.3e} on the {block.kind} subspace of ({p - k}, {k})"
    )


def adapted_tags(inp: ClassifierInput, p: int, k: int) -> List[str]:
    """Ξ-tags of the adapted basis (block basis followed by its complement)."""
    block = restriction_image(inp, p).block(k)
    basis = np.hstack([block.basis, block.complement])
    return [xi_classify(inp, p, k, basis[:, j]).tag for j in range(basis.shape[1])]


def _closedness(scn: Scenario, pt, phi_coefficients: np.ndarray, t: np.ndarray, incoming_rate: complex) -> float:
    """Largest coefficient of dE on the cusp; normal rows are annihilated by d."""
    a = scn.row_values("a")
    rates = outgoing_rates(scn, pt)
    tangential = np.concatenate([np.full(c.mult, not c.normal) for c in scn.channels])
    outgoing = np.abs((a + rates) * t)[tangential]
    incoming = abs(scn.incoming.a + incoming_rate) * float(np.max(np.abs(phi_coefficients)))
    return float(max(np.max(outgoing, initial=0.0), incoming))


@dataclass
class AttachedClassifier:
    """
    Classifier bound to scattering machinery for field witnesses.

    Attributes:
        inp (ClassifierInput): Classifier input.

        factory (ScenarioFactory): Builds the scenario of degree p with incoming k.

    """

    inp: ClassifierInput
    factory: ScenarioFactory

    def classify(self, p: int, k: int, phi: np.ndarray) -> Classification:
        """Ξ-tag with the field witness and its closedness diagnostic."""
        result = xi_classify(self.inp, p, k, phi)
        phi = np.asarray(phi, dtype=complex) / np.linalg.norm(phi)
        scn = self.factory(p, k)
        f = self.inp.bundle.f

        if 2 * k < f:
            if result.tag == ZERO:
                return result
            res = harmonic_residue(scn)
            E = residue_field(res, phi)
            norm = E.interior_norm() + interval_norm(E.cusp, 0.0, 1.0)
            closed = _closedness(scn, scn.point(res.s0), np.zeros(1), res.C @ phi, 0.0)
            return Classification(result.tag, result.witness, norm, closed)

        s0 = 0.0 if 2 * k == f else 2 * scn.d
        value = regular_value(scn, s0)
        E = value.eigenform(phi)
        norm = E.interior_norm() + interval_norm(E.cusp, 0.0, 1.0)
        rate = complex(value.pt.s) - value.pt.d
        closed = _closedness(scn, value.pt, phi, value.t @ phi, rate)
        return Classification(result.tag, result.witness, norm, closed)


def attach(inp: ClassifierInput, factory: ScenarioFactory) -> AttachedClassifier:
    return AttachedClassifier(inp, factory)


def compute_classifier_input(
    bundle: BundleData, factory: ScenarioFactory, tolerances: Optional[Tolerances] = None
) -> ClassifierInput:
    """C̃^[k] from harmonic residues and T₀ from the regular value at s = 0."""
    c_tilde = {}
    t_zero = {}
    for r in range(bundle.b + 1):
        for k in range(bundle.f + 1):
            if bundle.dim(r, k) == 0 or 2 * k > bundle.f:
                continue
            scn = factory(r + k, k)
            if 2 * k < bundle.f:
                c_tilde[(r, k)] = harmonic_residue(scn).C_tilde
                logger.info("C̃ for (%d, %d) computed", r, k)
            else:
                t_zero[r] = regular_value(scn, 0.0).T
                logger.info("T₀ for r=%d computed", r)

    tolerances = tolerances if tolerances is not None else Tolerances()
    return ClassifierInput(bundle, c_tilde, t_zero, COMPUTED, tolerances)


@dataclass(frozen=True)
class ExactnessResult:
    """
    Outcome of the d-image identity at s = 2d_k.

    Attributes:
        route (str): "value" for k < f/2, "residue" for k > f/2.

        defect (float): Largest entry of the difference.

    """

    route: str
    defect: float


def exactness_check_lower(scn: Scenario, phi: np.ndarray) -> ExactnessResult:
    """dE(s, φ) = (a_k − d_k + s)·E(s, du∧φ) at s = 2d_k, on the coefficient level.

    For k < f/2 the d-image of the outgoing coefficients at 2d_k is compared with the
    normal-incoming companion scenario. For k > f/2 the prefactor vanishes at 2d_k
    and the companion has a simple pole there whose residue is compared instead.

    Raises:
        SingularMatchingError: E(s, φ) has a pole at 2d_k.

    """
    phi = np.asarray(phi, dtype=complex)
    f = scn.bundle.f
    if 2 * scn.k == f:
        raise ScenarioError("the d-image identity at 2d_k needs k ≠ f/2")

    companion = scn.derivative_companion()
    s0 = 2 * scn.d
    data = scatter(scn, scn.point(s0))

    if 2 * scn.k < f:
        blocks = normal_block_from_tangential(data)
        derived = np.vstack([blocks[(c.s, c.nu)] for c in scn.channels])
        expected = scatter(companion, companion.point(s0)).t
        defect = float(np.max(np.abs((derived - expected) @ phi)))
        logger.info("Exactness at 2d_k=%.6g: defect %.3e", s0, defect)
        return ExactnessResult("value", defect)

    a = scn.row_values("a")
    derived = (a + data.rates)[:, None] * data.t
    res = contour_residue(companion, s0)
    defect = float(np.max(np.abs((res.C - derived) @ phi)))
    logger.info("Residue-side exactness at 2d_k=%.6g: defect %.3e", s0, defect)
    return ExactnessResult("residue", defect)


@dataclass(frozen=True)
class SignatureReport:
    """
    Signature splitting in middle degree h = (n + 1)/2.

    Attributes:
        h (int): Middle degree of the total space.

        dims (Dict[int, int]): dim 𝔍^k = rank C̃^[k] per k < f/2.

        w_plus (int): dim W₊.

        w_minus (int): dim W₋.

        eigen_defect (float): Largest ‖τ_Z Q± ∓ Q±‖ over the constructed bases.

    """

    h: int
    dims: Dict[int, int]
    w_plus: int
    w_minus: int
    eigen_defect: float

    @property
    def difference(self) -> int:
        return self.w_plus - self.w_minus

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "dims": {str(k): v for k, v in self.dims.items()},
            "wPlus": self.w_plus,
            "wMinus": self.w_minus,
            "eigenDefect": self.eigen_defect,
            "signatureDifference": self.difference,
        }


def tau_z(bundle: BundleData, h: int, k: int) -> np.ndarray:
    """τ_Z on H^{(h−k,k)} ⊕ H^{(b−h+k,f−k)}, pairing φ with du∧∗φ."""
    source = _tangential(bundle, h - k, k)
    target = _tangential(bundle, bundle.b - h + k, bundle.f - k)
    S1 = star_block(bundle, source)
    S2 = star_block(bundle, target)
    m, q = S1.shape[1], S2.shape[1]
    tau = np.zeros((m + q, m + q), dtype=complex)
    tau[:m, m:] = S2
    tau[m:, :m] = (-1) ** h * S1
    return tau


def signature_check(inp: ClassifierInput) -> SignatureReport:
    """Build W± from im C̃^[k] in middle degree and check τ_Z acts by ±1 on them.

    Raises:
        DimensionParityError: n + 1 is not divisible by 4.

        InsufficientDataError: A C̃ block in middle degree is missing.

    """
    bundle = inp.bundle
    if (bundle.n + 1) % 4:
        raise DimensionParityError(f"total dimension {bundle.n + 1} is not divisible by 4")
    h = (bundle.n + 1) // 2

    dims = {}
    w_plus = w_minus = 0
    defect = 0.0
    missing = []
    for k in range((bundle.f + 1) // 2):
        r = h - k
        if not 0 <= r <= bundle.b or bundle.dim(r, k) == 0:
            continue
        if (r, k) not in inp.c_tilde:
            missing.append((r, k))
            continue
        image, _ = _image_and_kernel(inp.c_tilde[(r, k)], inp.tolerances)
        dims[k] = image.shape[1]
        if not image.shape[1]:
            continue

        tau = tau_z(bundle, h, k)
        S1 = star_block(bundle, _tangential(bundle, r, k))
        for sign in (1, -1):
            Q = np.vstack([image, sign * S1 @ image])
            defect = max(defect, float(np.max(np.abs(tau @ Q - sign * Q))))
            rank = int(np.linalg.matrix_rank(Q))
            if sign > 0:
                w_plus += rank
            else:
                w_minus += rank

    if missing:
        raise InsufficientDataError(missing)
    if w_plus != w_minus:
        raise DimensionParityError(f"dim W₊ = {w_plus} differs from dim W₋ = {w_minus}")
    return SignatureReport(h, dims, w_plus, w_minus, defect)


def classification_report(inp: ClassifierInput) -> dict:
    """Per degree: blocks with dims and adapted-basis tags, dim 𝒜^p, dim H_inf^p."""
    bundle = inp.bundle
    degrees = []
    for p in range(bundle.n + 2):
        image = restriction_image(inp, p)
        blocks = []
        for block in image.blocks:
            blocks.append(
                {
                    "r": block.r,
                    "k": block.k,
                    "h": block.h,
                    "dim": block.dim,
                    "kind": block.kind,
                    "basisTags": adapted_tags(inp, p, block.k) if block.h else [],
                }
            )
        degrees.append(
            {"p": p, "blocks": blocks, "dimAp": image.dim, "dimHinf": h_inf_dimension(inp, p)}
        )

    report = {"provenance": inp.provenance, "degrees": degrees, "signature": None}
    if (bundle.n + 1) % 4 == 0:
        report["signature"] = signature_check(inp).to_dict()
    return report
