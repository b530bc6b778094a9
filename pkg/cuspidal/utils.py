import copy
import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from cuspidal.bundle import BundleData, kunneth_table
from cuspidal.cavity import (
    BoundaryCondition,
    BoundaryKind,
    Potential,
    potential_from_csv,
    random_hermitian_potential,
    tuned_well_depth,
)
from cuspidal.errors import ScenarioError
from cuspidal.scatter import Numerics, Scenario, Tolerances, make_scenario

logger = logging.getLogger(__name__)

STAGES = ["sweep", "scan", "residues", "ms", "classify"]

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")


def load_document(scenario_file) -> dict:
    """Parse a YAML or JSON scenario document from an open file."""
    try:
        document = yaml.safe_load(scenario_file)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"Invalid scenario file: {exc}") from exc

    if not isinstance(document, (dict,)):
        raise ScenarioError("Invalid scenario file, expected a mapping at the top level.")
    return document


def resolve_scenario(name_or_path: str) -> str:
    """Path of a scenario given by path or by built-in name."""
    if os.path.isfile(name_or_path):
        return name_or_path
    builtin = os.path.join(SCENARIO_DIR, f"{name_or_path}.yml")
    if os.path.isfile(builtin):
        return builtin
    raise ScenarioError(f"No scenario file or built-in scenario named {name_or_path}")


def builtin_scenarios() -> List[str]:
    return sorted(name[:-4] for name in os.listdir(SCENARIO_DIR) if name.endswith(".yml"))


def parse_matrix(value, name: str) -> np.ndarray:
    """Scalar, nested list of reals, or {re, im} pair of nested lists."""
    if isinstance(value, dict):
        if "re" not in value:
            raise ScenarioError(f"No re part provided for {name}")
        re = np.asarray(value["re"], dtype=float)
        im = np.asarray(value.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise ScenarioError(f"Real and imaginary parts of {name} differ in shape")
        matrix = re + 1j * im
    else:
        try:
            matrix = np.asarray(value, dtype=complex)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"Could not read {name} as a matrix") from exc

    if matrix.ndim not in (0, 2) or (matrix.ndim == 2 and matrix.shape[0] != matrix.shape[1]):
        raise ScenarioError(f"{name} must be a scalar or a square matrix")
    return matrix


def _bidegree(key: str, name: str) -> Tuple[int, int]:
    try:
        r, s = (int(part) for part in str(key).split(","))
    except ValueError as exc:
        raise ScenarioError(f"{name} key {key} is not of the form 'r,s'") from exc
    return r, s


def bundle_from_config(config: dict) -> BundleData:
    if not isinstance(config, dict):
        raise ScenarioError("No bundle provided for scenario")

    if "kunneth" in config:
        kunneth = config["kunneth"]
        base = kunneth.get("base")
        fiber = kunneth.get("fiber")
        if base is None or fiber is None:
            raise ScenarioError("No base or fiber Betti numbers provided for kunneth")
        bundle = kunneth_table(base, fiber)
        f, b, h = bundle.f, bundle.b, bundle.h
    else:
        for key in ("f", "b", "h"):
            if key not in config:
                raise ScenarioError(f"No {key} provided for bundle")
        f, b, h = int(config["f"]), int(config["b"]), config["h"]

    nu_lists = {
        _bidegree(key, "nuLists"): tuple((float(nu), int(mult)) for nu, mult in values)
        for key, values in (config.get("nuLists") or {}).items()
    }
    nu_max = config.get("nuMax")
    if nu_max is not None:
        nu_lists = {
            key: tuple((nu, mult) for nu, mult in values if nu <= nu_max)
            for key, values in nu_lists.items()
        }
    star_signs = {
        _bidegree(key, "starSigns"): int(sign)
        for key, sign in (config.get("starSigns") or {}).items()
    }
    bundle = BundleData(f, b, h, nu_lists, star_signs, nu_max)
    if not bundle.is_dual_symmetric():
        raise ScenarioError("Bundle h fails the duality symmetry h[r][s] = h[b−r][f−s]")
    return bundle


def boundary_from_config(config: Optional[dict], default: BoundaryKind, name: str) -> BoundaryCondition:
    if config is None:
        return BoundaryCondition(default)
    kind = config.get("kind")
    if not kind:
        raise ScenarioError(f"No kind provided for {name}")
    try:
        kind = BoundaryKind(kind)
    except ValueError as exc:
        raise ScenarioError(f"Unknown {name} kind {kind}") from exc
    if kind is BoundaryKind.ROBIN:
        if "value" not in config:
            raise ScenarioError(f"No value provided for robin {name}")
        return BoundaryCondition(kind, parse_matrix(config["value"], f"{name} value"))
    return BoundaryCondition(kind)


def potential_from_config(
    config: Optional[dict], n: int, L: float, d: float, base_dir: str
) -> Potential:
    """Potential of the cavity; n is the channel count of the scenario being built."""
    if config is None:
        return Potential.zero()
    kind = config.get("kind")
    if not kind:
        raise ScenarioError("No kind provided for V")

    if kind == "zero":
        return Potential.zero()
    if kind == "constant":
        if "value" not in config:
            raise ScenarioError("No value provided for constant V")
        return Potential.constant(parse_matrix(config["value"], "V"))
    if kind == "piecewise-constant":
        pieces = config.get("pieces")
        if not pieces:
            raise ScenarioError("No pieces provided for piecewise-constant V")
        for piece in pieces:
            if "until" not in piece or "value" not in piece:
                raise ScenarioError("No until or value provided for a V piece")
        return Potential.piecewise(
            [(piece["until"], parse_matrix(piece["value"], "V piece")) for piece in pieces]
        )
    if kind == "samples":
        if "file" not in config:
            raise ScenarioError("No file provided for sampled V")
        return potential_from_csv(os.path.join(base_dir, config["file"]))
    if kind == "random-hermitian":
        return random_hermitian_potential(
            n,
            L,
            int(config.get("seed", 0)),
            float(config.get("scale", 0.3)),
            int(config.get("pieces", 4)),
        )
    if kind == "tuned-well":
        if "pole" not in config:
            raise ScenarioError("No pole provided for tuned-well V")
        return Potential.constant(tuned_well_depth(d, L, float(config["pole"])))
    raise ScenarioError(f"Unknown potential kind {kind}")


def parse_grid(text: str) -> Tuple[float, float, int]:
    """'a:b:n' to (a, b, n)."""
    try:
        a, b, n = str(text).split(":")
        grid = (float(a), float(b), int(n))
    except ValueError as exc:
        raise ScenarioError(f"Grid {text} is not of the form a:b:n") from exc
    if grid[2] < 1 or not grid[0] <= grid[1]:
        raise ScenarioError(f"Grid {text} needs a ≤ b and n ≥ 1")
    return grid


def numerics_from_config(config: Optional[dict]) -> Tuple[Numerics, Optional[float]]:
    """Numerics and the integration step hMax."""
    config = config or {}
    contour = config.get("contour") or {}
    rectangle = config.get("rectangle") or {}
    tolerances = config.get("tolerances") or {}

    names = {field_name for field_name in Tolerances.__dataclass_fields__}
    unknown = set(tolerances) - names
    if unknown:
        raise ScenarioError(f"Unknown tolerances {sorted(unknown)}")
    try:
        tolerances = Tolerances(**{key: float(value) for key, value in tolerances.items()})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"Invalid tolerances: {exc}") from exc

    M = int(contour.get("M", 64))
    if M < 4 or M % 2:
        raise ScenarioError("contour M must be an even integer ≥ 4")
    rho = contour.get("rho")
    if rho is not None and not float(rho) > 0:
        raise ScenarioError("contour rho must be positive")

    s_grid = parse_grid(config["sGrid"]) if config.get("sGrid") else None
    numerics = Numerics(
        rho=float(rho) if rho is not None else None,
        M=M,
        s_grid=s_grid,
        imag_grid=tuple(float(x) for x in config.get("imagGrid", ())),
        tau=tuple(float(x) for x in config.get("tau", ())),
        r=tuple(float(x) for x in config.get("r", ())),
        scan_points=int(config.get("scanPoints", 400)),
        rect_eps=float(rectangle.get("eps", 1e-2)),
        rect_height=float(rectangle.get("height", 0.3)),
        rect_floor=float(rectangle.get("floor", 1e-6)),
        seed=int(config.get("seed", 0)),
        tolerances=tolerances,
    )
    if numerics.scan_points < 3:
        raise ScenarioError("scanPoints must be at least 3")
    h_max = config.get("hMax")
    if h_max is not None and not float(h_max) > 0:
        raise ScenarioError("hMax must be positive")
    return numerics, float(h_max) if h_max is not None else None


@dataclass
class ScenarioConfig:
    """
    Validated scenario document.

    Attributes:
        name (str): Scenario name.

        bundle (BundleData): Bundle data.

        model (dict): Raw model section, rebuilt per degree.

        degree (int): Form degree p.

        k (int): Incoming fiber degree.

        normal (bool): Incoming block is a du∧ block.

        normal_channels (bool): Keep normal channels.

        nonzero_nu (bool): Keep ν > 0 channels.

        numerics (Numerics): Numerical settings.

        h_max (Optional[float]): Integration step.

        stages (List[str]): Enabled stages in pipeline order.

        document (dict): The parsed document.

        base_dir (str): Directory relative file references are resolved against.

    """

    name: str
    bundle: BundleData
    model: dict
    degree: int
    k: int
    normal: bool
    normal_channels: bool
    nonzero_nu: bool
    numerics: Numerics
    h_max: Optional[float]
    stages: List[str]
    document: dict = field(repr=False, default_factory=dict)
    base_dir: str = "."

    def build(self, p: int, k: int, normal: bool = False) -> Scenario:
        """Scenario of degree p with incoming block k sharing this cavity."""
        L = self.model.get("L")
        if L is None:
            raise ScenarioError("No L provided for model")
        L = float(L)
        if not L > 0:
            raise ScenarioError("No positive cavity length L provided")

        layout = make_scenario(
            self.bundle,
            p,
            k,
            L=L,
            normal=normal,
            normal_channels=self.normal_channels,
            nonzero_nu=self.nonzero_nu,
            numerics=self.numerics,
            h_max=self.h_max,
            name=self.name,
        )
        V = potential_from_config(self.model.get("V"), layout.n, L, layout.d, self.base_dir)
        return make_scenario(
            self.bundle,
            p,
            k,
            L=L,
            V=V,
            left=boundary_from_config(self.model.get("leftBC"), BoundaryKind.DIRICHLET, "leftBC"),
            vertex=boundary_from_config(
                self.model.get("vertex"), BoundaryKind.TRANSPARENT, "vertex"
            ),
            normal=normal,
            normal_channels=self.normal_channels,
            nonzero_nu=self.nonzero_nu,
            numerics=self.numerics,
            h_max=self.h_max,
            name=self.name,
        )

    @property
    def scenario(self) -> Scenario:
        return self.build(self.degree, self.k, self.normal)

    def factory(self, p: int, k: int) -> Scenario:
        return self.build(p, k)

    @property
    def digest(self) -> str:
        return document_hash(self.document)

    def with_overrides(
        self,
        k: Optional[int] = None,
        s_grid: Optional[str] = None,
        tau: Sequence[float] = (),
        r: Sequence[float] = (),
        contour_radius: Optional[float] = None,
    ) -> "ScenarioConfig":
        """Copy with command line overrides; k changes the document hash, grids do not."""
        document = copy.deepcopy(self.document)
        changes = {}
        if s_grid is not None:
            changes["s_grid"] = parse_grid(s_grid)
        if tau:
            changes["tau"] = tuple(float(x) for x in tau)
        if r:
            changes["r"] = tuple(float(x) for x in r)
        if contour_radius is not None:
            if not contour_radius > 0:
                raise ScenarioError("contour radius must be positive")
            changes["rho"] = float(contour_radius)
        config = replace(
            self, numerics=replace(self.numerics, **changes), document=document
        )
        if k is not None:
            document.setdefault("incoming", {})["k"] = int(k)
            config.k = int(k)
            config.scenario
        return config


def document_hash(document: dict) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def scenario_from_yaml(scenario_file, base_dir: str = ".") -> ScenarioConfig:
    """Load and validate a scenario document.

    Args:
        scenario_file: Open file with the YAML or JSON document.

        base_dir (str): Directory for relative file references.

    """
    document = load_document(scenario_file)

    for key in ("bundle", "model", "degree", "incoming"):
        if key not in document:
            raise ScenarioError(f"No {key} provided for scenario")

    bundle = bundle_from_config(document["bundle"])
    model = document["model"]
    if not isinstance(model, dict):
        raise ScenarioError("No model provided for scenario")

    degree = int(document["degree"])
    if not 0 <= degree <= bundle.n + 1:
        raise ScenarioError(f"Degree {degree} outside [0, {bundle.n + 1}]")

    incoming = document["incoming"] or {}
    if "k" not in incoming:
        raise ScenarioError("No k provided for incoming")
    channels = document.get("channels") or {}

    stages = document.get("stages", STAGES)
    unknown = [stage for stage in stages if stage not in STAGES]
    if unknown:
        raise ScenarioError(f"Unknown stages {unknown}")

    numerics, h_max = numerics_from_config(document.get("numerics"))
    config = ScenarioConfig(
        name=str(document.get("name", "scenario")),
        bundle=bundle,
        model=model,
        degree=degree,
        k=int(incoming["k"]),
        normal=bool(incoming.get("normal", False)),
        normal_channels=bool(channels.get("normal", True)),
        nonzero_nu=bool(channels.get("nonzeroNu", False)),
        numerics=numerics,
        h_max=h_max,
        stages=[stage for stage in STAGES if stage in stages],
        document=document,
        base_dir=base_dir,
    )

    # builds the scenario once so validation errors surface at load time
    config.scenario
    logger.info("Loaded scenario %s (%s)", config.name, config.digest[:12])
    return config


def load_scenario(name_or_path: str) -> ScenarioConfig:
    path = resolve_scenario(name_or_path)
    with open(path, "r") as f:
        return scenario_from_yaml(f, base_dir=os.path.dirname(os.path.abspath(path)))


def matrices_from_yaml(matrices_file) -> Tuple[BundleData, Dict, Dict, dict]:
    """Classifier matrices: {bundle, cTilde: {"r,k": M}, tZero: {"r": M}, tolerances}."""
    document = load_document(matrices_file)
    if "bundle" not in document:
        raise ScenarioError("No bundle provided for classifier matrices")
    bundle = bundle_from_config(document["bundle"])
    c_tilde = {
        _bidegree(key, "cTilde"): np.atleast_2d(parse_matrix(value, f"cTilde {key}"))
        for key, value in (document.get("cTilde") or {}).items()
    }
    t_zero = {
        int(key): np.atleast_2d(parse_matrix(value, f"tZero {key}"))
        for key, value in (document.get("tZero") or {}).items()
    }
    return bundle, c_tilde, t_zero, document.get("tolerances") or {}


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def read_csv(path: str) -> List[dict]:
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: str, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str):
    with open(path, "r") as f:
        return json.load(f)
