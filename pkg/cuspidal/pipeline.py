"""
Stage orchestration for the command line tools: sweep → scan → residues → ms →
classify. Each stage writes its report into the output directory together with a
manifest holding the scenario hash, so standalone stage commands can reuse upstream
results of the same scenario.
"""
import logging
import math
import os
import time
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional

import numpy as np

from cuspidal import THREADS_ENV, __version__
from cuspidal.errors import InvariantViolation, PoleProximityError, ScenarioError
from cuspidal.hodge import classification_report, compute_classifier_input
from cuspidal.msrel import verify_ms
from cuspidal.residues import check_residue, contour_residue, residue_pairing_check, scan_report
from cuspidal.scatter import sweep
from cuspidal.utils import (
    ScenarioConfig,
    read_json,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

SWEEP_HEADER = [
    "re_s",
    "im_s",
    "re_lambda",
    "im_lambda",
    "block",
    "row",
    "col",
    "re_T",
    "im_T",
    "sigma_min",
    "cond",
]

MS_HEADER = ["tau", "r", "lhs", "rhs", "relError", "truncationBound"]

REPORTS = {
    "sweep": "sweep.csv",
    "scan": "scan.json",
    "residues": "residues.json",
    "ms": "ms.csv",
    "classify": "classification.json",
}


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ScenarioError(f"{THREADS_ENV} must be an integer, got {value}")
    return 1


class Pipeline:
    """
    Runs the stages of one scenario.

    Attributes:
        config (ScenarioConfig): Validated scenario.

        out_dir (str): Report directory.

        threads (int): Worker threads for point-parallel stages.

        results (Dict[str, object]): Stage results of this run.

    """

    def __init__(self, config: ScenarioConfig, out_dir: str, threads: Optional[int] = None):
        self.config = config
        self.out_dir = out_dir
        self.threads = threads if threads is not None else default_threads()
        self.results: Dict[str, object] = {}
        self._pool = None
        self._scenario = None
        os.makedirs(out_dir, exist_ok=True)

    @property
    def scenario(self):
        if self._scenario is None:
            self._scenario = self.config.scenario
        return self._scenario

    def path(self, stage: str) -> str:
        return os.path.join(self.out_dir, REPORTS[stage])

    def run(self, stages: Optional[List[str]] = None) -> Dict[str, object]:
        """Run the given stages (the scenario's stage list if unset) in pipeline order."""
        stages = stages if stages is not None else self.config.stages
        scenario = self.scenario
        if scenario.is_middle:
            skipped = [stage for stage in stages if stage in ("scan", "residues")]
            if skipped:
                logger.info("Middle fiber degree has no pole window, skipping %s", skipped)
            stages = [stage for stage in stages if stage not in ("scan", "residues")]

        pool = ThreadPool(self.threads) if self.threads > 1 else None
        self._pool = pool
        try:
            for stage in stages:
                logger.info("Running stage %s", stage)
                t1 = time.time()
                self.results[stage] = getattr(self, stage)()
                t2 = time.time()
                logger.info("Elapsed time: %s", str(t2 - t1))
                self._write_manifest(stage)
        finally:
            if pool is not None:
                pool.close()
                pool.join()
            self._pool = None
        return self.results

    def _write_manifest(self, stage: str):
        path = os.path.join(self.out_dir, "manifest.json")
        manifest = {"scenario": self.config.name, "hash": self.config.digest, "stages": []}
        if os.path.isfile(path):
            previous = read_json(path)
            if previous.get("hash") == self.config.digest:
                manifest["stages"] = previous.get("stages", [])
        if stage not in manifest["stages"]:
            manifest["stages"].append(stage)
        manifest["version"] = __version__
        write_json(path, manifest)

    def cached(self, stage: str):
        """Report of an upstream stage of the same scenario, None if absent or stale."""
        if stage in self.results:
            return self.results[stage]
        manifest_path = os.path.join(self.out_dir, "manifest.json")
        if not os.path.isfile(manifest_path) or not os.path.isfile(self.path(stage)):
            return None
        manifest = read_json(manifest_path)
        if manifest.get("hash") != self.config.digest:
            logger.warning("Ignoring %s results of a different scenario", stage)
            return None
        logger.info("Reusing cached %s results from %s", stage, self.path(stage))
        return read_json(self.path(stage)) if self.path(stage).endswith(".json") else True

    def _poles(self) -> List[float]:
        if self.scenario.is_middle:
            return []
        scan = self.cached("scan")
        if scan is None:
            raise ScenarioError(
                f"No scan results found in {self.out_dir}, run cuspidal-scan first"
            )
        return [float(s) for s in scan["poles"]]

    def sweep_points(self) -> List[complex]:
        scenario = self.scenario
        numerics = scenario.numerics
        if numerics.s_grid is not None:
            a, b, n = numerics.s_grid
        else:
            a, b, n = scenario.d + 0.05, 2 * scenario.d + 0.5, 41
        offsets = (0.0,) + tuple(numerics.imag_grid)
        return [complex(x, y) for x in np.linspace(a, b, n) for y in offsets]

    def sweep(self) -> List[tuple]:
        rows = sweep(self.scenario, self.sweep_points(), pool=self._pool)
        write_csv(self.path("sweep"), SWEEP_HEADER, rows)
        logger.info("Wrote %d sweep rows to %s", len(rows), self.path("sweep"))
        return rows

    def scan(self) -> dict:
        report = scan_report(self.scenario, self._pool)
        write_json(self.path("scan"), report)
        return report

    def residues(self) -> dict:
        scenario = self.scenario
        poles = self._poles()
        entries = []
        for s0 in poles:
            res = contour_residue(scenario, s0, others=poles)
            values = check_residue(res)
            entry = res.to_dict()
            entry["eigenvalues"] = [float(v) for v in values]
            basis = np.eye(scenario.m)
            entry["pairingDefects"] = [
                {"i": i, "j": j, "defect": residue_pairing_check(res, basis[:, i], basis[:, j])}
                for i in range(scenario.m)
                for j in range(scenario.m)
            ]
            worst = max(item["defect"] for item in entry["pairingDefects"])
            if worst > scenario.tolerances.pairing:
                raise InvariantViolation("residue pairing", worst, f"at s={s0}")
            logger.info("Residue at s=%.10f has rank %d", s0, res.rank)
            entries.append(entry)

        report = {"poles": entries}
        write_json(self.path("residues"), report)
        return report

    def ms_points(self):
        scenario = self.scenario
        numerics = scenario.numerics
        taus = numerics.tau
        if not taus:
            top = scenario.tau1 if scenario.is_middle else min(scenario.d**2, scenario.tau1)
            top = 1.0 if math.isinf(top) else top
            taus = (0.3 * top, 0.6 * top)
        radii = numerics.r or (1.0, 2.0)
        return [(tau, r) for tau in taus for r in radii]

    def ms(self) -> List[tuple]:
        scenario = self.scenario
        poles = self._poles()
        phi = np.zeros(scenario.m, dtype=complex)
        phi[0] = 1.0

        rows = []
        for tau, r in self.ms_points():
            try:
                result = verify_ms(scenario, tau, r, phi, poles=poles)
            except PoleProximityError as exc:
                logger.warning("Skipping τ=%s: %s", tau, exc)
                continue
            logger.info("Flux defect at τ=%s: %.3e", tau, result.flux)
            rows.append(result.row())

        write_csv(self.path("ms"), MS_HEADER, rows)
        return rows

    def classify(self) -> dict:
        config = self.config
        inp = compute_classifier_input(
            config.bundle, config.factory, config.numerics.tolerances
        )
        report = classification_report(inp)
        report["scenario"] = config.name
        for degree in report["degrees"]:
            logger.info(
                "Degree %d: dim A^p = %d, dim H_inf^p = %d",
                degree["p"],
                degree["dimAp"],
                degree["dimHinf"],
            )
        write_json(self.path("classify"), report)
        return report

