import os
from dataclasses import replace

import pytest

import cuspidal
from cuspidal.errors import InvariantViolation, ScenarioError
from cuspidal.pipeline import MS_HEADER, REPORTS, Pipeline, default_threads
from cuspidal.tests.conftest import load_file_scenario
from cuspidal.utils import read_csv, read_json


@pytest.fixture(scope="module")
def minimal_run(rootdir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("minimal"))
    config = load_file_scenario(rootdir, "minimal.yml")
    results = Pipeline(config, out, threads=1).run()
    return config, out, results


def test_all_reports_written(minimal_run):
    _, out, results = minimal_run
    assert list(results) == ["sweep", "scan", "residues", "ms", "classify"]
    for report in REPORTS.values():
        assert os.path.isfile(os.path.join(out, report))


def test_manifest(minimal_run):
    config, out, _ = minimal_run
    manifest = read_json(os.path.join(out, "manifest.json"))
    assert manifest["hash"] == config.digest
    assert manifest["scenario"] == "minimal"
    assert manifest["stages"] == ["sweep", "scan", "residues", "ms", "classify"]
    assert manifest["version"] == cuspidal.__version__


def test_sweep_report(minimal_run):
    _, out, _ = minimal_run
    rows = read_csv(os.path.join(out, "sweep.csv"))
    assert len(rows) == 4
    assert float(rows[0]["re_s"]) == pytest.approx(0.6)


def test_free_channel_reports(minimal_run):
    _, out, results = minimal_run
    assert results["scan"]["poles"] == []
    assert results["residues"] == {"poles": []}
    rows = read_csv(os.path.join(out, "ms.csv"))
    assert list(rows[0]) == MS_HEADER
    assert float(rows[0]["relError"]) < 1e-6


def test_classification_report(minimal_run):
    _, out, _ = minimal_run
    report = read_json(os.path.join(out, "classification.json"))
    assert report["scenario"] == "minimal"
    assert report["provenance"] == "computed"
    assert [degree["dimHinf"] for degree in report["degrees"]] == [0, 1, 0]
    assert report["signature"] is None


def test_cached_scan_reused(rootdir, minimal_run):
    _, out, _ = minimal_run
    config = load_file_scenario(rootdir, "minimal.yml")
    pipeline = Pipeline(config, out, threads=1)
    assert pipeline.cached("scan")["poles"] == []
    pipeline.run(["ms"])


def test_cached_scan_of_other_scenario_ignored(rootdir, minimal_run):
    _, out, _ = minimal_run
    tuned = load_file_scenario(rootdir, "tuned.yml")
    assert Pipeline(tuned, out, threads=1).cached("scan") is None


def test_residues_need_scan(rootdir, tmp_path):
    config = load_file_scenario(rootdir, "tuned.yml")
    with pytest.raises(ScenarioError, match="run cuspidal-scan first"):
        Pipeline(config, str(tmp_path), threads=1).run(["residues"])


def test_tuned_pipeline(rootdir, tmp_path):
    config = load_file_scenario(rootdir, "tuned.yml")
    results = Pipeline(config, str(tmp_path), threads=2).run()
    poles = results["residues"]["poles"]
    assert len(poles) == 1
    assert poles[0]["s0"] == pytest.approx(0.8, abs=1e-7)
    assert poles[0]["rank"] == 1
    assert [(item["i"], item["j"]) for item in poles[0]["pairingDefects"]] == [(0, 0)]
    assert poles[0]["pairingDefects"][0]["defect"] < 1e-6
    assert poles[0]["orderCertificate"] < 1e-7
    assert [block["l"] for block in poles[0]["blocks"]] == [0]
    assert all(row[4] < 1e-6 for row in results["ms"])


def test_middle_skips_pole_stages(rootdir, tmp_path):
    config = load_file_scenario(rootdir, "middle.yml")
    results = Pipeline(config, str(tmp_path), threads=1).run(["sweep", "scan", "ms"])
    assert list(results) == ["sweep", "ms"]
    assert len(results["ms"]) == 4


def test_overrides_keep_hash_for_grids(rootdir):
    config = load_file_scenario(rootdir, "minimal.yml")
    changed = config.with_overrides(s_grid="0.7:0.9:3", tau=[0.1], r=[3.0])
    assert changed.digest == config.digest
    assert changed.numerics.s_grid == (0.7, 0.9, 3)
    assert changed.numerics.tau == (0.1,)


def test_override_of_incoming_degree(rootdir):
    config = load_file_scenario(rootdir, "coupled.yml")
    changed = config.with_overrides(k=1)
    assert changed.k == 1
    assert changed.scenario.k == 1
    assert changed.digest != config.digest
    assert config.k == 0


def test_override_validation(rootdir):
    config = load_file_scenario(rootdir, "minimal.yml")
    with pytest.raises(ScenarioError):
        config.with_overrides(contour_radius=-1.0)
    with pytest.raises(ScenarioError):
        config.with_overrides(s_grid="1:0:3")


def test_ms_violation(rootdir, tmp_path):
    config = load_file_scenario(rootdir, "minimal.yml")
    tolerances = replace(config.numerics.tolerances, ms=1e-30)
    config.numerics = replace(config.numerics, tolerances=tolerances)
    with pytest.raises(InvariantViolation):
        Pipeline(config, str(tmp_path), threads=1).run(["scan", "ms"])


@pytest.mark.parametrize("value,expected", [(None, 1), ("4", 4), ("0", 1)])
def test_default_threads(monkeypatch, value, expected):
    if value is None:
        monkeypatch.delenv("CUSPIDAL_THREADS", raising=False)
    else:
        monkeypatch.setenv("CUSPIDAL_THREADS", value)
    assert default_threads() == expected


def test_default_threads_invalid(monkeypatch):
    monkeypatch.setenv("CUSPIDAL_THREADS", "many")
    with pytest.raises(ScenarioError):
        default_threads()


def test_truncation_bound_reported(rootdir, tmp_path):
    config = load_file_scenario(rootdir, "truncated.yml")
    Pipeline(config, str(tmp_path), threads=1).run()
    rows = read_csv(os.path.join(str(tmp_path), "ms.csv"))
    assert list(rows[0]) == MS_HEADER
    assert 0 < float(rows[0]["truncationBound"]) < 1e-2
