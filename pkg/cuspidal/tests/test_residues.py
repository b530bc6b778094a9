import logging

import numpy as np
import pytest

from cuspidal.bundle import BundleData
from cuspidal.cavity import Potential, tuned_well_depth
from cuspidal.errors import ConvergenceError, PSDViolation, SpectralError, UnresolvedMinimumError
from cuspidal.residues import (
    check_residue,
    contour_residue,
    harmonic_residue,
    pole_scan,
    psd_split,
    rectangle_floor,
    residue_field,
    residue_pairing_check,
    scan_report,
    scan_window,
)
from cuspidal.scatter import Numerics, Tolerances, make_scenario
from cuspidal.tests.conftest import single_channel_dtn


def oracle_residue(d, L, V, s0, h=1e-5):
    """2o/(−1 − N'(s₀)) for T = (N + o)/(o − N) with a central difference N'."""
    slope = (single_channel_dtn(d, L, V, s0 + h) - single_channel_dtn(d, L, V, s0 - h)) / (2 * h)
    o = d - s0
    return (2 * o / (-1 - slope)).real


@pytest.fixture(scope="module")
def harmonic_scenario(circle_bundle):
    depth = tuned_well_depth(0.5, 1.0, 1.0)
    return make_scenario(circle_bundle, 0, 0, L=1.0, V=Potential.constant(depth))


@pytest.fixture(scope="module")
def tuned_residue(tuned_scenario):
    return contour_residue(tuned_scenario, 0.8)


def test_scan_window(free_scenario, middle_scenario):
    lo, hi = scan_window(free_scenario)
    assert 0.5 < lo < 0.501
    assert hi == 1.0
    with pytest.raises(SpectralError):
        scan_window(middle_scenario)


def test_pole_scan_finds_tuned_pole(tuned_scenario):
    poles = pole_scan(tuned_scenario)
    assert len(poles) == 1
    assert poles[0] == pytest.approx(0.8, abs=1e-7)


def test_free_channel_has_no_poles(free_scenario):
    assert pole_scan(free_scenario) == []


def test_rectangle_floor_off_axis(tuned_scenario):
    floor, where = rectangle_floor(tuned_scenario)
    assert floor > tuned_scenario.numerics.rect_floor
    assert where.imag != 0


def test_scan_report(tuned_scenario):
    report = scan_report(tuned_scenario)
    assert report["poles"] == [pytest.approx(0.8, abs=1e-7)]
    assert report["window"][1] == 1.0
    assert report["floor"] > 1e-6
    assert report["unresolved"] == []


def test_unresolved_minimum_reports_bracket(circle_bundle):
    depth = tuned_well_depth(0.5, 1.0, 0.8)
    numerics = Numerics(scan_points=60, tolerances=Tolerances(pole=1e-30))
    scn = make_scenario(circle_bundle, 0, 0, L=1.0, V=Potential.constant(depth), numerics=numerics)
    with pytest.raises(UnresolvedMinimumError) as excinfo:
        pole_scan(scn)
    a, b = excinfo.value.bracket
    assert a < 0.8 < b
    assert excinfo.value.sigma_min < 1e-3
    assert isinstance(excinfo.value, ConvergenceError)


def test_threshold_adjacent_minimum(circle_bundle, caplog):
    depth = tuned_well_depth(0.5, 1.0, 0.5 + 1e-7)
    scn = make_scenario(circle_bundle, 0, 0, L=1.0, V=Potential.constant(depth))
    with caplog.at_level(logging.WARNING, logger="cuspidal.residues"):
        report = scan_report(scn)
    assert report["poles"] == []
    [entry] = report["unresolved"]
    assert entry["reason"] == "threshold-adjacent"
    assert entry["s"] == pytest.approx(0.5, abs=2e-4)
    assert entry["bracket"] == [0.5, report["window"][0]]
    assert "Threshold-adjacent" in caplog.text


def test_residue_matches_closed_form(tuned_scenario, tuned_residue):
    depth = tuned_well_depth(0.5, 1.0, 0.8)
    expected = oracle_residue(0.5, 1.0, depth, 0.8)
    assert tuned_residue.C_tilde.shape == (1, 1)
    assert tuned_residue.C_tilde[0, 0].real == pytest.approx(expected, rel=1e-6)
    assert abs(tuned_residue.C_tilde[0, 0].imag) < 1e-9
    assert tuned_residue.winding == 1


def test_residue_certificates(tuned_residue):
    values = check_residue(tuned_residue)
    assert values[-1] > 0
    assert tuned_residue.rank == 1
    assert tuned_residue.order < 1e-7
    assert tuned_residue.convergence < 1e-7
    assert tuned_residue.leak == 0.0


def test_residue_pairing(tuned_residue):
    phi = np.ones(1)
    assert residue_pairing_check(tuned_residue, phi, phi) < 1e-6


def test_residue_field_is_square_integrable(tuned_residue):
    F = residue_field(tuned_residue, np.ones(1), interior=False)
    assert all(F.cusp.l2_flags)


def test_residue_to_dict(tuned_residue):
    data = tuned_residue.to_dict()
    assert data["rank"] == 1
    assert data["lambda"] == pytest.approx(0.8 * 0.2)
    assert sorted(data) == [
        "M",
        "blocks",
        "convergence",
        "lambda",
        "leak",
        "orderCertificate",
        "rank",
        "rho",
        "s0",
        "winding",
    ]
    [block] = data["blocks"]
    assert (block["l"], block["r"], block["s"], block["normal"]) == (0, 0, 0, False)
    assert block["matrix"]["re"][0][0] == pytest.approx(tuned_residue.C_tilde[0, 0].real)


def test_residue_blocks_per_channel(tuned_residue):
    # the ν = 0.3 channel is decoupled from the tuned reference channel
    bundle = BundleData(f=1, b=0, h=[[1, 1]], nu_lists={(0, 0): ((0.3, 1),)})
    depth = tuned_well_depth(0.5, 1.0, 0.8)
    scn = make_scenario(bundle, 0, 0, L=1.0, V=Potential.constant(depth), nonzero_nu=True)
    reference, decoupled = contour_residue(scn, 0.8).blocks()
    assert (reference["l"], decoupled["l"]) == (0, 1)
    assert decoupled["nu"] == 0.3
    C = tuned_residue.C_tilde[0, 0]
    assert reference["matrix"]["re"][0][0] == pytest.approx(C.real, rel=1e-8)
    assert abs(decoupled["matrix"]["re"][0][0]) < 1e-10
    assert abs(decoupled["matrix"]["im"][0][0]) < 1e-10


def test_harmonic_residue_vanishes_for_free_channel(free_scenario):
    res = harmonic_residue(free_scenario)
    assert np.abs(res.C_tilde).max() < 1e-10
    assert res.rank == 0


def test_harmonic_residue_of_zero_mode(harmonic_scenario):
    res = harmonic_residue(harmonic_scenario)
    check_residue(res)
    assert res.C_tilde[0, 0].real > 1e-3
    assert res.rank == 1


def test_odd_contour_points_rejected(tuned_scenario):
    with pytest.raises(ValueError):
        contour_residue(tuned_scenario, 0.8, M=63)


def test_off_center_pole_rejected(tuned_scenario):
    # the (s − s₀)⁻² coefficient picks up the offset of the enclosed pole
    with pytest.raises(ConvergenceError):
        contour_residue(tuned_scenario, 0.78, rho=0.05)


@pytest.mark.parametrize(
    "matrix,rank",
    [
        (np.diag([0.0, 1.0]), 1),
        (np.diag([2.0, 1.0]), 2),
        (np.zeros((2, 2)), 0),
    ],
)
def test_psd_split(matrix, rank):
    kernel, image, values = psd_split(matrix, 1e-9, 1e-10)
    assert image.shape[1] == rank
    assert kernel.shape[1] == 2 - rank
    assert np.all(np.diff(values) >= 0)


def test_psd_split_rejects_negative():
    with pytest.raises(PSDViolation):
        psd_split(np.diag([-1.0, 1.0]), 1e-9, 1e-10)
