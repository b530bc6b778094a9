import logging

import numpy as np
import pytest

from cuspidal.bundle import BundleData
from cuspidal.errors import InvariantViolation, PoleProximityError, ScenarioError, SpectralError
from cuspidal.msrel import (
    flux_defect,
    ms_lhs,
    ms_rhs,
    pairing_identity_defect,
    truncation_bound,
    verify_ms,
)
from cuspidal.scatter import Numerics, Tolerances, make_scenario
from cuspidal.tests.conftest import load_file_scenario

TAUS = [0.03, 0.09]
RADII = [2.0, 5.0]


@pytest.mark.parametrize("tau", TAUS)
@pytest.mark.parametrize("r", RADII)
def test_free_channel(free_scenario, tau, r):
    result = verify_ms(free_scenario, tau, r, np.ones(1))
    assert result.defect < 1e-6
    assert result.flux < 1e-8


@pytest.mark.parametrize("tau", TAUS)
@pytest.mark.parametrize("r", RADII)
def test_tuned_well(tuned_scenario, tau, r):
    result = verify_ms(tuned_scenario, tau, r, np.ones(1), poles=[0.8])
    assert result.defect < 1e-6
    assert result.lhs > 0


@pytest.mark.parametrize("tau", TAUS)
@pytest.mark.parametrize("r", RADII)
def test_coupled_channels(coupled_scenario, tau, r):
    phi = np.ones(coupled_scenario.m)
    result = verify_ms(coupled_scenario, tau, r, phi)
    assert result.defect < 1e-6
    assert result.flux < 1e-6


@pytest.mark.parametrize("tau", TAUS)
@pytest.mark.parametrize("r", RADII)
def test_middle_degree(middle_scenario, tau, r):
    rng = np.random.default_rng(3)
    phi = rng.normal(size=middle_scenario.m) + 1j * rng.normal(size=middle_scenario.m)
    result = verify_ms(middle_scenario, tau, r, phi)
    assert result.defect < 1e-6
    assert result.flux < 1e-8


def test_truncated_norm_grows_with_height(free_scenario):
    phi = np.ones(1)
    assert ms_lhs(free_scenario, 0.05, 3.0, phi) > ms_lhs(free_scenario, 0.05, 2.0, phi)


def test_rhs_is_linear_in_height_for_middle(middle_scenario):
    # oscillating terms aside, the middle-degree norm grows like r(‖φ‖² + ‖t‖²)
    phi = np.zeros(middle_scenario.m)
    phi[0] = 1.0
    w = np.sqrt(0.05)
    period = np.pi / w
    slope = (ms_rhs(middle_scenario, 0.05, 20 + period, phi) - ms_rhs(middle_scenario, 0.05, 20, phi)) / period
    assert slope == pytest.approx(2.0, rel=1e-6)


def test_flux_identity(tuned_scenario):
    assert flux_defect(tuned_scenario, 0.05, np.ones(1)) < 1e-10


@pytest.mark.parametrize("tau", TAUS)
def test_pairing_identity(tuned_scenario, tau):
    phi = np.ones(1)
    assert pairing_identity_defect(tuned_scenario, tau, 2.0, phi, phi) < 1e-6


def test_pairing_identity_polarized(coupled_scenario):
    m = coupled_scenario.m
    phi = np.ones(m)
    psi = np.arange(1, m + 1) * 1j
    assert pairing_identity_defect(coupled_scenario, 0.05, 3.0, phi, psi) < 1e-6


@pytest.mark.parametrize("tau", [0.0, -0.1, 0.3])
def test_outside_window(tuned_scenario, tau):
    with pytest.raises(SpectralError):
        verify_ms(tuned_scenario, tau, 2.0, np.ones(1))


def test_pole_refused(tuned_scenario):
    lam = 0.8 * 0.2
    with pytest.raises(PoleProximityError):
        verify_ms(tuned_scenario, lam + 1e-4, 2.0, np.ones(1), poles=[0.8])


def test_derived_boundary_refused(tuned_scenario):
    derived = tuned_scenario.derivative_companion()
    with pytest.raises(ScenarioError):
        verify_ms(derived, 0.05, 2.0, np.ones(derived.m))


def test_tolerance_violation(circle_bundle):
    strict = Numerics(tolerances=Tolerances(ms=1e-30))
    scn = make_scenario(circle_bundle, 0, 0, L=1.0, numerics=strict)
    with pytest.raises(InvariantViolation):
        verify_ms(scn, 0.05, 2.0, np.ones(1))


@pytest.fixture(scope="module")
def truncated_scenario(rootdir):
    return load_file_scenario(rootdir, "truncated.yml").scenario


def test_truncated_channels_loaded(truncated_scenario):
    assert truncated_scenario.bundle.nu_max == 1.0
    assert truncated_scenario.bundle.nu_lists[(0, 0)] == ((0.3, 1),)
    assert truncated_scenario.n == 2


def test_truncation_bound(truncated_scenario, caplog):
    with caplog.at_level(logging.WARNING, logger="cuspidal.msrel"):
        result = verify_ms(truncated_scenario, 0.05, 2.0, np.ones(1))
    mu = np.sqrt(1.0 + 0.25 - 0.05)
    expected = np.exp(-4 * mu) / (2 * mu)
    assert truncation_bound(truncated_scenario, 0.05, 2.0, np.ones(1)) == pytest.approx(expected)
    assert result.truncation == pytest.approx(expected / max(result.lhs, 1.0))
    assert result.row()[-1] == result.truncation
    assert "ν_max=1.0" in caplog.text


def test_truncation_tail_below_cutoff(truncated_scenario, caplog):
    with caplog.at_level(logging.WARNING, logger="cuspidal.msrel"):
        bound = truncation_bound(truncated_scenario, 0.05, 30.0, np.ones(1))
    assert bound < 1e-16
    assert "ν_max" not in caplog.text


def test_untruncated_bound_is_zero(free_scenario):
    assert truncation_bound(free_scenario, 0.05, 2.0, np.ones(1)) == 0.0


def test_cut_below_tau_refused():
    # middle rows have d = 0, so a cut at ν_max < τ leaves an open channel out
    bundle = BundleData(f=2, b=0, h=[[1, 2, 1]], nu_max=0.02)
    scn = make_scenario(bundle, 1, 1, L=1.0)
    with pytest.raises(SpectralError):
        truncation_bound(scn, 0.05, 2.0, np.ones(scn.m))


def test_closed_rows_dropped_past_cutoff(truncated_scenario):
    # the ν = 0.3 row decays like e^{-2r√0.5}, far below the cutoff at r = 40
    phi = np.ones(1)
    t = np.array([0.5, 1e3], dtype=complex)
    t_dot = np.zeros(2, dtype=complex)
    kept = ms_rhs(truncated_scenario, 0.05, 40.0, phi, t=t, t_dot=t_dot)
    t[1] = 0.0
    assert ms_rhs(truncated_scenario, 0.05, 40.0, phi, t=t, t_dot=t_dot) == kept
