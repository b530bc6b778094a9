import numpy as np
import pytest

from cuspidal.bundle import (
    BundleData,
    Channel,
    channels_for_degree,
    kunneth_table,
    row_slices,
    star_block,
    star_map,
    star_matrix,
    star_sign,
    total_cohomology,
)
from cuspidal.errors import DualityError, ScenarioError


def test_channel_weights():
    c = Channel(1, 0, 0.0, 1, False, 2)
    assert c.a == 1.0
    assert c.d == 1.0
    assert c.threshold == 1.0
    assert c.degree == 1

    normal = Channel(0, 2, 0.5, 1, True, 2)
    assert normal.a == -1.0
    assert normal.d == 1.0
    assert normal.threshold == 1.5
    assert normal.degree == 3


def test_kunneth_table(torus_bundle):
    assert torus_bundle.f == 2
    assert torus_bundle.b == 1
    assert torus_bundle.h == ((1, 2, 1), (1, 2, 1))
    assert torus_bundle.is_dual_symmetric()
    assert [total_cohomology(torus_bundle, p) for p in range(4)] == [1, 3, 3, 1]


@pytest.mark.parametrize(
    "h",
    [
        [[1, 1, 1]],  # wrong shape for f = 1
        [[1, -1]],
    ],
)
def test_bundle_validation(h):
    with pytest.raises(ScenarioError):
        BundleData(f=1, b=0, h=h)


def test_nu_list_validation():
    with pytest.raises(ScenarioError):
        BundleData(f=1, b=0, h=[[1, 1]], nu_lists={(0, 0): ((2.0, 1), (1.0, 1))})
    with pytest.raises(ScenarioError):
        BundleData(f=1, b=0, h=[[1, 1]], nu_lists={(0, 0): ((0.0, 1),)})


def test_channels_for_degree(torus_bundle):
    channels = channels_for_degree(torus_bundle, 1)
    keys = [(c.r, c.s, c.normal) for c in channels]
    assert keys == [(1, 0, False), (0, 0, True), (0, 1, False)]
    assert sum(c.mult for c in channels) == 4

    slices = row_slices(channels)
    assert slices == [slice(0, 1), slice(1, 2), slice(2, 4)]


def test_channels_with_nonzero_nu():
    bundle = BundleData(f=1, b=0, h=[[1, 1]], nu_lists={(0, 0): ((4.0, 2),)})
    harmonic = channels_for_degree(bundle, 0)
    full = channels_for_degree(bundle, 0, include_nonzero_nu=True)
    assert len(harmonic) == 1
    assert [(c.nu, c.mult) for c in full] == [(0.0, 1), (4.0, 2)]
    assert full[1].threshold == pytest.approx(4.25)


def test_star_map_pairs_bidegrees(torus_bundle):
    c = Channel(0, 0, 0.0, 1, False, 2)
    image, sign = star_map(torus_bundle, c)
    assert (image.r, image.s) == (1, 2)
    assert sign in (1, -1)


@pytest.mark.parametrize("r,s", [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2)])
def test_double_star_sign(torus_bundle, r, s):
    c = Channel(r, s, 0.0, torus_bundle.dim(r, s), False, 2)
    image, _ = star_map(torus_bundle, c)
    forward = star_block(torus_bundle, c)
    back = star_block(torus_bundle, image)
    q = r + s
    expected = (-1) ** (q * (torus_bundle.n - q))
    assert np.allclose(back @ forward, expected * np.eye(c.mult))


def test_star_sign_override():
    bundle = BundleData(f=1, b=0, h=[[1, 1]], star_signs={(0, 0): -1})
    assert star_sign(bundle, 0, 0) == -1
    # ∗∗ = +1 on degree 0 forms of a 1-dimensional link
    assert star_sign(bundle, 0, 1) == -1


def test_inconsistent_star_signs():
    bundle = BundleData(f=1, b=0, h=[[1, 1]], star_signs={(0, 0): 1, (0, 1): -1})
    with pytest.raises(ScenarioError):
        star_sign(bundle, 0, 0)


def test_star_map_needs_dual_partner():
    bundle = BundleData(f=1, b=0, h=[[1, 2]])
    with pytest.raises(DualityError):
        star_map(bundle, Channel(0, 0, 0.0, 1, False, 1))


def test_star_matrix_is_permutation(torus_bundle):
    source = [c for c in channels_for_degree(torus_bundle, 1) if not c.normal]
    target = [c for c in channels_for_degree(torus_bundle, 2) if not c.normal]
    P = star_matrix(torus_bundle, source, target)
    assert P.shape == (3, 3)
    assert np.allclose(np.abs(P) @ np.ones(3), np.ones(3))
    assert np.allclose(P.conj().T @ P, np.eye(3))
