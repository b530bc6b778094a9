import json
import os

import numpy as np
import pytest

from cuspidal.bundle import BundleData
from cuspidal.cavity import BoundaryCondition, BoundaryKind
from cuspidal.cusp import interval_norm
from cuspidal.errors import (
    AmbiguousMembershipError,
    DimensionParityError,
    InsufficientDataError,
    InvariantViolation,
    ScenarioError,
)
from cuspidal.hodge import (
    COMPUTED,
    MIDDLE_VALUE,
    RESIDUE,
    VALUE_AT_2D,
    ZERO,
    ClassifierInput,
    adapted_tags,
    attach,
    check_involution,
    classification_report,
    compute_classifier_input,
    exactness_check_lower,
    h_inf_dimension,
    middle_split,
    restriction_image,
    signature_check,
    xi_classify,
)
from cuspidal.scatter import make_scenario, regular_value
from cuspidal.utils import matrices_from_yaml


def load_matrices(rootdir, name):
    with open(os.path.join(rootdir, "files", name), "r") as f:
        bundle, c_tilde, t_zero, _ = matrices_from_yaml(f)
    return ClassifierInput(bundle, c_tilde, t_zero)


def dims(inp):
    return {p: h_inf_dimension(inp, p) for p in range(inp.bundle.n + 2)}


@pytest.fixture(scope="module")
def dirichlet_input(rootdir):
    return load_matrices(rootdir, "torus_dirichlet_matrices.yml")


@pytest.fixture(scope="module")
def neumann_input(rootdir):
    return load_matrices(rootdir, "torus_neumann_matrices.yml")


@pytest.fixture(scope="module")
def sphere_input(rootdir):
    return load_matrices(rootdir, "sphere_circle_matrices.yml")


def vertex_factory(bundle, kind):
    def factory(p, k):
        return make_scenario(bundle, p, k, L=1.0, vertex=BoundaryCondition(kind))

    return factory


def test_dirichlet_dimensions(dirichlet_input):
    assert dims(dirichlet_input) == {0: 0, 1: 0, 2: 1, 3: 1, 4: 0}


def test_neumann_dimensions(neumann_input):
    assert dims(neumann_input) == {0: 0, 1: 2, 2: 3, 3: 1, 4: 0}


def test_sphere_circle_dimensions(sphere_input):
    assert dims(sphere_input) == {0: 0, 1: 0, 2: 1, 3: 1, 4: 0}


def test_out_of_range_degree(dirichlet_input):
    assert h_inf_dimension(dirichlet_input, -1) == 0
    assert h_inf_dimension(dirichlet_input, 9) == 0


def test_point_base_circle_fiber(circle_bundle):
    inp = ClassifierInput(circle_bundle, {(0, 0): np.zeros((1, 1))})
    assert dims(inp) == {0: 0, 1: 1, 2: 0}


def test_missing_blocks(rootdir):
    inp = load_matrices(rootdir, "missing_matrices.yml")
    with pytest.raises(InsufficientDataError) as excinfo:
        restriction_image(inp, 1)
    assert (1, 0) in excinfo.value.missing


def test_image_block_kinds(sphere_input):
    image = restriction_image(sphere_input, 2)
    assert [(b.r, b.k, b.kind, b.dim) for b in image.blocks] == [
        (2, 0, RESIDUE, 1),
        (1, 1, ZERO, 0),
    ]
    assert restriction_image(sphere_input, 3).block(1).kind == VALUE_AT_2D


@pytest.mark.parametrize(
    "p,k,phi,tag",
    [
        (2, 0, [1.0], RESIDUE),
        (0, 0, [1.0], ZERO),
        (3, 1, [1.0], VALUE_AT_2D),
    ],
)
def test_xi_classify_sphere(sphere_input, p, k, phi, tag):
    assert xi_classify(sphere_input, p, k, np.array(phi)).tag == tag


def test_xi_classify_middle(neumann_input, dirichlet_input):
    phi = np.array([1.0, 1j])
    assert xi_classify(neumann_input, 1, 1, phi).tag == MIDDLE_VALUE
    assert xi_classify(dirichlet_input, 1, 1, phi).tag == ZERO


def test_ambiguous_membership(torus_bundle):
    split = np.diag([1.0, -1.0])
    residues = {(0, 0): np.zeros((1, 1)), (1, 0): np.zeros((1, 1))}
    inp = ClassifierInput(torus_bundle, residues, {0: split, 1: split})
    with pytest.raises(AmbiguousMembershipError):
        xi_classify(inp, 1, 1, np.array([1.0, 1.0]))
    assert xi_classify(inp, 1, 1, np.array([1.0, 0.0])).tag == MIDDLE_VALUE
    assert xi_classify(inp, 1, 1, np.array([0.0, 1.0])).tag == ZERO


def test_xi_classify_validation(neumann_input):
    with pytest.raises(ScenarioError):
        xi_classify(neumann_input, 1, 1, np.zeros(2))
    with pytest.raises(ScenarioError):
        xi_classify(neumann_input, 1, 1, np.ones(3))


def test_adapted_tags(neumann_input, sphere_input):
    assert adapted_tags(neumann_input, 1, 1) == [MIDDLE_VALUE, MIDDLE_VALUE]
    assert adapted_tags(sphere_input, 2, 0) == [RESIDUE]


def test_involution_checks():
    check_involution(np.array([[0.0, 1.0], [1.0, 0.0]]), 1e-12)
    with pytest.raises(InvariantViolation):
        check_involution(np.diag([0.5, 1.0]), 1e-8)
    with pytest.raises(InvariantViolation):
        check_involution(np.array([[1.0, 1.0], [0.0, -1.0]]), 1e-8)


def test_middle_split_swap():
    plus, minus = middle_split(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert plus.shape == (2, 1)
    assert minus.shape == (2, 1)
    assert np.allclose(np.abs(plus[:, 0]), 1 / np.sqrt(2))


def test_input_validation(torus_bundle):
    with pytest.raises(ScenarioError):
        ClassifierInput(torus_bundle, {(0, 1): np.zeros((2, 2))})
    with pytest.raises(ScenarioError):
        ClassifierInput(torus_bundle, {(0, 0): np.zeros((2, 2))})
    with pytest.raises(ScenarioError):
        ClassifierInput(BundleData(f=1, b=0, h=[[1, 1]]), t_zero={0: np.eye(1)})
    with pytest.raises(InvariantViolation):
        ClassifierInput(torus_bundle, {(0, 0): np.array([[1j]])})


def test_signature_sphere_circle(sphere_input):
    report = signature_check(sphere_input)
    assert report.h == 2
    assert report.dims == {0: 1}
    assert report.w_plus == report.w_minus == 1
    assert report.difference == 0
    assert report.eigen_defect < 1e-12


def test_signature_torus(dirichlet_input):
    report = signature_check(dirichlet_input)
    assert report.dims == {}
    assert report.w_plus == report.w_minus == 0


def test_signature_parity(circle_bundle):
    with pytest.raises(DimensionParityError):
        signature_check(ClassifierInput(circle_bundle))


def test_classification_report(sphere_input):
    report = classification_report(sphere_input)
    assert [degree["dimAp"] for degree in report["degrees"]] == [0, 0, 1, 1, 0]
    assert report["signature"]["wPlus"] == 1
    assert json.loads(json.dumps(report))["signature"]["wMinus"] == 1
    assert report["provenance"] == "user-supplied"


def test_computed_dirichlet_cone(torus_bundle):
    inp = compute_classifier_input(torus_bundle, vertex_factory(torus_bundle, BoundaryKind.DIRICHLET))
    assert inp.provenance == COMPUTED
    assert set(inp.c_tilde) == {(0, 0), (1, 0)}
    for T0 in inp.t_zero.values():
        assert np.allclose(T0, -np.eye(2), atol=1e-10)
    assert dims(inp) == {0: 0, 1: 0, 2: 1, 3: 1, 4: 0}


def test_computed_neumann_cone(torus_bundle):
    inp = compute_classifier_input(torus_bundle, vertex_factory(torus_bundle, BoundaryKind.NEUMANN))
    assert dims(inp) == {0: 0, 1: 2, 2: 3, 3: 1, 4: 0}


def test_attached_witness(torus_bundle, dirichlet_input):
    classifier = attach(dirichlet_input, vertex_factory(torus_bundle, BoundaryKind.DIRICHLET))
    result = classifier.classify(3, 2, np.ones(1))
    assert result.tag == VALUE_AT_2D
    assert result.field_norm > 0
    assert np.isfinite(result.closedness)


def test_exactness_value_route(tuned_scenario):
    result = exactness_check_lower(tuned_scenario, np.ones(1))
    assert result.route == "value"
    assert result.defect < 1e-8


def test_exactness_refuses_middle(middle_scenario):
    with pytest.raises(ScenarioError):
        exactness_check_lower(middle_scenario, np.ones(middle_scenario.m))


def minus_fields(scn):
    value = regular_value(scn, 0.0)
    _, minus = middle_split(value.T)
    return [value.eigenform(phi) for phi in minus.T]


def test_minus_space_field_vanishes(middle_scenario):
    fields = minus_fields(middle_scenario)
    assert fields
    for E in fields:
        assert E.interior is not None
        assert E.interior_norm() + interval_norm(E.cusp, 0.0, 1.0) <= 1e-8


@pytest.mark.parametrize("p", [1, 2])
def test_minus_space_field_vanishes_at_dirichlet_vertex(torus_bundle, p):
    scn = vertex_factory(torus_bundle, BoundaryKind.DIRICHLET)(p, 1)
    fields = minus_fields(scn)
    assert len(fields) == scn.m
    for E in fields:
        assert interval_norm(E.cusp, 0.0, 1.0) <= 1e-8
