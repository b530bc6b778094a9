import logging
import os

import numpy as np
import pytest

from cuspidal.bundle import BundleData, kunneth_table
from cuspidal.cavity import BoundaryCondition, BoundaryKind, Potential, tuned_well_depth
from cuspidal.scatter import make_scenario
from cuspidal.utils import scenario_from_yaml

logger = logging.getLogger(__name__)
logger.setLevel("DEBUG")


@pytest.fixture(scope="session", autouse=True)
def rootdir():
    return os.path.dirname(os.path.abspath(__file__))


def load_file_scenario(rootdir, name):
    path = os.path.join(rootdir, "files", name)
    with open(path, "r") as f:
        return scenario_from_yaml(f, base_dir=os.path.dirname(path))


@pytest.fixture(scope="session")
def circle_bundle():
    """Point base, circle fiber: one channel per degree with d = 1/2."""
    return BundleData(f=1, b=0, h=[[1, 1]])


@pytest.fixture(scope="session")
def torus_bundle():
    """Circle base, torus fiber, n + 1 = 4."""
    return kunneth_table([1, 1], [1, 2, 1])


@pytest.fixture(scope="session")
def free_scenario(circle_bundle):
    return make_scenario(circle_bundle, 0, 0, L=1.0)


@pytest.fixture(scope="session")
def tuned_scenario(circle_bundle):
    depth = tuned_well_depth(0.5, 1.0, 0.8)
    return make_scenario(circle_bundle, 0, 0, L=1.0, V=Potential.constant(depth))


@pytest.fixture(scope="session")
def dirichlet_cone(torus_bundle):
    return make_scenario(
        torus_bundle, 0, 0, L=1.0, vertex=BoundaryCondition(BoundaryKind.DIRICHLET)
    )


@pytest.fixture(scope="session")
def coupled_scenario(rootdir):
    return load_file_scenario(rootdir, "coupled.yml").scenario


@pytest.fixture(scope="session")
def middle_scenario(rootdir):
    return load_file_scenario(rootdir, "middle.yml").scenario


def single_channel_dtn(d, L, V, s):
    """Cavity DtN value q·cot(qL) of one channel with threshold d² and Dirichlet left end."""
    lam = s * (2 * d - s)
    q = np.sqrt(complex(lam - d * d - V))
    return q / np.tan(q * L)


def single_channel_t(d, L, V, s):
    """Closed form of T(s) for one channel: (N + o)/(o − N) with o = d − s."""
    N = single_channel_dtn(d, L, V, s)
    o = d - s
    return (N + o) / (o - N)
