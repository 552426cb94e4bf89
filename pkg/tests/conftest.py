import json

import numpy as np
import pytest

from tube_rmpc.cli import bundled_config_path
from tube_rmpc.container import container_chain
from tube_rmpc.controller import offline_prepare
from tube_rmpc.geometry import HPolytope, VPolytope
from tube_rmpc.model import UncertainSystem
from tube_rmpc.terminal import output_admissible_set

THETA_STAR = np.array([0.8, 0.2, -0.5])


@pytest.fixture(scope="session")
def example_config():
    return json.loads(bundled_config_path().read_text())


@pytest.fixture(scope="session")
def sys5(example_config):
    return UncertainSystem.from_dict(example_config["system"])


@pytest.fixture(scope="session")
def chain(sys5):
    return container_chain(sys5)


@pytest.fixture(scope="session")
def terminals(sys5, chain):
    return {k: output_admissible_set(sys5, chain[k], 10.0) for k in ("Z_m0", "Z_m1", "Z_m2")}


@pytest.fixture(scope="session")
def data5(sys5, chain, terminals):
    return {k: offline_prepare(sys5, chain[k], terminals[k], 10) for k in terminals}


def toy_1d(A=1.2, B=1.0, K=-0.5, xmax=10.0, umax=2.0, dP=0.0, w=0.0):
    """Scalar system; ``dP`` scales a single symmetric model-error direction."""
    Z = HPolytope.box([-xmax, -umax], [xmax, umax])
    W = VPolytope(np.array([[0.0]])) if w == 0 else HPolytope.box([-w], [w])
    verts = (np.array([[dP, 0.0]]), np.array([[-dP, 0.0]])) if dP else (np.zeros((1, 2)),)
    return UncertainSystem([[A]], [[B]], [[K]], verts, W, Z)


def random_polytope(rng, d, k=None, scale=1.0, center=None):
    """Hull of random points around ``center`` that keeps the origin strictly inside."""
    k = k or rng.integers(d + 2, 3 * d + 4)
    P = rng.normal(size=(k, d))
    P = np.vstack([P, np.eye(d), -np.eye(d)]) * scale
    if center is not None:
        P = P + center
    return P


ACCEPTANCE_LINES: list = []


def record(criterion: int, passed: bool, detail: str):
    line = f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
