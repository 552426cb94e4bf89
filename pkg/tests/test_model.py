import json

import numpy as np
import pytest

from tube_rmpc.exceptions import AssumptionViolated
from tube_rmpc.geometry import HPolytope, set_equal, volume
from tube_rmpc.model import (
    UncertainSystem,
    lqr_gain,
    md_realization,
    nominal_step,
    state_slice,
    validate,
    vertices_from_basis,
)


def test_example_passes_all_checks(sys5):
    rep = validate(sys5)
    assert rep.ok
    assert set(rep.checks) == {"A1", "A2", "A3", "A4"}
    assert rep.warnings


def test_zero_gain_still_schur(sys5):
    # |eig(A_n)| < 1 by direct computation
    assert np.max(np.abs(np.linalg.eigvals(sys5.A_n))) < 1
    assert validate(sys5.with_gain(np.zeros((1, 2)))).ok


def test_riccati_gain_matches_published(sys5):
    assert np.allclose(lqr_gain(sys5.A_n, sys5.B_n), sys5.K, atol=5e-5)


def test_unstable_gain_fails_a4(sys5):
    rep = validate(sys5.with_gain([[0.0, 3.0]]))
    assert not rep.checks["A4"][0]
    with pytest.raises(AssumptionViolated) as e:
        rep.raise_for_failure()
    assert e.value.assumption == "A4"


def test_z_without_origin_fails_a1(sys5):
    Z = HPolytope(sys5.Z.H, np.r_[sys5.Z.h[:-1], -0.5])
    bad = UncertainSystem(sys5.A_n, sys5.B_n, sys5.K, sys5.dP_vertices, sys5.W, Z)
    with pytest.raises(AssumptionViolated) as e:
        validate(bad, strict=True)
    assert e.value.assumption == "A1"


def test_zero_uncertainty_fails_a3(sys5):
    bad = UncertainSystem(sys5.A_n, sys5.B_n, sys5.K, (np.zeros((2, 3)),), sys5.W, sys5.Z)
    assert not validate(bad).checks["A3"][0]


def test_dimension_errors(sys5):
    with pytest.raises(ValueError):
        UncertainSystem(np.eye(3), sys5.B_n, sys5.K, sys5.dP_vertices, sys5.W, sys5.Z)
    with pytest.raises(ValueError):
        UncertainSystem(sys5.A_n, sys5.B_n, [[1.0]], sys5.dP_vertices, sys5.W, sys5.Z)


def test_basis_vertices_are_sign_combinations(sys5):
    assert len(sys5.dP_vertices) == 8
    V = vertices_from_basis(sys5.dP_basis)
    assert np.allclose(V[0], -sum(sys5.dP_basis))
    assert np.allclose(V[-1], sum(sys5.dP_basis))


def test_json_round_trip(sys5, tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(sys5.to_dict()))
    s2 = UncertainSystem.load(p)
    assert np.allclose(s2.A_cl, sys5.A_cl)
    assert all(np.allclose(a, b) for a, b in zip(s2.dP_vertices, sys5.dP_vertices))
    d = sys5.to_dict()
    d.pop("dP_basis")
    d["dP_vertices"] = [v.tolist() for v in sys5.dP_vertices]
    s3 = UncertainSystem.from_dict(d)
    assert s3.dP_basis is None and len(s3.dP_vertices) == 8


def test_state_slice_matches_hand_computation(sys5):
    X = state_slice(sys5.Z, sys5.K)
    # |x2| <= 30 and |K x| <= 1
    H = np.array([[0, 1], [0, -1.0]] + [list(sys5.K[0]), list(-sys5.K[0])])
    ref = HPolytope(H, [30, 30, 1, 1])
    assert set_equal(X, ref)
    assert volume(X) > 0


def test_nominal_and_md_realization(sys5):
    x, v = np.array([1.0, -2.0]), np.array([0.3])
    u = sys5.K @ x + v
    assert np.allclose(nominal_step(x, v, sys5), sys5.A_n @ x + sys5.B_n @ u)
    th = np.array([0.8, 0.2, -0.5])
    assert np.allclose(md_realization(x, u, th, sys5.dP_basis), sys5.dP_from_theta(th) @ np.r_[x, u])
