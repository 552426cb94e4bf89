import numpy as np
import pytest

from tube_rmpc.geometry import HPolytope, contains_set, to_h
from tube_rmpc.sim import (
    DisturbancePolicy,
    _Sampler,
    classify_points,
    disturbance_invariant_bound,
    n_workers,
    roa_estimate,
    run_closed_loop,
    tube_snapshots,
)

from .conftest import THETA_STAR


def test_origin_stays_put(sys5, data5):
    tr = run_closed_loop(sys5, data5["Z_m2"], [0.0, 0.0], 10, DisturbancePolicy("zero"))
    assert np.allclose(tr.x, 0) and np.allclose(tr.cost, 0)
    assert tr.infeasible_at is None


def test_policy_validation():
    with pytest.raises(ValueError):
        DisturbancePolicy("gaussian")
    with pytest.raises(ValueError):
        DisturbancePolicy(theta=[2.0, 0, 0])
    with pytest.raises(ValueError):
        DisturbancePolicy("fixed_sequence")


@pytest.mark.parametrize("kind", ["uniform_box", "vertex_random"])
def test_draws_stay_in_w(sys5, kind):
    smp = _Sampler(sys5, DisturbancePolicy(kind, seed=3))
    W = to_h(sys5.W)
    for t in range(200):
        assert W.contains_point(smp.w(t))


def test_trace_replays_and_respects_constraints(sys5, data5):
    pol = DisturbancePolicy("uniform_box", seed=7, theta=THETA_STAR)
    tr = run_closed_loop(sys5, data5["Z_m2"], [10.0, -10.0], 30, pol)
    assert tr.infeasible_at is None and tr.T == 30
    assert tr.replay_error(sys5) == 0.0
    Z = sys5.Z
    for x, u in zip(tr.x[:-1], tr.u):
        assert np.all(Z.H @ np.r_[x, u] <= Z.h + 1e-9)
    assert np.all(tr.candidate_feasible) and np.all(tr.dagger_feasible)
    assert np.all(np.diff(tr.cost) <= 1e-6)
    assert len(tr.to_rows()[0]) == 1 + 2 + 1 + 1 + 10 + 1


def test_time_varying_model_error(sys5, data5):
    pol = DisturbancePolicy("vertex_random", seed=11, theta_walk=True)
    tr = run_closed_loop(sys5, data5["Z_m2"], [-20.0, 15.0], 25, pol)
    assert tr.infeasible_at is None
    assert np.all(tr.candidate_feasible)


def test_fixed_sequence_reproducible(sys5, data5):
    seq = np.tile([0.05, -0.05], (5, 1))
    pol = DisturbancePolicy("fixed_sequence", sequence=seq, theta=THETA_STAR)
    a = run_closed_loop(sys5, data5["Z_m0"], [5.0, 5.0], 5, pol)
    b = run_closed_loop(sys5, data5["Z_m0"], [5.0, 5.0], 5, pol)
    assert np.array_equal(a.x, b.x)
    assert np.allclose(a.w, seq)


def test_infeasible_start_reported(sys5, data5):
    tr = run_closed_loop(sys5, data5["Z_m2"], [100.0, 100.0], 5)
    assert tr.infeasible_at == 0 and tr.T == 0


def test_tube_snapshots_contain_realizations(sys5, data5):
    D = data5["Z_m2"]
    x0 = np.array([10.0, -10.0])
    ks = [0, 1, 2, 3]
    tubes = tube_snapshots(D, x0, ks)
    assert tubes[0].n_vertices == 1 and np.allclose(tubes[0].V[0], x0)
    from tube_rmpc.controller import solve_step

    r = solve_step(D, x0)
    H = [to_h(P) if P.n_vertices > 2 else None for P in tubes]
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = x0.copy()
        for k in range(1, 4):
            u = D.K @ x + r.v_star[k - 1]
            th = rng.uniform(-1, 1, 3)
            x = sys5.A_n @ x + sys5.B_n @ u + rng.uniform(-0.1, 0.1, 2) + sys5.dP_from_theta(th) @ np.r_[x, u]
            assert H[k].contains_point(x, 1e-8)


def test_final_state_in_invariant_bound(sys5, data5):
    D = data5["Z_m2"]
    pol = DisturbancePolicy("uniform_box", seed=0, theta=THETA_STAR)
    tr = run_closed_loop(sys5, D, [10.0, -10.0], 30, pol)
    F = disturbance_invariant_bound(sys5, D, D.lambda_inf)
    assert F.contains_point(tr.x[-1], 1e-6)


def test_roa_inside_terminal_set_fully_feasible(data5, terminals):
    S = terminals["Z_m2"].S_inf
    lo, hi = S.chebyshev[0] - 1.0, S.chebyshev[0] + 1.0
    assert contains_set(S, HPolytope.box(lo, hi))
    est = roa_estimate(data5["Z_m2"], np.c_[lo, hi], 12)
    assert est.feasible.all()
    assert est.area == pytest.approx(4.0)


def test_line_and_point_classification_agree(data5):
    D = data5["Z_m0"]
    xs = np.linspace(-69, 69, 24)
    ys = np.linspace(-39, 39, 12)
    pts = np.array([[a, b] for b in ys for a in xs])
    assert np.array_equal(classify_points(D, pts, 1, "lines"), classify_points(D, pts, 1, "points"))


def test_roa_deterministic_and_parallel_consistent(data5, monkeypatch):
    D = data5["Z_m0"]
    a = roa_estimate(D, [[-70, 70], [-40, 40]], 30, n_jobs=1)
    b = roa_estimate(D, [[-70, 70], [-40, 40]], 30, n_jobs=2)
    assert np.array_equal(a.feasible, b.feasible) and a.area == b.area
    assert 0 < a.refined < a.feasible.size
    monkeypatch.setenv("TUBE_RMPC_THREADS", "1")
    assert n_workers() == 1
