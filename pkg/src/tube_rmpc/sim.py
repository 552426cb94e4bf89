"""Closed-loop simulation and grid estimates of the region of attraction."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .controller import (
    ControlResult,
    ControllerData,
    error_tube,
    feasible_lp,
    is_feasible,
    lambda_tighten,
    predicted_states,
    shifted_candidate,
    solve_step,
)
from .geometry import VPolytope, default_lp, canonicalize, minkowski_sum, to_h, to_v
from .model import UncertainSystem, bounding_box

POLICIES = ("vertex_random", "uniform_box", "fixed_sequence", "zero")


@dataclass
class DisturbancePolicy:
    kind: str = "uniform_box"
    seed: int = 0
    theta: Optional[Sequence[float]] = None
    theta_walk: bool = False
    sequence: Optional[np.ndarray] = None   # T x n, for fixed_sequence

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if self.theta is not None and np.max(np.abs(self.theta)) > 1.0 + 1e-12:
            raise ValueError("theta must satisfy |theta|_inf <= 1")
        if self.kind == "fixed_sequence" and self.sequence is None:
            raise ValueError("fixed_sequence needs a sequence")


class _Sampler:
    def __init__(self, sys: UncertainSystem, policy: DisturbancePolicy):
        self.sys = sys
        self.p = policy
        self.rng = np.random.default_rng(policy.seed)
        self.Wv = to_v(sys.W).V
        self.Wh = to_h(sys.W)
        self.lo, self.hi = bounding_box(sys.W)

    def w(self, t: int) -> np.ndarray:
        k = self.p.kind
        if k == "zero":
            return np.zeros(self.sys.n)
        if k == "fixed_sequence":
            return np.asarray(self.p.sequence[t], dtype=float)
        if k == "vertex_random":
            return self.Wv[self.rng.integers(len(self.Wv))].copy()
        while True:
            w = self.rng.uniform(self.lo, self.hi)
            if self.Wh.contains_point(w):
                return w

    def dP(self) -> np.ndarray:
        sys = self.sys
        if self.p.theta_walk:
            if sys.dP_basis is not None:
                th = self.rng.uniform(-sys.theta_bound, sys.theta_bound, len(sys.dP_basis))
                return sys.dP_from_theta(th)
            a = self.rng.dirichlet(np.ones(len(sys.dP_vertices)))
            return sum(ai * D for ai, D in zip(a, sys.dP_vertices))
        if self.p.theta is None:
            return np.zeros((sys.n, sys.n + sys.m))
        if sys.dP_basis is not None:
            return sys.theta_bound * sys.dP_from_theta(self.p.theta)
        return sum(ai * D for ai, D in zip(self.p.theta, sys.dP_vertices))


@dataclass
class SimulationTrace:
    x: np.ndarray                 # (T+1) x n, last row the state after the final step
    u: np.ndarray                 # T x m
    v: np.ndarray                 # T x m
    lam: np.ndarray               # T x N
    lam_dagger: np.ndarray        # T x N
    cost: np.ndarray
    feasible: np.ndarray
    w: np.ndarray
    w_M: np.ndarray
    candidate_feasible: np.ndarray   # shifted candidate feasible at x(t+1)
    dagger_feasible: np.ndarray      # tightened scales still feasible
    results: list = field(default_factory=list, repr=False)
    infeasible_at: Optional[int] = None

    @property
    def T(self) -> int:
        return len(self.u)

    def replay_error(self, sys: UncertainSystem) -> float:
        err = 0.0
        for t in range(self.T):
            nxt = sys.A_n @ self.x[t] + sys.B_n @ self.u[t] + self.w[t] + self.w_M[t]
            err = max(err, float(np.max(np.abs(nxt - self.x[t + 1]))))
        return err

    def to_rows(self):
        """Rows ``t, x..., u..., J, lambda_0..lambda_{N-1}, feasible``."""
        rows = []
        for t in range(self.T):
            rows.append([t, *self.x[t], *self.u[t], self.cost[t], *self.lam[t], int(self.feasible[t])])
        return rows


def run_closed_loop(sys: UncertainSystem, data: ControllerData, x0, T: int,
                    policy: Optional[DisturbancePolicy] = None) -> SimulationTrace:
    """Receding-horizon loop: solve, apply ``Kx + v*(0)``, propagate with drawn disturbances."""
    policy = policy or DisturbancePolicy()
    smp = _Sampler(sys, policy)
    n, m, N = sys.n, sys.m, data.N
    xs = [np.asarray(x0, dtype=float).ravel()]
    keys = ("u", "v", "lam", "lamd", "cost", "w", "wM", "cand", "dag")
    rec = {k: [] for k in keys}
    results = []
    warm = None
    infeasible_at = None
    for t in range(T):
        x = xs[-1]
        if warm is not None:
            rec["cand"].append(is_feasible(data, x, *warm))
        r: ControlResult = solve_step(data, x, warm)
        results.append(r)
        if not r.optimal:
            infeasible_at = t
            break
        lamd = lambda_tighten(r.v_star, r.lambda_star, data, x)
        rec["dag"].append(is_feasible(data, x, r.v_star, lamd))
        w = smp.w(t)
        wM = smp.dP() @ np.r_[x, r.u]
        xs.append(sys.A_n @ x + sys.B_n @ r.u + w + wM)
        for k, val in zip(keys, (r.u, r.v_star[0], r.lambda_star, lamd, r.cost, w, wM)):
            rec[k].append(val)
        warm = shifted_candidate(r, data)
    if warm is not None and len(rec["cand"]) < len(rec["u"]):
        rec["cand"].append(is_feasible(data, xs[-1], *warm))
    steps = len(rec["u"])
    arr = lambda k, shape: np.array(rec[k]).reshape(shape)  # noqa: E731
    return SimulationTrace(
        x=np.array(xs), u=arr("u", (steps, m)), v=arr("v", (steps, m)),
        lam=arr("lam", (steps, N)), lam_dagger=arr("lamd", (steps, N)),
        cost=np.array(rec["cost"]), feasible=np.ones(steps, dtype=bool),
        w=arr("w", (steps, n)), w_M=arr("wM", (steps, n)),
        candidate_feasible=np.array(rec["cand"], dtype=bool),
        dagger_feasible=np.array(rec["dag"], dtype=bool),
        results=results, infeasible_at=infeasible_at,
    )


def tube_snapshots(data: ControllerData, x0, k_list) -> list[VPolytope]:
    """Predicted tube cross-sections ``xbar*(k) + E(k)`` at the solution from ``x0``."""
    r = solve_step(data, x0)
    if not r.optimal:
        raise RuntimeError("online problem infeasible at x0")
    xb = predicted_states(data, x0, r.v_star)
    out = []
    for k in k_list:
        E = error_tube(data, r.lambda_star, k)
        out.append(canonicalize(E.V + xb[k]))
    return out


def disturbance_invariant_bound(sys: UncertainSystem, data: ControllerData, lam: float,
                                k_max: int = 30) -> VPolytope:
    """Truncated ``sum_{i<k_max} A_cl^i (W + lam PZ_m)``."""
    D = minkowski_sum(VPolytope(data.W_vertices), VPolytope(data.PZ_vertices * lam))
    acc = VPolytope.point(np.zeros(sys.n))
    A = sys.A_cl
    for i in range(k_max):
        acc = minkowski_sum(acc, VPolytope(D.V @ np.linalg.matrix_power(A, i).T))
    return acc


# ---------------------------------------------------------------------------
# region of attraction
# ---------------------------------------------------------------------------

def n_workers() -> int:
    env = os.environ.get("TUBE_RMPC_THREADS")
    cpu = os.cpu_count() or 1
    if env:
        return max(1, min(int(env), cpu))
    return cpu


def _classify(data: ControllerData, pts: np.ndarray) -> np.ndarray:
    return np.array([feasible_lp(data, p) for p in pts], dtype=bool)


def line_interval(data: ControllerData, rest, lp=None) -> tuple[float, float]:
    """Feasible range of the first state coordinate with the others fixed to ``rest``.

    The feasible states form a projection of a polytope, hence a convex set,
    so its intersection with a line is an interval found by two LPs. Returns
    ``(inf, -inf)`` when the line misses the set.
    """
    rest = np.asarray(rest, dtype=float).ravel()
    Gx = data.Gx
    g = data.g0 + Gx[:, 1:] @ rest
    G = np.hstack([-Gx[:, :1], data.G])
    c = np.zeros(G.shape[1])
    ends = []
    for sgn in (1.0, -1.0):
        c[0] = sgn
        res = (lp or default_lp()).solve(c, G, g)
        if res.status == "infeasible":
            return np.inf, -np.inf
        if res.status == "unbounded":
            ends.append(-sgn * np.inf)
        elif not res.optimal:
            raise RuntimeError(f"line LP returned {res.status}")
        else:
            ends.append(res.x[0])
    return float(ends[0]), float(ends[1])


def _classify_lines(data: ControllerData, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out = np.zeros(len(pts), dtype=bool)
    keys = {}
    for i, p in enumerate(pts):
        keys.setdefault(tuple(np.round(p[1:], 12)), []).append(i)
    for rest, idx in keys.items():
        lo, hi = line_interval(data, rest)
        x0 = pts[idx, 0]
        out[idx] = (x0 >= lo - tol) & (x0 <= hi + tol)
    return out


def classify_points(data: ControllerData, pts, n_jobs: Optional[int] = None,
                    method: str = "lines") -> np.ndarray:
    """Feasibility of the online problem at each point.

    ``method="points"`` solves one LP per point. ``"lines"`` groups points
    sharing all but the first coordinate and solves two LPs per group.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    fn = {"points": _classify, "lines": _classify_lines}[method]
    n_jobs = n_workers() if n_jobs is None else n_jobs
    if n_jobs <= 1 or len(pts) < 64:
        return fn(data, pts)
    if method == "lines":
        # split on line boundaries so each worker sees whole lines
        order = np.lexsort(pts[:, ::-1].T)
        pts_s = pts[order]
        chunks = np.array_split(np.arange(len(pts_s)), n_jobs)
        parts = Parallel(n_jobs=n_jobs)(delayed(fn)(data, pts_s[c]) for c in chunks)
        out = np.empty(len(pts), dtype=bool)
        out[order] = np.concatenate(parts)
        return out
    chunks = np.array_split(pts, min(len(pts), 8 * n_jobs))
    return np.concatenate(Parallel(n_jobs=n_jobs)(delayed(fn)(data, c) for c in chunks))


@dataclass
class RoaEstimate:
    centers: np.ndarray          # coarse grid centers
    feasible: np.ndarray         # coarse classification, grid-shaped
    cell_size: np.ndarray
    area: float
    refined: int = 0             # number of coarse cells subdivided

    def to_rows(self):
        flat = self.feasible.ravel()
        return [[*c, int(f)] for c, f in zip(self.centers, flat)]


def roa_estimate(data: ControllerData, box, resolution, refine: bool = True,
                 n_jobs: Optional[int] = None, method: str = "lines") -> RoaEstimate:
    """Classify grid-cell centers by feasibility of the online problem.

    ``area`` counts feasible cells; cells with a differently classified
    neighbour are split into ``2^d`` half-size cells and counted by those.
    Works in any dimension; the measure is a length in 1D and an area in 2D.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    res = np.atleast_1d(np.asarray(resolution, dtype=int))
    d = box.shape[0]
    if res.size == 1:
        res = np.full(d, int(res[0]))
    size = (box[:, 1] - box[:, 0]) / res
    axes = [box[i, 0] + size[i] * (np.arange(res[i]) + 0.5) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in mesh], axis=1)
    feas = classify_points(data, centers, n_jobs, method).reshape(tuple(res))
    cell = float(np.prod(size))
    measure = feas.astype(float) * cell
    n_ref = 0
    if refine:
        boundary = np.zeros_like(feas)
        for ax in range(d):
            diff = np.diff(feas.astype(np.int8), axis=ax) != 0
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            boundary[tuple(lo)] |= diff
            boundary[tuple(hi)] |= diff
        idx = np.argwhere(boundary)
        n_ref = len(idx)
        if n_ref:
            offs = np.array(np.meshgrid(*[[-0.25, 0.25]] * d, indexing="ij")).reshape(d, -1).T
            sub = np.concatenate([centers[np.ravel_multi_index(i, feas.shape)] + offs * size
                                  for i in map(tuple, idx)])
            sf = classify_points(data, sub, n_jobs, method).reshape(n_ref, -1)
            for (i, row) in zip(map(tuple, idx), sf):
                measure[i] = row.mean() * cell
    return RoaEstimate(centers, feas, size, float(measure.sum()), n_ref)
