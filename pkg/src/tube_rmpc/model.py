"""Uncertain linear system with additive and multiplicative disturbance."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import AssumptionViolated
from .geometry import (
    HPolytope,
    Polytope,
    VPolytope,
    clean_rows,
    default_lp,
    from_dict,
    remove_redundancy,
    to_v,
)

SCHUR_TOL = 1e-10

log = logging.getLogger(__name__)


def vertices_from_basis(basis: Sequence[np.ndarray], bound: float = 1.0) -> list[np.ndarray]:
    """Vertices of ``{sum theta_i dP_i : |theta|_inf <= bound}``.

    These are the 2^p sign combinations of the basis, not the basis matrices
    themselves.
    """
    basis = [np.asarray(b, dtype=float) for b in basis]
    return [bound * sum(s * b for s, b in zip(signs, basis))
            for signs in itertools.product((-1.0, 1.0), repeat=len(basis))]


@dataclass(frozen=True, eq=False)
class UncertainSystem:
    A_n: np.ndarray
    B_n: np.ndarray
    K: np.ndarray
    dP_vertices: tuple
    W: Polytope
    Z: HPolytope
    dP_basis: Optional[tuple] = None
    theta_bound: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_n, dtype=float))
        B = np.asarray(self.B_n, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        n, m = B.shape
        if A.shape != (n, n):
            raise ValueError(f"A_n must be {n}x{n}, got {A.shape}")
        if K.shape != (m, n):
            raise ValueError(f"K must be {m}x{n}, got {K.shape}")
        verts = tuple(np.asarray(v, dtype=float).reshape(n, n + m) for v in self.dP_vertices)
        if self.W.dim != n or self.Z.dim != n + m:
            raise ValueError("W must live in R^n and Z in R^(n+m)")
        object.__setattr__(self, "A_n", A)
        object.__setattr__(self, "B_n", B)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "dP_vertices", verts)
        if self.dP_basis is not None:
            object.__setattr__(self, "dP_basis",
                               tuple(np.asarray(b, dtype=float).reshape(n, n + m) for b in self.dP_basis))

    @classmethod
    def from_basis(cls, A_n, B_n, K, basis, W, Z, theta_bound: float = 1.0) -> "UncertainSystem":
        return cls(A_n, B_n, K, tuple(vertices_from_basis(basis, theta_bound)), W, Z,
                   dP_basis=tuple(basis), theta_bound=theta_bound)

    @property
    def n(self) -> int:
        return self.B_n.shape[0]

    @property
    def m(self) -> int:
        return self.B_n.shape[1]

    @property
    def A_cl(self) -> np.ndarray:
        return self.A_n + self.B_n @ self.K

    @property
    def Pi(self) -> np.ndarray:
        """The stacked map ``[I; K]`` from states to state/input pairs."""
        return np.vstack([np.eye(self.n), self.K])

    @property
    def input_selector(self) -> np.ndarray:
        """``[0; I]``: places a free input ``v`` in the state/input space."""
        return np.vstack([np.zeros((self.n, self.m)), np.eye(self.m)])

    def with_gain(self, K) -> "UncertainSystem":
        return UncertainSystem(self.A_n, self.B_n, K, self.dP_vertices, self.W, self.Z,
                               self.dP_basis, self.theta_bound)

    def dP_from_theta(self, theta) -> np.ndarray:
        if self.dP_basis is None:
            raise ValueError("system was not built from a basis")
        theta = np.asarray(theta, dtype=float)
        return sum(t * b for t, b in zip(theta, self.dP_basis))

    def X_xu(self) -> HPolytope:
        return state_slice(self.Z, self.K)

    def to_dict(self) -> dict:
        d = {
            "A_n": self.A_n.tolist(),
            "B_n": self.B_n.tolist(),
            "K": self.K.tolist(),
            "W": self.W.to_dict(),
            "Z": self.Z.to_dict(),
        }
        if self.dP_basis is not None:
            d["dP_basis"] = [b.tolist() for b in self.dP_basis]
            d["theta_box"] = self.theta_bound
        else:
            d["dP_vertices"] = [v.tolist() for v in self.dP_vertices]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UncertainSystem":
        W = from_dict(d["W"])
        Z = from_dict(d["Z"])
        if not isinstance(Z, HPolytope):
            raise ValueError("Z must be given in facet form")
        if "dP_basis" in d:
            return cls.from_basis(d["A_n"], d["B_n"], d["K"], d["dP_basis"], W, Z,
                                  float(d.get("theta_box", 1.0)))
        return cls(d["A_n"], d["B_n"], d["K"], tuple(d["dP_vertices"]), W, Z)

    @classmethod
    def load(cls, path) -> "UncertainSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def state_slice(P: HPolytope, K) -> HPolytope:
    """``{x | [x; Kx] in P}``, redundancy-removed."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = K.shape[1]
    if P.dim != n + K.shape[0]:
        raise ValueError("P must live in R^(n+m)")
    Pi = np.vstack([np.eye(n), K])
    S = HPolytope(*clean_rows(P.H @ Pi, P.h))
    if S.is_empty:
        return S
    return remove_redundancy(S)


def nominal_step(x_bar, v, sys: UncertainSystem) -> np.ndarray:
    x_bar = np.asarray(x_bar, dtype=float)
    u_bar = sys.K @ x_bar + np.atleast_1d(v)
    return sys.A_n @ x_bar + sys.B_n @ u_bar


def md_realization(x, u, theta, dP_basis) -> np.ndarray:
    """Multiplicative disturbance ``(sum theta_i dP_i) [x; u]``."""
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)
    return sum(t * np.asarray(b, dtype=float) for t, b in zip(theta, dP_basis)) @ z


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)  # id -> (passed, detail)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p for p, _ in self.checks.values())

    def first_failure(self) -> Optional[str]:
        for k, (p, _) in self.checks.items():
            if not p:
                return k
        return None

    def raise_for_failure(self):
        bad = self.first_failure()
        if bad is not None:
            raise AssumptionViolated(bad, self.checks[bad][1])

    def to_dict(self) -> dict:
        return {
            "checks": {k: {"passed": bool(p), "detail": d} for k, (p, d) in self.checks.items()},
            "warnings": list(self.warnings),
        }


def _origin_interior(P: Polytope) -> bool:
    if isinstance(P, HPolytope):
        return P.origin_interior and not P.is_empty
    V = P.V
    return _origin_in_relative_interior([v for v in V]) and np.linalg.matrix_rank(V) == P.dim


def _origin_in_relative_interior(mats: Sequence[np.ndarray]) -> bool:
    """Origin strictly inside the relative interior of ``conv(mats)``.

    Solves ``max t`` over convex weights with every weight ``>= t``; the
    origin is relatively interior iff a strictly positive weighting exists.
    """
    X = np.array([np.asarray(M, dtype=float).ravel() for M in mats]).T
    k = X.shape[1]
    if np.allclose(X, 0):
        return False
    # variables: alpha (k), t
    c = np.r_[np.zeros(k), -1.0]
    A = np.vstack([np.hstack([X, np.zeros((X.shape[0], 1))]), np.r_[np.ones(k), 0.0]])
    b = np.r_[np.zeros(X.shape[0]), 1.0]
    G = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = default_lp().solve(c, G, np.zeros(k), A, b)
    return bool(res.optimal and -res.fun > 1e-12)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def validate(sys: UncertainSystem, strict: bool = False) -> ValidationReport:
    """Check the standing assumptions A1-A4.

    A3 is checked against the relative interior of the uncertainty polytope.
    A4 is checked vertex by vertex; that is only a necessary screen when the
    model error varies in time, which is reported as a warning.
    """
    rep = ValidationReport()
    rep.checks["A1"] = (_origin_interior(sys.Z), "Z contains the origin in its interior")
    w_ok = _origin_interior(sys.W)
    if w_ok and isinstance(sys.W, HPolytope):
        w_ok = sys.W.is_bounded
    rep.checks["A2"] = (w_ok, "W is a polytope containing the origin in its interior")
    rep.checks["A3"] = (_origin_in_relative_interior(sys.dP_vertices),
                        "P_delta contains the origin in its (relative) interior")
    radii = [spectral_radius((sys.A_n + D[:, :sys.n]) + (sys.B_n + D[:, sys.n:]) @ sys.K)
             for D in sys.dP_vertices]
    worst = max(radii) if radii else spectral_radius(sys.A_cl)
    worst = max(worst, spectral_radius(sys.A_cl))
    rep.checks["A4"] = (worst < 1.0 - SCHUR_TOL, f"max spectral radius over vertices {worst:.6g}")
    rep.warnings.append("A4 checked at the vertices of P_delta only; this does not imply "
                        "robust stability under time-varying model error")
    if strict:
        rep.raise_for_failure()
    for w in rep.warnings:
        log.info(w)
    return rep


def lqr_gain(A, B, Q=None, R=None) -> np.ndarray:
    """Discrete LQR gain in the ``u = Kx`` convention."""
    from scipy.linalg import solve_discrete_are

    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.eye(A.shape[0]) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(B.shape[1]) if R is None else np.asarray(R, dtype=float)
    P = solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def bounding_box(P: Polytope, big: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds; unbounded directions report +-``big``."""
    from .exceptions import Unbounded
    from .geometry import support

    d = P.dim
    lo, hi = np.full(d, -big), np.full(d, big)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        try:
            hi[i] = support(P, e)
        except Unbounded:
            pass
        try:
            lo[i] = -support(P, -e)
        except Unbounded:
            pass
    return lo, hi


def w_vertices(sys: UncertainSystem) -> VPolytope:
    return to_v(sys.W)
