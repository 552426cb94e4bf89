"""Polytope algebra over facet (H) and vertex (V) representations.

Minkowski sums and linear maps are carried out on vertices, Pontryagin
differences on facets via support offsets. Every other module consumes the
LP/QP oracle contract defined here.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, cKDTree, HalfspaceIntersection, QhullError

from .exceptions import Degenerate, GeometryError, Infeasible, Unbounded

FEAS_TOL = 1e-9
DEDUP_TOL = 1e-8
MAX_ENUM_DIM = 4


# ---------------------------------------------------------------------------
# optimization oracles
# ---------------------------------------------------------------------------

@dataclass
class OptResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "error"
    x: Optional[np.ndarray] = None
    fun: Optional[float] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LpOracle:
    """``min c'z  s.t.  Gz <= g, Az = b`` backed by HiGHS through scipy."""

    def __init__(self, tol: float = 1e-10):
        self.options = {
            "primal_feasibility_tolerance": tol,
            "dual_feasibility_tolerance": tol,
        }

    def solve(self, c, G=None, g=None, A=None, b=None) -> OptResult:
        c = np.asarray(c, dtype=float)
        res = linprog(c, A_ub=G, b_ub=g, A_eq=A, b_eq=b,
                      bounds=(None, None), method="highs", options=self.options)
        if res.status == 0:
            return OptResult("optimal", res.x, float(res.fun))
        if res.status == 2:
            return OptResult("infeasible")
        if res.status == 3:
            return OptResult("unbounded")
        return OptResult("error")


class QpOracle:
    """``min 1/2 z'Pz + c'z  s.t.  Gz <= g, Az = b`` backed by Clarabel.

    ``P`` must be positive semidefinite. A zero block (e.g. for the container
    scales of the controller) is fine.
    """

    def __init__(self, tol: float = 1e-10, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, P, c, G=None, g=None, A=None, b=None) -> OptResult:
        import clarabel
        from scipy import sparse

        P = np.asarray(P, dtype=float)
        c = np.asarray(c, dtype=float)
        nz = c.size
        blocks, rhs, cones = [], [], []
        if A is not None and len(A):
            blocks.append(np.atleast_2d(A))
            rhs.append(np.asarray(b, dtype=float))
            cones.append(clarabel.ZeroConeT(len(b)))
        if G is not None and len(G):
            blocks.append(np.atleast_2d(G))
            rhs.append(np.asarray(g, dtype=float))
            cones.append(clarabel.NonnegativeConeT(len(g)))
        Acon = sparse.csc_matrix(np.vstack(blocks)) if blocks else sparse.csc_matrix((0, nz))
        bcon = np.concatenate(rhs) if rhs else np.zeros(0)

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        solver = clarabel.DefaultSolver(sparse.triu(sparse.csc_matrix(P), format="csc"),
                                        c, Acon, bcon, cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        if status in ("Solved", "AlmostSolved"):
            x = np.asarray(sol.x)
            return OptResult("optimal", x, float(0.5 * x @ P @ x + c @ x))
        if "PrimalInfeasible" in status:
            return OptResult("infeasible")
        if "DualInfeasible" in status:
            return OptResult("unbounded")
        return OptResult("error")


_LP = LpOracle()


def default_lp() -> LpOracle:
    return _LP


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{x | H x <= h}``.

    Rows of ``H`` are facet normals. An all-zero row is not allowed; use
    :func:`clean_rows` to sanitize stacked constraints first.
    """

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).ravel()
        if H.shape[0] != h.shape[0]:
            raise ValueError(f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        if H.shape[0] and np.any(np.all(np.abs(H) == 0.0, axis=1)):
            raise ValueError("H contains an all-zero row")
        object.__setattr__(self, "H", _readonly(H))
        object.__setattr__(self, "h", _readonly(h))

    @classmethod
    def box(cls, lb, ub) -> "HPolytope":
        lb = np.atleast_1d(np.asarray(lb, dtype=float))
        ub = np.atleast_1d(np.asarray(ub, dtype=float))
        d = lb.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([ub, -lb]))

    @classmethod
    def from_rows(cls, H, h) -> "HPolytope":
        return cls(*clean_rows(H, h))

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_facets(self) -> int:
        return self.H.shape[0]

    @property
    def origin_interior(self) -> bool:
        return bool(self.n_facets == 0 or np.all(self.h > 0))

    @cached_property
    def chebyshev(self) -> tuple[Optional[np.ndarray], float]:
        """Center and radius of the largest inscribed ball (radius -inf if empty)."""
        norms = np.linalg.norm(self.H, axis=1)
        d = self.dim
        c = np.zeros(d + 1)
        c[-1] = -1.0
        G = np.hstack([self.H, norms[:, None]])
        # cap the radius so that unbounded slabs/cones still give an answer
        G = np.vstack([G, np.r_[np.zeros(d), 1.0]])
        g = np.r_[self.h, 1e9]
        res = default_lp().solve(c, G, g)
        if res.status == "infeasible":
            return None, -np.inf
        if not res.optimal:
            raise GeometryError("Chebyshev center LP failed")
        return res.x[:d], float(res.x[-1])

    @cached_property
    def is_empty(self) -> bool:
        _, r = self.chebyshev
        return r < -FEAS_TOL

    @cached_property
    def is_bounded(self) -> bool:
        if self.is_empty:
            return True
        for i in range(self.dim):
            for s in (1.0, -1.0):
                e = np.zeros(self.dim)
                e[i] = s
                res = default_lp().solve(-e, self.H, self.h)
                if res.status == "unbounded":
                    return False
        return True

    @cached_property
    def vertices(self) -> "VPolytope":
        return vertex_enum(self)

    def contains_point(self, x, tol: float = FEAS_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        norms = np.linalg.norm(self.H, axis=1)
        return bool(np.all(self.H @ x - self.h <= tol * np.maximum(norms, 1.0)))

    def scale(self, alpha: float) -> "HPolytope":
        if alpha < 0:
            raise ValueError("negative scale")
        return HPolytope(self.H, alpha * self.h)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    def __repr__(self) -> str:
        return f"HPolytope(dim={self.dim}, facets={self.n_facets})"


@dataclass(frozen=True, eq=False)
class VPolytope:
    """Convex hull of a finite point list (rows of ``V``)."""

    V: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[0] == 0:
            raise ValueError("a VPolytope needs at least one point")
        object.__setattr__(self, "V", _readonly(V))

    @classmethod
    def point(cls, x) -> "VPolytope":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.V.shape[0]

    @property
    def is_empty(self) -> bool:
        return False

    def scale(self, alpha: float) -> "VPolytope":
        return VPolytope(alpha * self.V)

    def contains_point(self, x, tol: float = FEAS_TOL) -> bool:
        return contains_set(self, VPolytope.point(x), tol)

    def to_dict(self) -> dict:
        return {"V": self.V.tolist()}

    def __repr__(self) -> str:
        return f"VPolytope(dim={self.dim}, vertices={self.n_vertices})"


Polytope = Union[HPolytope, VPolytope]


def from_dict(d: dict) -> Polytope:
    if "V" in d:
        return VPolytope(np.asarray(d["V"], dtype=float))
    return HPolytope(np.asarray(d["H"], dtype=float), np.asarray(d["h"], dtype=float))


def clean_rows(H, h, tol: float = 1e-14):
    """Drop all-zero rows; an infeasible zero row becomes an explicit empty set."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float)).ravel()
    zero = np.all(np.abs(H) <= tol, axis=1)
    if np.any(h[zero] < -FEAS_TOL):
        d = H.shape[1]
        e = np.zeros((2, d))
        e[0, 0], e[1, 0] = 1.0, -1.0
        return e, np.array([-1.0, -1.0])
    return H[~zero], h[~zero]


# ---------------------------------------------------------------------------
# canonicalization and representation conversion
# ---------------------------------------------------------------------------

def _affine_hull(P: np.ndarray, tol: float):
    """Return (origin, orthonormal basis of the affine hull directions)."""
    c = P.mean(axis=0)
    if P.shape[0] == 1:
        return c, np.zeros((P.shape[1], 0))
    _, s, Vt = np.linalg.svd(P - c, full_matrices=False)
    rank = int(np.sum(s > tol))
    return c, Vt[:rank].T


def _dedup(P: np.ndarray, tol: float) -> np.ndarray:
    """Greedy merge of points closer than ``tol`` in the max-norm (first one wins)."""
    if P.shape[0] < 2:
        return P
    pairs = cKDTree(P).query_pairs(tol, p=np.inf, output_type="ndarray")
    drop = np.zeros(P.shape[0], dtype=bool)
    if len(pairs):
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        for i, j in pairs:
            if not drop[i]:
                drop[j] = True
    return P[~drop]


def canonicalize(points) -> VPolytope:
    """Reduce a point list to the vertices of its convex hull.

    Lower-dimensional point sets are reduced inside their affine hull, so the
    result is still a valid (degenerate) V-polytope.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    diam = float(np.max(np.ptp(P, axis=0))) if P.shape[0] > 1 else 0.0
    tol = DEDUP_TOL * max(diam, 1.0)
    if P.shape[0] == 1 or diam <= tol:
        return VPolytope(P[:1])
    c, basis = _affine_hull(P, tol)
    r = basis.shape[1]
    if r == 0:
        return VPolytope(P[:1])
    Y = (P - c) @ basis
    if r == 1:
        return VPolytope(P[[int(np.argmin(Y[:, 0])), int(np.argmax(Y[:, 0]))]])
    try:
        hull = ConvexHull(Y)
    except QhullError:
        hull = ConvexHull(Y, qhull_options="QJ")
    return VPolytope(_dedup(P[np.sort(hull.vertices)], tol))


def affine_dim(P: VPolytope) -> int:
    V = P.V
    diam = float(np.max(np.ptp(V, axis=0))) if V.shape[0] > 1 else 0.0
    _, basis = _affine_hull(V, DEDUP_TOL * max(diam, 1.0))
    return basis.shape[1]


def facet_enum(P: VPolytope) -> HPolytope:
    """Facet form of a full-dimensional V-polytope.

    Raises :class:`Degenerate` (carrying the affine hull) for lower-dimensional
    inputs.
    """
    V = canonicalize(P.V).V
    d = V.shape[1]
    diam = float(np.max(np.ptp(V, axis=0))) if V.shape[0] > 1 else 0.0
    c, basis = _affine_hull(V, DEDUP_TOL * max(diam, 1.0))
    if basis.shape[1] < d:
        raise Degenerate(f"{basis.shape[1]}-dimensional set in R^{d}", origin=c, basis=basis)
    if d == 1:
        return HPolytope(np.array([[1.0], [-1.0]]), np.array([V.max(), -V.min()]))
    hull = ConvexHull(V)
    eq = hull.equations
    H = eq[:, :-1]
    h = -eq[:, -1]
    # qhull triangulates facets; merge coplanar pieces
    rows = []
    for hi, bi in zip(H, h):
        if not any(np.max(np.abs(hi - hj)) < 1e-9 and abs(bi - bj) < 1e-9 * max(1.0, abs(bi))
                   for hj, bj in rows):
            rows.append((hi, bi))
    return HPolytope(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))


def vertex_enum(P: HPolytope) -> VPolytope:
    """Vertices of a bounded, full-dimensional H-polytope (dimension <= 4)."""
    d = P.dim
    if d > MAX_ENUM_DIM:
        raise GeometryError(f"vertex enumeration supported for dim <= {MAX_ENUM_DIM}, got {d}")
    if P.is_empty:
        raise Infeasible("empty polytope has no vertices")
    if not P.is_bounded:
        raise Unbounded("vertex enumeration of an unbounded set")
    center, r = P.chebyshev
    if d == 1:
        H = P.H[:, 0]
        hi = np.min(P.h[H > 0] / H[H > 0])
        lo = np.max(P.h[H < 0] / H[H < 0])
        return VPolytope(np.array([[lo], [hi]]) if hi - lo > DEDUP_TOL else np.array([[lo]]))
    if r <= FEAS_TOL:
        raise Degenerate("lower-dimensional H-polytope", origin=center, basis=None)
    hs = HalfspaceIntersection(np.hstack([P.H, -P.h[:, None]]), center)
    return canonicalize(hs.intersections)


def remove_redundancy(P: HPolytope, tol: float = FEAS_TOL) -> HPolytope:
    """Greedy LP-based removal of redundant facets, rows normalized to unit length.

    A facet is dropped when maximizing its normal subject to the remaining
    facets does not exceed its offset by more than ``tol``. For bounded sets,
    facets that are strictly slack at every vertex are dropped without an LP.
    """
    if P.n_facets == 0:
        return P
    norms = np.linalg.norm(P.H, axis=1)
    H = P.H / norms[:, None]
    h = P.h / norms
    # parallel duplicates: keep the tightest
    order = np.lexsort(np.round(H, 12).T[::-1])
    keep_rows: list[int] = []
    for i in order:
        if keep_rows and np.max(np.abs(H[i] - H[keep_rows[-1]])) < 1e-12:
            if h[i] < h[keep_rows[-1]]:
                keep_rows[-1] = i
            continue
        keep_rows.append(i)
    keep_rows.sort()
    H, h = H[keep_rows], h[keep_rows]
    Q = HPolytope(H, h)
    if Q.is_empty:
        return Q

    active = np.ones(len(h), dtype=bool)
    candidates = range(len(h))
    if Q.dim <= MAX_ENUM_DIM and Q.is_bounded and Q.chebyshev[1] > FEAS_TOL and Q.dim > 1:
        V = Q.vertices.V
        slack = h[:, None] - H @ V.T
        touching = np.min(slack, axis=1) <= 1e-7 * max(1.0, float(np.max(np.abs(h))))
        active &= touching
        candidates = np.flatnonzero(touching)

    for i in candidates:
        others = active.copy()
        others[i] = False
        if not np.any(others):
            continue
        res = default_lp().solve(-H[i], H[others], h[others])
        if res.optimal and -res.fun <= h[i] + tol:
            active[i] = False
    return HPolytope(H[active], h[active])


def to_h(P: Polytope) -> HPolytope:
    return P if isinstance(P, HPolytope) else facet_enum(P)


def to_v(P: Polytope) -> VPolytope:
    return P if isinstance(P, VPolytope) else P.vertices


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def support(P: Polytope, d, lp: Optional[LpOracle] = None) -> float:
    """``max_{x in P} d'x``."""
    d = np.asarray(d, dtype=float).ravel()
    if d.size != P.dim:
        raise ValueError(f"direction has dimension {d.size}, set has {P.dim}")
    if isinstance(P, VPolytope):
        return float(np.max(P.V @ d))
    res = (lp or default_lp()).solve(-d, P.H, P.h)
    if res.status == "unbounded":
        raise Unbounded(f"support unbounded in direction {d}")
    if res.status == "infeasible":
        raise Infeasible("support of an empty set")
    if not res.optimal:
        raise GeometryError("support LP failed")
    return -res.fun


def support_offsets(P: Polytope, D) -> np.ndarray:
    """Row-wise supports ``[max_{x in P} D_i x]_i``."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if isinstance(P, VPolytope):
        return np.max(P.V @ D.T, axis=0) if D.shape[0] else np.zeros(0)
    return np.array([support(P, di) for di in D])


def _check_dims(A: Polytope, B: Polytope):
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")


def minkowski_sum(A: Polytope, B: Polytope) -> VPolytope:
    _check_dims(A, B)
    Va, Vb = to_v(A).V, to_v(B).V
    return canonicalize((Va[:, None, :] + Vb[None, :, :]).reshape(-1, Va.shape[1]))


def pontryagin_diff(A: HPolytope, B: Polytope) -> HPolytope:
    """``A - B`` in facet form; may be empty (check ``.is_empty``)."""
    _check_dims(A, B)
    return HPolytope(A.H, A.h - support_offsets(B, A.H))


def scaled_diff(A: HPolytope, lam1: float, B: Polytope, lam2: float) -> HPolytope:
    """``lam1*A - lam2*B = {x | H_A x <= lam1 h_A - lam2 Delta}``."""
    if lam1 < 0 or lam2 < 0:
        raise ValueError("scales must be nonnegative")
    if not A.origin_interior:
        raise ValueError("A must contain the origin in its interior")
    _check_dims(A, B)
    return HPolytope(A.H, lam1 * A.h - lam2 * support_offsets(B, A.H))


def linear_map(M, P: Polytope) -> VPolytope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise ValueError(f"map has {M.shape[1]} columns, set has dimension {P.dim}")
    return canonicalize(to_v(P).V @ M.T)


def intersect(A: HPolytope, B: HPolytope) -> HPolytope:
    _check_dims(A, B)
    C = HPolytope(np.vstack([A.H, B.H]), np.concatenate([A.h, B.h]))
    if C.is_empty:
        return C
    return remove_redundancy(C)


def contains_set(A: Polytope, B: Polytope, tol: float = FEAS_TOL) -> bool:
    """True iff ``B`` is a subset of ``A`` (checked facet-wise on ``A``)."""
    _check_dims(A, B)
    if B.is_empty:
        return True
    if isinstance(A, VPolytope):
        try:
            A = facet_enum(A)
        except Degenerate:
            # flat container: every point of B must lie in A's affine hull and hull
            Vb = to_v(B).V
            return all(_point_in_hull(A.V, p, tol) for p in Vb)
    if A.is_empty:
        return False
    norms = np.linalg.norm(A.H, axis=1)
    try:
        s = support_offsets(B, A.H)
    except Unbounded:
        return False
    return bool(np.all((s - A.h) / norms <= tol))


def _point_in_hull(V: np.ndarray, p: np.ndarray, tol: float) -> bool:
    k = V.shape[0]
    A = np.vstack([V.T, np.ones((1, k))])
    b = np.r_[p, 1.0]
    res = default_lp().solve(np.zeros(k), -np.eye(k), np.zeros(k), A, b)
    if not res.optimal:
        return False
    return bool(np.max(np.abs(A @ res.x - b)) <= max(tol, 1e-9))


def min_scale_containment(S: Polytope, X: HPolytope) -> float:
    """Smallest ``gamma >= 0`` with ``S`` inside ``gamma * X``."""
    if not X.origin_interior:
        raise ValueError("X must contain the origin in its interior")
    _check_dims(S, X)
    s = support_offsets(S, X.H)
    return max(0.0, float(np.max(s / X.h)))


def set_equal(A: Polytope, B: Polytope, tol: float = FEAS_TOL) -> bool:
    return contains_set(A, B, tol) and contains_set(B, A, tol)


def volume(P: Polytope, strict: bool = False) -> float:
    """Volume (length / area / volume) of a polytope of dimension 1-3.

    A lower-dimensional set has volume 0; with ``strict=True`` it raises
    :class:`Degenerate` instead.
    """
    V = canonicalize(to_v(P).V).V
    d = V.shape[1]
    if d > 3:
        raise GeometryError("volume supported for dim <= 3")
    if affine_dim(VPolytope(V)) < d:
        if strict:
            raise Degenerate("volume of a lower-dimensional set")
        return 0.0
    if d == 1:
        return float(V.max() - V.min())
    c = V.mean(axis=0)
    if d == 2:
        ang = np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0])
        W = V[np.argsort(ang)]
        x, y = W[:, 0], W[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
    hull = ConvexHull(V)
    total = 0.0
    for tri in hull.simplices:
        a, b, e = V[tri] - c
        total += abs(np.linalg.det(np.array([a, b, e]))) / 6.0
    return float(total)


def sum_of_maps(mats: Sequence[np.ndarray], P: Polytope) -> VPolytope:
    """``M_0 P (+) M_1 P (+) ...`` by repeated Minkowski sums."""
    acc = VPolytope.point(np.zeros(np.atleast_2d(mats[0]).shape[0]))
    for M in mats:
        acc = minkowski_sum(acc, linear_map(M, P))
    return acc
