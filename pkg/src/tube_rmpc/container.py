"""Container shapes and the multiplicative-disturbance image they induce."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    HPolytope,
    LpOracle,
    Polytope,
    VPolytope,
    canonicalize,
    clean_rows,
    default_lp,
    facet_enum,
    intersect,
    remove_redundancy,
    support_offsets,
    to_h,
    to_v,
)
from .exceptions import Degenerate
from .model import UncertainSystem, bounding_box, state_slice


def md_image(dP_vertices: Sequence[np.ndarray], Z: Polytope) -> VPolytope:
    """Hull of every vertex-pair product ``dP_i z_j``."""
    Vz = to_v(Z).V
    pts = np.vstack([Vz @ np.asarray(D, dtype=float).T for D in dP_vertices])
    return canonicalize(pts)


def container_preimage(dP_vertices: Sequence[np.ndarray], WM: Polytope,
                       box: Optional[HPolytope] = None) -> HPolytope:
    """Largest ``Z`` with ``P_delta Z`` inside ``WM``: rows ``H_WM dP_i`` for every vertex.

    The result can be unbounded along directions every ``dP_i`` annihilates;
    pass ``box`` to clip it.
    """
    WMh = to_h(WM)
    if not WMh.origin_interior:
        raise ValueError("WM must contain the origin in its interior")
    H = np.vstack([WMh.H @ np.asarray(D, dtype=float) for D in dP_vertices])
    h = np.tile(WMh.h, len(dP_vertices))
    Zm = HPolytope(*clean_rows(H, h))
    if box is not None:
        return intersect(Zm, box)
    return remove_redundancy(Zm)


def default_preimage_box(sys: UncertainSystem, factor: float = 1e3) -> HPolytope:
    """``factor`` times the bounding box of ``Z``; unbounded axes reuse the largest finite half-width."""
    lo, hi = bounding_box(sys.Z)
    half = np.maximum(np.abs(lo), np.abs(hi))
    finite = half[np.isfinite(half)]
    fallback = float(np.max(finite)) if finite.size else 1.0
    half = np.where(np.isfinite(half), half, fallback)
    return HPolytope.box(-factor * half, factor * half)


def default_container(n: int, m: int, grid: tuple[int, int] = (5, 5)) -> VPolytope:
    """Inner polytope of the unit ball in ``R^(n+m)``.

    For ``n + m == 3`` the vertices are a spherical grid with both angles
    spaced evenly over ``[0, 2*pi]`` (endpoints included); with the default
    5x5 grid this collapses to the unit octahedron. Other dimensions use the
    cross-polytope together with the normalized cube corners.
    """
    d = n + m
    if d == 3:
        th = np.linspace(0.0, 2 * np.pi, grid[0])
        ph = np.linspace(0.0, 2 * np.pi, grid[1])
        pts = np.array([[np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)]
                        for t in th for p in ph])
    else:
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T / np.sqrt(d)
        pts = np.vstack([np.eye(d), -np.eye(d), corners])
    pts[np.abs(pts) < 1e-15] = 0.0
    return canonicalize(pts)


@dataclass(frozen=True, eq=False)
class ContainerSpec:
    """A container shape together with its state slice and MD image."""

    Z_m: HPolytope
    Z_m_V: VPolytope
    X_m: HPolytope
    PZ_m: VPolytope
    PZ_m_H: Optional[HPolytope]  # None when the image is flat
    label: str = ""

    @property
    def dim(self) -> int:
        return self.Z_m.dim


def make_container(sys: UncertainSystem, Z_m: Polytope, label: str = "") -> ContainerSpec:
    Zh = remove_redundancy(to_h(Z_m))
    if not Zh.origin_interior:
        raise ValueError("container must contain the origin in its interior")
    Zv = to_v(Z_m) if isinstance(Z_m, VPolytope) else Zh.vertices
    PZ = md_image(sys.dP_vertices, Zv)
    try:
        PZh = facet_enum(PZ)
    except Degenerate:
        PZh = None
    return ContainerSpec(Zh, canonicalize(Zv.V), state_slice(Zh, sys.K), PZ, PZh, label)


# ---------------------------------------------------------------------------
# enlarging the MD image
# ---------------------------------------------------------------------------

@dataclass
class Relaxation:
    """Which support-preservation families to keep and how far to look ahead.

    ``keep_Z``: rows of Z under ``Pi A_cl^i`` (always sensible).
    ``keep_Zm``: rows of the current container under ``Pi A_cl^i``.
    ``keep_Sinf``: rows of the terminal set under ``A_cl^i``.
    ``keep_Sj``: rows of the first ``N_j`` admissible sets, no map.
    Powers run over ``1..N_i``.
    """

    N_i: int = 3
    N_j: int = 1
    keep_Z: bool = True
    keep_Zm: bool = False
    keep_Sinf: bool = False
    keep_Sj: bool = False

    @classmethod
    def keep_all(cls, N_i: int, N_j: int) -> "Relaxation":
        return cls(N_i, N_j, True, True, True, True)


@dataclass
class WmOptimization:
    WM: VPolytope
    beta: np.ndarray
    rows: np.ndarray = field(repr=False)       # constraint directions used
    caps: np.ndarray = field(repr=False)       # beta=1 supports along them


def _support_rows(sys: UncertainSystem, Z_m0: Optional[HPolytope], S_inf0: Optional[HPolytope],
                  S_chain: Sequence[HPolytope], relax: Relaxation) -> np.ndarray:
    A = sys.A_cl
    Pi = sys.Pi
    powers = [np.linalg.matrix_power(A, i) for i in range(1, relax.N_i + 1)]
    rows = []
    if relax.keep_Z:
        rows += [sys.Z.H @ Pi @ Ai for Ai in powers]
    if relax.keep_Zm and Z_m0 is not None:
        rows += [Z_m0.H @ Pi @ Ai for Ai in powers]
    if relax.keep_Sinf and S_inf0 is not None:
        rows += [S_inf0.H @ Ai for Ai in powers]
    if relax.keep_Sj:
        rows += [S.H for S in list(S_chain)[:relax.N_j]]
    if not rows:
        return np.zeros((0, sys.n))
    return np.vstack(rows)


def optimize_wm(sys: UncertainSystem, WM0: Polytope, Z_m0: Optional[HPolytope] = None,
                S_chain: Sequence[HPolytope] = (), S_inf0: Optional[HPolytope] = None,
                relax: Optional[Relaxation] = None, weights=None, beta_max: float = 1e3,
                lp: Optional[LpOracle] = None) -> WmOptimization:
    """Scale the vertices of ``WM0`` outward without changing selected supports.

    Solves ``max sum_l w_l beta_l`` subject to ``beta_l >= 1`` and, for every
    retained direction ``r``, ``beta_l r'w_l <= max_l r'w_l``. With
    ``beta >= 1`` these caps make the support of the enlarged set along ``r``
    equal to the original one.
    """
    relax = relax or Relaxation()
    W0 = to_v(WM0).V
    L = W0.shape[0]
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
    R = _support_rows(sys, Z_m0, S_inf0, S_chain, relax)
    vals = W0 @ R.T                          # L x rows
    caps = np.max(vals, axis=0) if R.shape[0] else np.zeros(0)
    G, g = [], []
    for l in range(L):
        pos = vals[l] > 0
        for r in np.flatnonzero(pos):
            row = np.zeros(L)
            row[l] = vals[l, r]
            G.append(row)
            g.append(caps[r])
    G.append(-np.eye(L))
    g.append(-np.ones(L))
    G.append(np.eye(L))
    g.append(np.full(L, beta_max))
    G = np.vstack([np.atleast_2d(x) for x in G])
    g = np.concatenate([np.atleast_1d(x) for x in g])
    res = (lp or default_lp()).solve(-w, G, g)
    if not res.optimal:
        raise RuntimeError(f"container enlargement LP returned {res.status}")
    beta = np.maximum(res.x, 1.0)
    return WmOptimization(canonicalize(W0 * beta[:, None]), beta, R, caps)


def supports_preserved(opt: WmOptimization, WM0: Polytope, tol: float = 1e-9) -> bool:
    if not opt.rows.shape[0]:
        return True
    a = support_offsets(to_v(WM0), opt.rows)
    b = support_offsets(opt.WM, opt.rows)
    return bool(np.max(np.abs(a - b)) <= tol * max(1.0, float(np.max(np.abs(a)))))


def container_chain(sys: UncertainSystem, grid=(5, 5), relax: Optional[Relaxation] = None,
                    box: Optional[HPolytope] = None) -> dict:
    """Default shape, its preimage container, and the enlarged-image container."""
    box = default_preimage_box(sys) if box is None else box
    Z0v = default_container(sys.n, sys.m, grid)
    c0 = make_container(sys, Z0v, "Z_m0")
    Z1 = container_preimage(sys.dP_vertices, c0.PZ_m_H, box)
    c1 = make_container(sys, Z1, "Z_m1")
    opt = optimize_wm(sys, c0.PZ_m, Z_m0=c0.Z_m, relax=relax)
    Z2 = container_preimage(sys.dP_vertices, facet_enum(opt.WM), box)
    c2 = make_container(sys, Z2, "Z_m2")
    return {"Z_m0": c0, "Z_m1": c1, "Z_m2": c2, "wm_opt": opt}
