"""Offline tightening offsets and the online container-tube QP."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .container import ContainerSpec
from .geometry import LpOracle, QpOracle, VPolytope, default_lp, support_offsets, to_v
from .model import UncertainSystem
from .terminal import TerminalSet

ROW_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class ControllerData:
    """Everything the online problem needs, fixed once per (system, container, terminal, N).

    ``dZm_md[j]`` is the support offset of ``Pi A_cl^j PZ_m`` against the
    container facets (``dZ_md``: against Z, ``dS_md``: against the terminal
    set with the identity in place of ``Pi``). ``dZm_w[k]`` is the same for
    ``Pi sum_{i<k} A_cl^i W``.
    """

    N: int
    psi: np.ndarray
    A_n: np.ndarray
    B_n: np.ndarray
    K: np.ndarray
    H_Zm: np.ndarray
    h_Zm: np.ndarray
    H_Z: np.ndarray
    h_Z: np.ndarray
    H_S: np.ndarray
    h_S: np.ndarray
    dZm_md: np.ndarray   # N x N_Zm
    dZ_md: np.ndarray    # N x N_Z
    dS_md: np.ndarray    # N x N_S
    dZm_w: np.ndarray    # (N+1) x N_Zm
    dZ_w: np.ndarray     # (N+1) x N_Z
    dS_w: np.ndarray     # (N+1) x N_S
    gamma_inf: float
    lambda_inf: float
    W_vertices: np.ndarray
    PZ_vertices: np.ndarray
    lambda_cap: Optional[float] = None
    G: np.ndarray = field(default=None, repr=False)
    g0: np.ndarray = field(default=None, repr=False)
    Gx: np.ndarray = field(default=None, repr=False)
    row_labels: tuple = field(default=(), repr=False)

    def __post_init__(self):
        np.linalg.cholesky(self.psi)
        if self.G is None:
            G, g0, Gx, labels = _assemble(self)
            object.__setattr__(self, "G", G)
            object.__setattr__(self, "g0", g0)
            object.__setattr__(self, "Gx", Gx)
            object.__setattr__(self, "row_labels", labels)

    @property
    def n(self) -> int:
        return self.A_n.shape[0]

    @property
    def m(self) -> int:
        return self.B_n.shape[1]

    @property
    def A_cl(self) -> np.ndarray:
        return self.A_n + self.B_n @ self.K

    @property
    def Pi(self) -> np.ndarray:
        return np.vstack([np.eye(self.n), self.K])

    @property
    def n_vars(self) -> int:
        return self.N * self.m + self.N

    @property
    def lcon(self) -> dict:
        return {"Z_m": len(self.h_Zm), "Z": len(self.h_Z), "S_inf": len(self.h_S)}

    @property
    def n_rows_formula(self) -> int:
        c = self.lcon
        return self.N * (c["Z_m"] + c["Z"]) + c["S_inf"] + self.N

    _ARRAYS = ("psi", "A_n", "B_n", "K", "H_Zm", "h_Zm", "H_Z", "h_Z", "H_S", "h_S",
               "dZm_md", "dZ_md", "dS_md", "dZm_w", "dZ_w", "dS_w", "W_vertices", "PZ_vertices")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in self._ARRAYS}
        d.update(N=self.N, gamma_inf=self.gamma_inf, lambda_inf=self.lambda_inf,
                 lambda_cap=self.lambda_cap,
                 powers=[np.linalg.matrix_power(self.A_cl, i).tolist() for i in range(self.N)],
                 n_vars=self.n_vars, n_rows=int(self.G.shape[0]))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerData":
        kw = {k: np.asarray(d[k], dtype=float) for k in cls._ARRAYS}
        return cls(N=int(d["N"]), gamma_inf=float(d["gamma_inf"]), lambda_inf=float(d["lambda_inf"]),
                   lambda_cap=d.get("lambda_cap"), **kw)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ControllerData":
        return cls.from_dict(json.loads(Path(path).read_text()))


def offline_prepare(sys: UncertainSystem, c: ContainerSpec, T: TerminalSet, N: int = 10,
                    psi=None, lambda_cap: Optional[float] = None) -> ControllerData:
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    psi = np.eye(sys.m) if psi is None else np.atleast_2d(np.asarray(psi, dtype=float))
    if not np.allclose(psi, psi.T):
        raise ValueError("psi must be symmetric")
    A, Pi = sys.A_cl, sys.Pi
    powers = [np.linalg.matrix_power(A, i) for i in range(N + 1)]
    Wv = to_v(sys.W)
    PZ = c.PZ_m
    HZm, hZm = c.Z_m.H, c.Z_m.h
    HZ, hZ = sys.Z.H, sys.Z.h
    HS, hS = T.S_inf.H, T.S_inf.h

    def md(H, M):
        return np.array([support_offsets(PZ, H @ M @ powers[j]) for j in range(N)])

    def wsum(H, M):
        out = np.zeros((N + 1, H.shape[0]))
        for k in range(1, N + 1):
            out[k] = out[k - 1] + support_offsets(Wv, H @ M @ powers[k - 1])
        return out

    I = np.eye(sys.n)
    return ControllerData(
        N=N, psi=psi, A_n=sys.A_n, B_n=sys.B_n, K=sys.K,
        H_Zm=HZm, h_Zm=hZm, H_Z=HZ, h_Z=hZ, H_S=HS, h_S=hS,
        dZm_md=md(HZm, Pi), dZ_md=md(HZ, Pi), dS_md=md(HS, I),
        dZm_w=wsum(HZm, Pi), dZ_w=wsum(HZ, Pi), dS_w=wsum(HS, I),
        gamma_inf=float(T.gamma_inf), lambda_inf=float(T.lambda_inf),
        W_vertices=Wv.V, PZ_vertices=PZ.V, lambda_cap=lambda_cap,
    )


def prediction_maps(data: ControllerData):
    """``xbar(k) = Ax[k] x + Bv[k] v`` for ``k = 0..N``."""
    n, m, N = data.n, data.m, data.N
    A, B = data.A_cl, data.B_n
    Ax = [np.linalg.matrix_power(A, k) for k in range(N + 1)]
    Bv = [np.zeros((n, N * m)) for _ in range(N + 1)]
    for k in range(1, N + 1):
        Bv[k] = A @ Bv[k - 1]
        Bv[k][:, (k - 1) * m:k * m] += B
    return Ax, Bv


def _assemble(data: ControllerData):
    """Constant constraint matrix ``G`` and the affine right-hand side ``g0 + Gx x``."""
    n, m, N = data.n, data.m, data.N
    nv = N * m
    Ax, Bv = prediction_maps(data)
    Pi = data.Pi
    Eu = np.vstack([np.zeros((n, m)), np.eye(m)])
    G, g0, Gx, labels = [], [], [], []

    def tube_rows(H, dmd, k, diag_h):
        # rows of H(Pi xbar(k) + Eu v(k)) + sum_j lam(k-1-j) dmd[j] (- lam(k) h)
        r = H.shape[0]
        blk = np.zeros((r, nv + N))
        blk[:, :nv] = H @ Pi @ Bv[k]
        blk[:, k * m:(k + 1) * m] += H @ Eu
        for j in range(k):
            blk[:, nv + k - 1 - j] += dmd[j]
        if diag_h is not None:
            blk[:, nv + k] -= diag_h
        return blk, -H @ Pi @ Ax[k]

    for k in range(N):
        blk, gx = tube_rows(data.H_Zm, data.dZm_md, k, data.h_Zm)
        G.append(blk); Gx.append(gx); g0.append(-data.dZm_w[k])
        labels += [f"container[{k}]"] * blk.shape[0]
    for k in range(N):
        blk, gx = tube_rows(data.H_Z, data.dZ_md, k, None)
        G.append(blk); Gx.append(gx); g0.append(data.h_Z - data.dZ_w[k])
        labels += [f"admissible[{k}]"] * blk.shape[0]
    HS = data.H_S
    blk = np.zeros((HS.shape[0], nv + N))
    blk[:, :nv] = HS @ Bv[N]
    for j in range(N):
        blk[:, nv + N - 1 - j] += data.dS_md[j]
    G.append(blk); Gx.append(-HS @ Ax[N]); g0.append(data.h_S - data.dS_w[N])
    labels += ["terminal"] * HS.shape[0]
    blk = np.zeros((N, nv + N))
    blk[:, nv:] = -np.eye(N)
    G.append(blk); Gx.append(np.zeros((N, n))); g0.append(np.zeros(N))
    labels += ["lambda_nonneg"] * N
    if data.lambda_cap is not None:
        blk = np.zeros((N, nv + N))
        blk[:, nv:] = np.eye(N)
        G.append(blk); Gx.append(np.zeros((N, n))); g0.append(np.full(N, data.lambda_cap))
        labels += ["lambda_cap"] * N
    return np.vstack(G), np.concatenate(g0), np.vstack(Gx), tuple(labels)


@dataclass
class QpInstance:
    P: np.ndarray
    c: np.ndarray
    G: np.ndarray
    g: np.ndarray
    row_labels: tuple = field(repr=False)

    @property
    def n_vars(self) -> int:
        return self.P.shape[0]

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]


def cost_matrix(data: ControllerData) -> np.ndarray:
    N, m = data.N, data.m
    P = np.zeros((N * m + N, N * m + N))
    P[:N * m, :N * m] = np.kron(np.eye(N), 2 * data.psi)
    return P


def build_qp(data: ControllerData, x) -> QpInstance:
    x = np.asarray(x, dtype=float).ravel()
    return QpInstance(cost_matrix(data), np.zeros(data.n_vars), data.G,
                      data.g0 + data.Gx @ x, data.row_labels)


def split(data: ControllerData, z):
    nv = data.N * data.m
    return np.asarray(z[:nv]).reshape(data.N, data.m), np.asarray(z[nv:])


def cost_of(data: ControllerData, v) -> float:
    v = np.asarray(v, dtype=float).reshape(data.N, data.m)
    return float(np.einsum("ki,ij,kj->", v, data.psi, v))


def row_residuals(data: ControllerData, x, v, lam) -> np.ndarray:
    """``G z - g(x)``; feasible iff every entry is <= 0."""
    z = np.concatenate([np.asarray(v, dtype=float).ravel(), np.asarray(lam, dtype=float).ravel()])
    return data.G @ z - (data.g0 + data.Gx @ np.asarray(x, dtype=float).ravel())


def is_feasible(data: ControllerData, x, v, lam, tol: float = ROW_TOL) -> bool:
    return bool(np.max(row_residuals(data, x, v, lam)) <= tol)


@dataclass
class ControlResult:
    status: str                       # "optimal" | "infeasible"
    u: Optional[np.ndarray] = None
    v_star: Optional[np.ndarray] = None
    lambda_star: Optional[np.ndarray] = None
    cost: float = np.nan
    x: Optional[np.ndarray] = None
    active_rows: tuple = ()
    source: str = "qp"                # "qp" or "candidate" when the warm start had to stand in

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_step(data: ControllerData, x, warm=None, qp: Optional[QpOracle] = None) -> ControlResult:
    """Solve the online problem at ``x``; ``u = Kx + v*(0)``.

    The interior-point oracle cannot be warm-started. A feasible ``warm``
    candidate still serves as a certificate: if the solver fails on a problem
    the candidate proves feasible, the candidate is returned instead.
    """
    x = np.asarray(x, dtype=float).ravel()
    inst = build_qp(data, x)
    res = (qp or QpOracle()).solve(inst.P, inst.c, inst.G, inst.g)
    if res.optimal:
        v, lam = split(data, res.x)
        lam = np.maximum(lam, 0.0)
    elif warm is not None and is_feasible(data, x, *warm):
        v, lam = (np.asarray(warm[0], dtype=float).reshape(data.N, data.m), np.asarray(warm[1]))
        return _result(data, x, v, lam, source="candidate")
    else:
        return ControlResult("infeasible", x=x)
    return _result(data, x, v, lam)


def _result(data, x, v, lam, source="qp") -> ControlResult:
    r = row_residuals(data, x, v, lam)
    active = tuple(data.row_labels[i] for i in np.flatnonzero(r > -1e-6))
    u = data.K @ x + v[0]
    return ControlResult("optimal", u, v, lam, cost_of(data, v), x, active, source)


def feasible_lp(data: ControllerData, x, lp: Optional[LpOracle] = None) -> bool:
    """Feasibility of the online constraints at ``x`` (same rows, zero objective)."""
    g = data.g0 + data.Gx @ np.asarray(x, dtype=float).ravel()
    res = (lp or default_lp()).solve(np.zeros(data.n_vars), data.G, g)
    return res.optimal


def shifted_candidate(prev: ControlResult, data: ControllerData):
    """Drop the first move, append ``v = 0`` and the terminal container scale."""
    if not prev.optimal:
        raise ValueError("candidate needs an optimal previous solution")
    v = np.vstack([prev.v_star[1:], np.zeros((1, data.m))])
    lam = np.r_[prev.lambda_star[1:], data.gamma_inf]
    return v, lam


def lambda_tighten(v_star, lambda_star, data: ControllerData, x) -> np.ndarray:
    """Smallest container scales for the given inputs, computed forward in ``k``."""
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v_star, dtype=float).reshape(data.N, data.m)
    Ax, Bv = prediction_maps(data)
    Pi = data.Pi
    Eu = np.vstack([np.zeros((data.n, data.m)), np.eye(data.m)])
    lam = np.zeros(data.N)
    for k in range(data.N):
        zbar = Pi @ (Ax[k] @ x + Bv[k] @ v.ravel()) + Eu @ v[k]
        lhs = data.H_Zm @ zbar + data.dZm_w[k]
        for j in range(k):
            lhs = lhs + lam[k - 1 - j] * data.dZm_md[j]
        lam[k] = max(0.0, float(np.max(lhs / data.h_Zm)))
    return lam


def predicted_states(data: ControllerData, x, v) -> np.ndarray:
    Ax, Bv = prediction_maps(data)
    vv = np.asarray(v, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    return np.array([Ax[k] @ x + Bv[k] @ vv for k in range(data.N + 1)])


def error_tube(data: ControllerData, lam, k: int) -> VPolytope:
    """``E(k) = sum_{i<k} A^i W + sum_{j<k} lam(j) A^{k-1-j} PZ_m`` in vertex form."""
    from .geometry import linear_map, minkowski_sum

    A = data.A_cl
    W = VPolytope(data.W_vertices)
    PZ = VPolytope(data.PZ_vertices)
    E = VPolytope.point(np.zeros(data.n))
    for i in range(k):
        Ai = np.linalg.matrix_power(A, i)
        E = minkowski_sum(E, linear_map(Ai, W))
        E = minkowski_sum(E, linear_map(lam[k - 1 - i] * Ai, PZ))
    return E
