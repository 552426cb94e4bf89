"""Output-admissible terminal set with scale updating, and the steady container scale."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .container import ContainerSpec
from .exceptions import EmptyTerminalSet, IterationCap, NoAdmissibleGamma, NoFiniteLambda
from .geometry import (
    HPolytope,
    VPolytope,
    clean_rows,
    intersect,
    min_scale_containment,
    minkowski_sum,
    remove_redundancy,
    set_equal,
    support_offsets,
    to_v,
)
from .model import UncertainSystem

GAMMA_RESTART_TOL = 1e-9
MAX_ITER = 500

log = logging.getLogger(__name__)


@dataclass
class TerminalSet:
    S_inf: HPolytope
    gamma_inf: float
    lambda_inf: float
    iterations: int
    gamma_trace: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False)  # S_0..S_n of the final pass

    def to_dict(self) -> dict:
        return {
            "S_inf": self.S_inf.to_dict(),
            "gamma_inf": self.gamma_inf,
            "lambda_inf": self.lambda_inf,
            "iterations": self.iterations,
            "gamma_trace": list(self.gamma_trace),
        }


def _ratio_max(num, den) -> float:
    """``max num/den``; +inf if any row has ``den <= 0``."""
    if np.any(den <= 0):
        return np.inf
    return float(np.max(num / den)) if num.size else 0.0


def gamma_bounds(sys: UncertainSystem, c: ContainerSpec, X_xu: Optional[HPolytope] = None,
                 check: bool = True) -> tuple[float, float]:
    """Admissible interval ``[gamma_lo, gamma_hi]`` for the initial terminal scale."""
    X_xu = sys.X_xu() if X_xu is None else X_xu
    Xm = c.X_m
    g1 = min_scale_containment(X_xu, Xm)
    sw = support_offsets(sys.W, X_xu.H)
    sp = support_offsets(c.PZ_m, X_xu.H)
    pos = sp > 1e-14
    if np.any(X_xu.h - sw < 0):
        g2 = -np.inf
    elif np.any(pos):
        g2 = float(np.min((X_xu.h[pos] - sw[pos]) / sp[pos]))
    else:
        g2 = np.inf
    g_hi = min(g1, g2)
    sw_m = support_offsets(sys.W, Xm.H)
    sp_m = support_offsets(c.PZ_m, Xm.H)
    g_lo = max(0.0, _ratio_max(sw_m, Xm.h - sp_m))
    if check and g_lo > g_hi:
        raise NoAdmissibleGamma(f"gamma_lo={g_lo:.6g} exceeds gamma_hi={g_hi:.6g}")
    return g_lo, g_hi


def _disturbance_set(sys: UncertainSystem, c: ContainerSpec, gamma: float) -> VPolytope:
    return minkowski_sum(to_v(sys.W), c.PZ_m.scale(gamma))


def output_admissible_set(sys: UncertainSystem, c: ContainerSpec, gamma0: float,
                          max_iter: int = MAX_ITER, k_max: int = 30,
                          X_xu: Optional[HPolytope] = None) -> TerminalSet:
    """Run the admissible-set recursion, restarting whenever the scale can shrink.

    ``S_0 = gamma X_m & X_xu``; ``S_n = S_0 & {x | H A_cl x <= h - Delta}``
    where ``(H, h)`` describe ``S_{n-1}`` and ``Delta`` is its support offset
    against ``W + gamma PZ_m``. When the smallest scale covering ``S_n`` drops
    below ``gamma`` the recursion restarts from that scale.
    """
    X_xu = sys.X_xu() if X_xu is None else X_xu
    A = sys.A_cl
    gamma = float(gamma0)
    trace = [gamma]
    steps = 0
    while True:
        S0 = intersect(X_xu, c.X_m.scale(gamma))
        if S0.is_empty:
            raise EmptyTerminalSet(f"S_0 empty at gamma={gamma:.6g}")
        D = _disturbance_set(sys, c, gamma)
        hist = [S0]
        prev = S0
        restarted = False
        while True:
            steps += 1
            if steps > max_iter:
                raise IterationCap(f"no convergence after {max_iter} steps", trace)
            delta = support_offsets(D, prev.H)
            step = HPolytope(*clean_rows(prev.H @ A, prev.h - delta))
            S = HPolytope(np.vstack([S0.H, step.H]), np.concatenate([S0.h, step.h]))
            if S.is_empty:
                raise EmptyTerminalSet(f"S_{len(hist)} empty at gamma={gamma:.6g}")
            S = remove_redundancy(S)
            hist.append(S)
            g_n = min_scale_containment(S, c.X_m)
            if g_n < gamma - GAMMA_RESTART_TOL:
                gamma = g_n
                trace.append(gamma)
                restarted = True
                break
            if set_equal(S, prev):
                break
            prev = S
        if not restarted:
            break
    S_inf = hist[-1]
    gamma_inf = min_scale_containment(S_inf, c.X_m)
    try:
        lam = lambda_infinity(sys, c, k_max)
    except NoFiniteLambda:
        lam = np.inf
    log.debug("terminal set: %d steps, gamma trace %s", steps, trace)
    return TerminalSet(S_inf, gamma_inf, lam, steps, trace, hist)


def _sum_supports(P, H, powers) -> np.ndarray:
    """Support of ``sum_i A^i P`` along rows of ``H`` (supports add over Minkowski sums)."""
    out = np.zeros(H.shape[0])
    for Ai in powers:
        out += support_offsets(P, H @ Ai)
    return out


def lambda_infinity(sys: UncertainSystem, c: ContainerSpec, k_max: int = 30) -> float:
    """Steady container scale under ``u = Kx`` with a ``k_max``-term truncation."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    A = sys.A_cl
    powers = [np.linalg.matrix_power(A, i) for i in range(k_max)]
    Xm = c.X_m
    sw = _sum_supports(sys.W, Xm.H, powers)
    sp = _sum_supports(c.PZ_m, Xm.H, powers)
    lam = _ratio_max(sw, Xm.h - sp)
    if not np.isfinite(lam):
        raise NoFiniteLambda("container slice does not absorb the accumulated MD image")
    return max(0.0, lam)


def truncation_residual(sys: UncertainSystem, c: ContainerSpec, lam: float, k_max: int = 30) -> float:
    """``||A_cl^k_max|| * diam(W + lam PZ_m)``: how much the truncated sum can miss."""
    D = to_v(minkowski_sum(to_v(sys.W), c.PZ_m.scale(lam))).V
    diam = max(np.linalg.norm(a - b) for a in D for b in D)
    return float(np.linalg.norm(np.linalg.matrix_power(sys.A_cl, k_max), 2) * diam)


def invariance_holds(sys: UncertainSystem, c: ContainerSpec, T: TerminalSet, tol: float = 1e-7) -> bool:
    """Check ``A_cl x + W + gamma_inf PZ_m`` stays in ``S_inf`` for every vertex ``x``."""
    S = T.S_inf
    Vs = S.vertices.V
    d = support_offsets(_disturbance_set(sys, c, T.gamma_inf), S.H)
    lhs = (Vs @ sys.A_cl.T) @ S.H.T + d
    return bool(np.all(lhs <= S.h + tol))
