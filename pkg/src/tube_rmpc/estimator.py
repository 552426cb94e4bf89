"""Estimator-style wrapper: ``fit`` runs the offline pipeline, ``predict`` the control law."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .container import (
    Relaxation,
    container_preimage,
    default_container,
    default_preimage_box,
    make_container,
    optimize_wm,
)
from .controller import feasible_lp, offline_prepare, solve_step
from .geometry import facet_enum
from .model import UncertainSystem, validate
from .terminal import output_admissible_set


class TubeRMPC(BaseEstimator):
    """Container-tube robust MPC.

    Parameters
    ----------
    container : {"Z_m0", "Z_m1", "Z_m2"}
        Which container to build: the default shape, its preimage, or the
        preimage of the enlarged MD image.
    grid : tuple of int
        Angle grid for the default shape.
    N_i : int
        Look-ahead powers used when enlarging the MD image.
    gamma0 : float
        Initial terminal scale.
    k_max : int
        Truncation length for the steady container scale.
    horizon : int
    psi : array-like or None
        Input weight; identity when None.
    strict : bool
        Raise on failed assumption checks during ``fit``.
    """

    def __init__(self, container="Z_m2", grid=(5, 5), N_i=3, gamma0=10.0, k_max=30,
                 horizon=10, psi=None, strict=True):
        self.container = container
        self.grid = grid
        self.N_i = N_i
        self.gamma0 = gamma0
        self.k_max = k_max
        self.horizon = horizon
        self.psi = psi
        self.strict = strict

    def fit(self, system, y=None):
        sys = system if isinstance(system, UncertainSystem) else UncertainSystem.from_dict(system)
        self.validation_ = validate(sys, strict=self.strict)
        box = default_preimage_box(sys)
        c = make_container(sys, default_container(sys.n, sys.m, tuple(self.grid)), "Z_m0")
        if self.container in ("Z_m1", "Z_m2"):
            WM = c.PZ_m_H
            if self.container == "Z_m2":
                WM = facet_enum(optimize_wm(sys, c.PZ_m, Z_m0=c.Z_m, relax=Relaxation(self.N_i)).WM)
            c = make_container(sys, container_preimage(sys.dP_vertices, WM, box), self.container)
        elif self.container != "Z_m0":
            raise ValueError(f"unknown container {self.container!r}")
        self.system_ = sys
        self.container_ = c
        self.terminal_ = output_admissible_set(sys, c, self.gamma0, k_max=self.k_max)
        self.data_ = offline_prepare(sys, c, self.terminal_, self.horizon, self.psi)
        self.n_features_in_ = sys.n
        return self

    def predict(self, X):
        """Control input for each state row; NaN where the online problem is infeasible."""
        check_is_fitted(self, "data_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state components, got {X.shape[1]}")
        out = np.full((X.shape[0], self.system_.m), np.nan)
        for i, x in enumerate(X):
            r = solve_step(self.data_, x)
            if r.optimal:
                out[i] = r.u
        return out

    def feasible(self, X) -> np.ndarray:
        check_is_fitted(self, "data_")
        X = check_array(X, ensure_2d=True)
        return np.array([feasible_lp(self.data_, x) for x in X], dtype=bool)
