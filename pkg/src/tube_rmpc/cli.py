"""Command-line pipeline: validate, container-opt, terminal, prepare, simulate, roa."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys as _sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .container import (
    ContainerSpec,
    Relaxation,
    container_preimage,
    default_container,
    default_preimage_box,
    make_container,
    optimize_wm,
)
from .controller import ControllerData, offline_prepare, shifted_candidate  # noqa: F401
from .exceptions import AssumptionViolated, EmptyTerminalSet, IterationCap, NoAdmissibleGamma
from .geometry import facet_enum, volume
from .model import UncertainSystem, validate
from .sim import DisturbancePolicy, disturbance_invariant_bound, roa_estimate, run_closed_loop, tube_snapshots
from .terminal import gamma_bounds, output_admissible_set, truncation_residual

STAGES = ("validate", "container-opt", "terminal", "prepare", "simulate", "roa")
EXIT_OK, EXIT_ASSUMPTION, EXIT_TERMINAL, EXIT_INFEASIBLE = 0, 2, 3, 4
HT_REFERENCE_AREA = 3554.6   # literature value for a homothetic-tube controller, printed only

log = logging.getLogger("tube_rmpc")


def bundled_config_path() -> Path:
    return Path(str(resources.files("tube_rmpc") / "data" / "example_system.json"))


DEFAULTS = {
    "container": {"grid": [5, 5], "optimize": True, "use": "Z_m2",
                  "relax": {"N_i": 3, "N_j": 1, "drop": ["Zm", "Sinf", "Sj"]},
                  "weights": None, "preimage_box_factor": 1e3},
    "terminal": {"gamma0": 10.0, "k_max": 30, "max_iter": 500},
    "controller": {"N": 10, "psi": None, "lambda_cap": None},
    "sim": {"x0": None, "T": 30, "policy": "uniform_box", "seed": 0, "theta": None,
            "theta_walk": False, "tubes": [1, 2, 3]},
    "roa": {"box": [[-70.0, 70.0], [-40.0, 40.0]], "resolution": [200, 200], "containers": None},
    "output_dir": "out",
}


@dataclass
class RunConfig:
    system: UncertainSystem
    container: dict
    terminal: dict
    controller: dict
    sim: dict
    roa: dict
    output_dir: Path
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "RunConfig":
        merged = copy.deepcopy(DEFAULTS)
        for k, v in d.items():
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                merged[k].update(v)
            else:
                merged[k] = v
        spec = merged.get("system")
        if spec is None:
            raise ValueError("config needs a 'system' entry")
        if isinstance(spec, str):
            p = Path(spec)
            if not p.is_absolute() and base is not None:
                p = base / p
            if not p.exists():
                raise FileNotFoundError(f"system file {p} does not exist")
            spec = json.loads(p.read_text())
        system = UncertainSystem.from_dict(spec)
        ctl = merged["controller"]
        if int(ctl["N"]) < 1:
            raise ValueError("controller.N must be >= 1")
        psi = np.eye(system.m) if ctl["psi"] is None else np.atleast_2d(np.asarray(ctl["psi"], dtype=float))
        if not np.allclose(psi, psi.T):
            raise ValueError("controller.psi must be symmetric")
        np.linalg.cholesky(psi)
        ctl["psi"] = psi
        res = np.atleast_1d(merged["roa"]["resolution"])
        if np.any(res < 10):
            raise ValueError("roa.resolution must be >= 10")
        return cls(system, merged["container"], merged["terminal"], ctl, merged["sim"],
                   merged["roa"], Path(merged["output_dir"]), merged)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        return cls.from_dict(json.loads(p.read_text()), p.parent)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if np.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path: Path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


class StageError(Exception):
    def __init__(self, stage: str, constraint: str, message: str, code: int):
        super().__init__(message)
        self.stage, self.constraint, self.code = stage, constraint, code


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class Pipeline:
    """Runs stages lazily; each stage computes its prerequisites on demand."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.report: dict = {}
        self._containers = None
        self._terminals: dict = {}
        self._data: dict = {}

    @property
    def sys(self) -> UncertainSystem:
        return self.cfg.system

    def validate(self):
        rep = validate(self.sys)
        self.report["validation"] = rep.to_dict()
        write_json(self.out / "validation.json", rep.to_dict())
        bad = rep.first_failure()
        if bad is not None:
            raise StageError("validate", bad, rep.checks[bad][1], EXIT_ASSUMPTION)

    def containers(self) -> dict:
        if self._containers is not None:
            return self._containers
        cc = self.cfg.container
        sys = self.sys
        t0 = time.perf_counter()
        box = default_preimage_box(sys, float(cc["preimage_box_factor"]))
        c0 = make_container(sys, default_container(sys.n, sys.m, tuple(cc["grid"])), "Z_m0")
        c1 = make_container(sys, container_preimage(sys.dP_vertices, c0.PZ_m_H, box), "Z_m1")
        out = {"Z_m0": c0, "Z_m1": c1}
        beta = None
        if cc["optimize"]:
            rel = cc["relax"]
            drop = set(rel.get("drop", []))
            relax = Relaxation(int(rel.get("N_i", 3)), int(rel.get("N_j", 1)),
                               "Z" not in drop, "Zm" not in drop, "Sinf" not in drop, "Sj" not in drop)
            S_inf0, chain = None, ()
            if relax.keep_Sinf or relax.keep_Sj:
                T0 = self.terminal_for(c0)
                S_inf0, chain = T0.S_inf, T0.history
            opt = optimize_wm(sys, c0.PZ_m, Z_m0=c0.Z_m, S_chain=chain, S_inf0=S_inf0,
                              relax=relax, weights=cc.get("weights"))
            beta = opt.beta
            out["Z_m2"] = make_container(sys, container_preimage(sys.dP_vertices, facet_enum(opt.WM), box),
                                         "Z_m2")
        elapsed = time.perf_counter() - t0
        self._containers = out
        self.report["containers"] = {
            k: {"volume": volume(c.Z_m), "md_image_area": volume(c.PZ_m),
                "n_facets": c.Z_m.n_facets, "n_vertices": c.Z_m_V.n_vertices}
            for k, c in out.items()}
        self.report["container_seconds"] = elapsed
        if beta is not None:
            self.report["wm_beta"] = beta
        return out

    def emit_containers(self):
        cs = self.containers()
        write_json(self.out / "containers.json",
                   {k: {"Z_m": c.Z_m.to_dict(), "Z_m_vertices": c.Z_m_V.V, "X_m": c.X_m.to_dict(),
                        "PZ_m_vertices": c.PZ_m.V, **self.report["containers"][k]}
                    for k, c in cs.items()})
        for k, c in cs.items():
            write_csv(self.out / f"{k}_vertices.csv", [f"z{i + 1}" for i in range(c.dim)], c.Z_m_V.V)
            write_csv(self.out / f"PD{k}_vertices.csv", [f"x{i + 1}" for i in range(self.sys.n)], c.PZ_m.V)

    def selected(self) -> tuple[str, ContainerSpec]:
        cs = self.containers()
        key = self.cfg.container.get("use", "Z_m2")
        if key not in cs:
            key = "Z_m1"
        return key, cs[key]

    def terminal_for(self, c: ContainerSpec):
        if c.label in self._terminals:
            return self._terminals[c.label]
        tc = self.cfg.terminal
        g0 = float(tc["gamma0"])
        try:
            lo, hi = gamma_bounds(self.sys, c)
            if not (lo - 1e-12 <= g0 <= hi + 1e-12):
                raise NoAdmissibleGamma(f"gamma0={g0} outside [{lo:.6g}, {hi:.6g}]")
            T = output_admissible_set(self.sys, c, g0, max_iter=int(tc["max_iter"]), k_max=int(tc["k_max"]))
        except (NoAdmissibleGamma, EmptyTerminalSet, IterationCap) as e:
            raise StageError("terminal", type(e).__name__, str(e), EXIT_TERMINAL) from e
        self._terminals[c.label] = T
        self.report.setdefault("terminal", {})[c.label] = {
            "gamma_bounds": [lo, hi], "gamma_inf": T.gamma_inf, "lambda_inf": T.lambda_inf,
            "iterations": T.iterations, "gamma_trace": T.gamma_trace, "n_facets": T.S_inf.n_facets,
            "area": volume(T.S_inf) if self.sys.n <= 3 else None,
            "truncation_residual": truncation_residual(self.sys, c, T.lambda_inf, int(tc["k_max"]))
            if np.isfinite(T.lambda_inf) else None,
        }
        return T

    def emit_terminal(self):
        key, c = self.selected()
        T = self.terminal_for(c)
        write_json(self.out / "terminal.json", {**T.to_dict(), "container": key})
        write_csv(self.out / "terminal_trace.csv", ["restart", "gamma"], list(enumerate(T.gamma_trace)))

    def data_for(self, key: str) -> ControllerData:
        if key in self._data:
            return self._data[key]
        c = self.containers()[key]
        T = self.terminal_for(c)
        ctl = self.cfg.controller
        D = offline_prepare(self.sys, c, T, int(ctl["N"]), ctl["psi"], ctl.get("lambda_cap"))
        self._data[key] = D
        self.report.setdefault("qp", {})[key] = {
            "n_vars": D.n_vars, "n_rows": int(D.G.shape[0]), "n_rows_formula": D.n_rows_formula,
            "lcon": D.lcon, "N": D.N}
        return D

    def emit_prepare(self):
        key, _ = self.selected()
        self.data_for(key).save(self.out / "controller.json")

    def simulate(self):
        key, c = self.selected()
        D = self.data_for(key)
        sc = self.cfg.sim
        x0 = sc["x0"] if sc["x0"] is not None else np.zeros(self.sys.n)
        pol = DisturbancePolicy(sc["policy"], int(sc["seed"]), sc.get("theta"), bool(sc.get("theta_walk")),
                                sc.get("sequence"))
        t0 = time.perf_counter()
        tr = run_closed_loop(self.sys, D, x0, int(sc["T"]), pol)
        elapsed = time.perf_counter() - t0
        lam_cols = [f"lambda{i}" for i in range(D.N)]
        header = ["t", *[f"x{i + 1}" for i in range(self.sys.n)], *(["u"] if self.sys.m == 1 else
                  [f"u{i + 1}" for i in range(self.sys.m)]), "J", *lam_cols, "feasible"]
        write_csv(self.out / "trace.csv", header, tr.to_rows())
        if tr.infeasible_at is not None:
            self.report["simulation"] = {"infeasible_at": tr.infeasible_at,
                                         "state": tr.x[tr.infeasible_at]}
            raise StageError("simulate", "online-feasibility", f"infeasible at t={tr.infeasible_at}",
                             EXIT_INFEASIBLE)
        viol = 0.0
        for x, u in zip(tr.x[:-1], tr.u):
            viol = max(viol, float(np.max(self.sys.Z.H @ np.r_[x, u] - self.sys.Z.h)))
        dJ = tr.cost[1:] - (tr.cost[:-1] - np.einsum("ti,ij,tj->t", tr.v[:-1], D.psi, tr.v[:-1]))
        Fb = disturbance_invariant_bound(self.sys, D, D.lambda_inf, int(self.cfg.terminal["k_max"]))
        self.report["simulation"] = {
            "steps": tr.T, "final_state": tr.x[-1], "final_norm": float(np.linalg.norm(tr.x[-1])),
            "max_constraint_violation": viol, "max_cost_decrease_slack": float(np.max(dJ)) if dJ.size else 0.0,
            "candidate_always_feasible": bool(np.all(tr.candidate_feasible)),
            "final_state_in_invariant_bound": bool(Fb.contains_point(tr.x[-1], 1e-6)),
            "replay_error": tr.replay_error(self.sys), "seconds": elapsed,
        }
        ks = [int(k) for k in sc.get("tubes", [])]
        if ks:
            for k, P in zip(ks, tube_snapshots(D, x0, ks)):
                write_json(self.out / f"tube_{k}.json", {"k": k, "V": P.V})

    def roa(self):
        rc = self.cfg.roa
        keys = rc.get("containers") or [self.selected()[0]]
        self.report["roa"] = {"reference_area_homothetic_tube": HT_REFERENCE_AREA}
        for key in keys:
            D = self.data_for(key)
            t0 = time.perf_counter()
            est = roa_estimate(D, rc["box"], rc["resolution"])
            elapsed = time.perf_counter() - t0
            suffix = "" if len(keys) == 1 else f"_{key}"
            write_csv(self.out / f"roa{suffix}.csv", [*[f"x{i + 1}" for i in range(self.sys.n)], "feasible"],
                      est.to_rows())
            self.report["roa"][key] = {"area": est.area, "refined_cells": est.refined, "seconds": elapsed}

    def run(self, upto: str):
        steps = {
            "validate": self.validate,
            "container-opt": self.emit_containers,
            "terminal": self.emit_terminal,
            "prepare": self.emit_prepare,
            "simulate": self.simulate,
            "roa": self.roa,
        }
        for s in STAGES[:STAGES.index(upto) + 1]:
            steps[s]()


def _run(cfg: RunConfig, out: Path, stages) -> int:
    out.mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(cfg, out)
    code = EXIT_OK
    try:
        if isinstance(stages, str):
            pipe.run(stages)
        else:
            steps = {"validate": pipe.validate, "container-opt": pipe.emit_containers,
                     "terminal": pipe.emit_terminal, "prepare": pipe.emit_prepare,
                     "simulate": pipe.simulate, "roa": pipe.roa}
            for s in stages:
                steps[s]()
    except StageError as e:
        pipe.report["error"] = {"stage": e.stage, "constraint": e.constraint, "message": str(e)}
        code = e.code
    except AssumptionViolated as e:
        pipe.report["error"] = {"stage": "validate", "constraint": e.assumption, "message": str(e)}
        code = EXIT_ASSUMPTION
    pipe.report["exit_code"] = code
    write_json(out / "report.json", pipe.report)
    if code != EXIT_OK:
        log.error("%s", pipe.report["error"])
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tube-rmpc", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in (*STAGES, "pipeline"):
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?", default=None,
                       help="run configuration (JSON); defaults to the bundled example")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "pipeline":
            s.add_argument("--stage", choices=STAGES, default="roa",
                           help="last stage to run")
        if name == "terminal":
            s.add_argument("--gamma0", type=float, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = Path(args.config) if args.config else bundled_config_path()
    try:
        cfg = RunConfig.load(path)
    except (ValueError, FileNotFoundError, np.linalg.LinAlgError) as e:
        print(f"invalid config: {e}", file=_sys.stderr)
        return 1
    if args.seed is not None:
        cfg.sim["seed"] = args.seed
    if getattr(args, "gamma0", None) is not None:
        cfg.terminal["gamma0"] = args.gamma0
    out = Path(args.out) if args.out else cfg.output_dir
    if args.cmd == "pipeline":
        return _run(cfg, out, args.stage)
    return _run(cfg, out, [args.cmd])


if __name__ == "__main__":
    raise SystemExit(main())
