"""Tube-based robust MPC for linear systems with additive and multiplicative disturbances."""
from .container import ContainerSpec, container_preimage, default_container, make_container, md_image, optimize_wm
from .controller import ControllerData, build_qp, lambda_tighten, offline_prepare, shifted_candidate, solve_step
from .estimator import TubeRMPC
from .geometry import HPolytope, VPolytope
from .model import UncertainSystem, validate
from .sim import DisturbancePolicy, roa_estimate, run_closed_loop, tube_snapshots
from .terminal import TerminalSet, gamma_bounds, lambda_infinity, output_admissible_set

__all__ = [
    "ContainerSpec", "container_preimage", "default_container", "make_container", "md_image", "optimize_wm",
    "ControllerData", "build_qp", "lambda_tighten", "offline_prepare", "shifted_candidate", "solve_step",
    "TubeRMPC", "HPolytope", "VPolytope", "UncertainSystem", "validate",
    "DisturbancePolicy", "roa_estimate", "run_closed_loop", "tube_snapshots",
    "TerminalSet", "gamma_bounds", "lambda_infinity", "output_admissible_set",
]
