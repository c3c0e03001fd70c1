"""Reflected SDE simulation with explicit Wasserstein contraction certificates.

The package has three layers: reflected-diffusion simulation on closed
convex domains (``sim``, ``convex``), the contraction certificate built
from one-sided growth and Foster-Lyapunov data (``contraction``), and a
stochastic model-reference adaptive regulation application that derives
all certificate inputs from a plant description (``mrac``).
"""

from .contraction import (ContractionCertificate, GrowthCondition,
                          LyapunovSpec, build_certificate, decay_bounds,
                          estimate_W_rho, eval_f, eval_rho, rho_many)
from .convex import (Ball, Box, ConvexSet, Polygon2D, Product, WholeSpace,
                     set_from_config)
from .errors import (ConfigError, DimensionMismatch, DriftNaN, InfiniteR2,
                     InitialStateOutsideDomain, InvalidQ, NoFiniteM,
                     NotHurwitz, NotSymmetric, QuadratureFailure, RsdecError,
                     SingularG)
from .linalg import InnerProduct, solve_lyapunov, sym_eig_bounds, weighted_sigma_min
from .mrac import (MracDerived, MracSpec, closed_loop_system, control_input,
                   derive_constants, make_features, mrac_spec_from_config,
                   experiment_scale_spec, reshape_S, unreshape_S)
from .sim import (CoupledEnsembleResult, CoupledTrajectory, RsdeSystem,
                  SimConfig, Trajectory, simulate, simulate_coupled,
                  simulate_coupled_ensemble, simulate_ensemble)

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "ConfigError", "ContractionCertificate", "ConvexSet",
    "CoupledEnsembleResult", "CoupledTrajectory", "DimensionMismatch",
    "DriftNaN", "GrowthCondition", "InfiniteR2", "InitialStateOutsideDomain",
    "InnerProduct", "InvalidQ", "LyapunovSpec", "MracDerived", "MracSpec",
    "NoFiniteM", "NotHurwitz", "NotSymmetric", "Polygon2D", "Product",
    "QuadratureFailure", "RsdeSystem", "RsdecError", "SimConfig",
    "SingularG", "Trajectory", "WholeSpace", "build_certificate",
    "closed_loop_system", "control_input", "decay_bounds",
    "derive_constants", "estimate_W_rho", "eval_f", "eval_rho",
    "make_features", "mrac_spec_from_config", "experiment_scale_spec",
    "reshape_S", "rho_many", "set_from_config", "simulate",
    "simulate_coupled", "simulate_coupled_ensemble", "simulate_ensemble",
    "solve_lyapunov", "sym_eig_bounds", "unreshape_S", "weighted_sigma_min",
]
