"""Chance-constrained LinDistFlow OPF on radial feeders with itemized distribution prices."""
from .grid import DER, NetworkError, RadialNetwork, UncertaintySpec, gaussian_quantile, load_network
from .losses import LossFactorSet, compute_loss_factors
from .montecarlo import MonteCarloReport, monte_carlo_validate
from .opf import OpfResult, ScenarioKind, build_model, solve_scenario
from .pricing import (DLMPReport, EquilibriumReport, GammaReport, best_response, decompose_dlmp,
                      decompose_gamma, equilibrium_check)
from .reports import ScenarioRun, diff_runs, run_scenario, write_reports

__version__ = "0.1.0"

__all__ = [
    "DER", "DLMPReport", "EquilibriumReport", "GammaReport", "LossFactorSet", "MonteCarloReport",
    "NetworkError", "OpfResult", "RadialNetwork", "ScenarioKind", "ScenarioRun", "UncertaintySpec",
    "best_response", "build_model", "compute_loss_factors", "decompose_dlmp", "decompose_gamma",
    "diff_runs", "equilibrium_check", "gaussian_quantile", "load_network", "monte_carlo_validate",
    "run_scenario", "solve_scenario", "write_reports",
]
