__version__ = "0.1.0"

from .filterbank import FilterBank, new_filter_bank
from .snooper import FilterBankSnooper
from .moment_space import MomentSpace, build_moment_space
from .spectral_factor import solve_dare, h_map, h_inverse
from .estimator import Prior, SolveOptions, SolveReport, solve_estimation
from .watchdog import ConvergenceWatchdog
from .simulate import Scenario, TruthModel, simulate_scenario, prepare_target

__all__ = [
    "FilterBank",
    "new_filter_bank",
    "FilterBankSnooper",
    "MomentSpace",
    "build_moment_space",
    "solve_dare",
    "h_map",
    "h_inverse",
    "Prior",
    "SolveOptions",
    "SolveReport",
    "solve_estimation",
    "ConvergenceWatchdog",
    "Scenario",
    "TruthModel",
    "simulate_scenario",
    "prepare_target",
]
