"""Minimum-power beamforming, power allocation and power splitting for
wirelessly powered multi-pair two-way relay networks."""

from .model import (DerivedCoefficients, DesignSolution, RecoveredBeamformer,
                    Scenario, ScenarioParams, SolveReport, dbm_from_linear,
                    derive_coefficients, generate_scenario, linear_from_dbm)
from .onepair import solve_onepair
from .initializer import InitPoint, cp_free_initialize, zf_initialize
from .multipair import DcOptions, dc_solve
from .bounds import (LargeNSolution, LargeScaleParams, large_n_solution,
                     lower_bound, uplink_fixed_point)
from .verify import FeasibilityReport, check_p1

__all__ = [
    "DerivedCoefficients", "DesignSolution", "RecoveredBeamformer",
    "Scenario", "ScenarioParams", "SolveReport", "dbm_from_linear",
    "derive_coefficients", "generate_scenario", "linear_from_dbm",
    "solve_onepair", "InitPoint", "cp_free_initialize", "zf_initialize",
    "DcOptions", "dc_solve", "LargeNSolution", "LargeScaleParams",
    "large_n_solution", "lower_bound", "uplink_fixed_point",
    "FeasibilityReport", "check_p1",
]

__version__ = "0.1.0"
