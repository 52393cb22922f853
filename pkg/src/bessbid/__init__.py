"""bessbid: stochastic MILP planning of battery bids across electricity markets.

Pipeline: scenario ingestion/synthesis -> droop-curve energy obligations ->
MILP formulation with big-M linearized settlement -> exact branch-and-bound
(or MPS/LP export for industrial solvers) -> independent settlement report.
"""

from .droop import (DroopCurve, EnergyRequirement, build_requirements,
                    fcr_requirement, spot_requirement)
from .errors import (BessbidError, ConsistencyError, EnumerationLimitError,
                     ModelBuildError, ParseError, ValidationError)
from .formulation import MilpModel, ModelOptions, build_model, no_bid_values
from .markets import (BessConfig, BigMBounds, DegradationSchedule, Market,
                      MARKETS, degradation_costs, tight_big_m)
from .model_io import export, read_mps, write_lp, write_model_summary, write_mps
from .oracle import brute_force, candidate_prices
from .report import SettlementReport, emit, settle
from .scenarios import (FrequencyTrace, PriceSet, Scenario, ScenarioSet,
                        SynthesisParams, bundled_calm_week, bundled_week,
                        hour_of, load_scenarios, save_scenarios,
                        synthesize_scenarios)
from .solver import (Solution, SolverOptions, solve_bb, solve_with_fixed_binaries,
                     validate)

__version__ = "0.1.0"

__all__ = [
    "BessConfig", "BessbidError", "BigMBounds", "ConsistencyError",
    "DegradationSchedule", "DroopCurve", "EnergyRequirement",
    "EnumerationLimitError", "FrequencyTrace", "MARKETS", "Market",
    "MilpModel", "ModelBuildError", "ModelOptions", "ParseError", "PriceSet",
    "Scenario", "ScenarioSet", "SettlementReport", "Solution", "SolverOptions",
    "SynthesisParams", "ValidationError", "brute_force", "build_model",
    "build_requirements", "bundled_calm_week", "bundled_week",
    "candidate_prices", "degradation_costs", "emit", "export",
    "fcr_requirement", "hour_of", "load_scenarios", "no_bid_values",
    "read_mps", "save_scenarios", "settle", "solve_bb",
    "solve_with_fixed_binaries", "spot_requirement", "synthesize_scenarios",
    "tight_big_m", "validate", "write_lp", "write_model_summary", "write_mps",
]
