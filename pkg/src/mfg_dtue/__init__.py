"""Departure-time user equilibrium in a single-region bathtub model.

The equilibrium is computed as the fixed point of a discrete mean-field
game: every traveller best-responds to one characteristic distance curve
that summarizes the congestion produced by everybody else.
"""
from .bathtub import (CharacteristicDistance, Grid, InFlowGrid, NetworkSeries, SpeedFunction,
                      network_series, picard_iterate, solve_characteristic, solve_drained)
from .baseline import msa_solve
from .cost import (FocResult, PrefsTable, SchedulingPrefs, classify_foc, optimality_band,
                   trip_cost)
from .demand import (DemandProfile, DiscreteDemand, TripClass, discretize_demand,
                     load_demand_csv, synthesize_demand, write_demand_csv)
from .equilibrium import (DisaggInFlow, EquilibriumReport, SolverOptions, best_response,
                          convergence_indicator, demand_transfer, epsilon_mfe_check,
                          heuristic_solve, initial_solution)
from .errors import (ConfigurationError, DTUEError, HorizonOverflowError, ParseError,
                     ValidationError)
from .oracle import AgentList, micro_simulate, nash_gap

__version__ = "0.1.0"

__all__ = [
    "AgentList", "CharacteristicDistance", "ConfigurationError", "DTUEError", "DemandProfile",
    "DisaggInFlow", "DiscreteDemand", "EquilibriumReport", "FocResult", "Grid",
    "HorizonOverflowError", "InFlowGrid", "NetworkSeries", "ParseError", "PrefsTable",
    "SchedulingPrefs", "SolverOptions", "SpeedFunction", "TripClass", "ValidationError",
    "best_response", "classify_foc", "convergence_indicator", "demand_transfer",
    "discretize_demand", "epsilon_mfe_check", "heuristic_solve", "initial_solution",
    "load_demand_csv", "micro_simulate", "msa_solve", "nash_gap", "network_series",
    "optimality_band", "picard_iterate", "solve_characteristic", "solve_drained",
    "synthesize_demand", "trip_cost", "write_demand_csv",
]
