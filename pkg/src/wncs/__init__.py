"""Wireless closed-loop control: channel metrics, quantized delay-compensated
control, convergence checks and joint gain/bandwidth optimization."""

from .config import (DeConfig, PlantModel, Scenario, SystemParams, agv_plant,
                     default_scenario, load_scenario, make_plant, save_scenario)
from .exceptions import (ChannelDomainError, ConfigError, InfeasibleCandidateError,
                         WncsError)
from .optimizer import Candidate, check_feasibility, de_optimize, mpc_cost, solve_riccati
from .simulator import (SweepSpec, optimizer_rng, run_monte_carlo, run_sweep, run_trial,
                        solve_initial)

__all__ = [
    "DeConfig", "PlantModel", "Scenario", "SystemParams", "agv_plant",
    "default_scenario", "load_scenario", "make_plant", "save_scenario",
    "ChannelDomainError", "ConfigError", "InfeasibleCandidateError", "WncsError",
    "Candidate", "check_feasibility", "de_optimize", "mpc_cost", "solve_riccati",
    "SweepSpec", "optimizer_rng", "run_monte_carlo", "run_sweep", "run_trial",
    "solve_initial",
]
__version__ = "0.1.0"
