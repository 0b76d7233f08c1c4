"""Risk-aware sampling MPC (MPPI with a CVaR trajectory filter) for a small racing car."""
from .config import ConfigError, Scenario, load_scenario
from .dynamics import ControlInput, DisturbanceModel, State, VehicleParams
from .mppi import MPPI, RA_MPPI, Controller, MppiParams
from .risk import RiskParams
from .simulator import EpisodeMetrics, grid_search, run_episode, throughput_benchmark
from .track import CostWeights, Track, stadium

__all__ = [
    "ConfigError", "Scenario", "load_scenario", "ControlInput", "DisturbanceModel", "State",
    "VehicleParams", "MPPI", "RA_MPPI", "Controller", "MppiParams", "RiskParams",
    "EpisodeMetrics", "grid_search", "run_episode", "throughput_benchmark", "CostWeights",
    "Track", "stadium",
]
__version__ = "0.1.0"
