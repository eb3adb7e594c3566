"""Potential measures, exit problems and scale matrices of spectrally negative MAPs."""

from .model import MapSpec, PhaseType, StateJump, env_stats, evaluate_F, load_spec, time_reverse, validate_spec
from .potential import BarrierScenario, limiting_distribution, potential_atoms, potential_density, potential_grid, scenario
from .scale import ScaleSet, exit_down, exit_up, hitting_matrix, reflected_passage_up
from .spectral import passage_matrices, solve_spectrum

__version__ = "0.1.0"

__all__ = [
    "MapSpec",
    "PhaseType",
    "StateJump",
    "BarrierScenario",
    "ScaleSet",
    "env_stats",
    "evaluate_F",
    "load_spec",
    "time_reverse",
    "validate_spec",
    "solve_spectrum",
    "passage_matrices",
    "exit_up",
    "exit_down",
    "hitting_matrix",
    "reflected_passage_up",
    "potential_density",
    "potential_atoms",
    "potential_grid",
    "limiting_distribution",
    "scenario",
]
