"""Stochastic truncated-Wigner engine for the driven-dissipative polariton field."""

from .engine import (
    TrajectoryEnsemble,
    init_vacuum_state,
    run_ensemble,
    run_trajectory,
    trajectory_rng,
    twa_step,
)
from .kernels import BACKEND_NAME
from .model import (
    FieldState,
    ModelParams,
    PumpProfile,
    SimulationGrid,
    TrajectoryConfig,
    kinetic_coefficient,
    threshold_power,
)

__all__ = [
    "BACKEND_NAME",
    "FieldState",
    "ModelParams",
    "PumpProfile",
    "SimulationGrid",
    "TrajectoryConfig",
    "TrajectoryEnsemble",
    "init_vacuum_state",
    "kinetic_coefficient",
    "run_ensemble",
    "run_trajectory",
    "threshold_power",
    "trajectory_rng",
    "twa_step",
]
