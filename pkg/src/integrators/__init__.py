"""
Runge-Kutta steppers and the reference simulator
"""

from .simulation import GroundTruthSimulator, Trajectory, simulate_ground_truth
from .steppers import (
    ImplicitStepper,
    NewtonSettings,
    StepResult,
    erk4_step,
    erk4_traced,
    irk_step,
    model_stepper,
)
from .tableau import ButcherTableau, by_name, gauss_legendre, radau_iia, rk4, stability_function

__all__ = [
    "ButcherTableau",
    "GroundTruthSimulator",
    "ImplicitStepper",
    "NewtonSettings",
    "StepResult",
    "Trajectory",
    "by_name",
    "erk4_step",
    "erk4_traced",
    "gauss_legendre",
    "irk_step",
    "model_stepper",
    "radau_iia",
    "rk4",
    "simulate_ground_truth",
    "stability_function",
]
