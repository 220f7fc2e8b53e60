"""Simulation toolkit for networks of two-component Bose-Einstein condensates used as Ising solvers."""

from .model import (
    INFINITE,
    ModelError,
    NetworkSpec,
    ThermoParams,
    activation_phi,
    activation_phi_approx,
    delta_energy_flip,
    energy,
    transition_weights,
)
from .schedule import BetaSchedule

__version__ = "0.1.0"

__all__ = [
    "INFINITE",
    "BetaSchedule",
    "ModelError",
    "NetworkSpec",
    "ThermoParams",
    "activation_phi",
    "activation_phi_approx",
    "delta_energy_flip",
    "energy",
    "transition_weights",
    "__version__",
]
