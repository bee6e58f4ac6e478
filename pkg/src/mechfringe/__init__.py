"""Photon-counting-conditioned optomechanics: measurement operators,
conditional states, Wigner functions, click-conditioned Monte Carlo and
readout-trace fitting."""

__version__ = "0.1.0"

from .core import (ConditioningError, ConfigurationError, CouplingConfig, DomainError,
                   MechanicalConstants, NumericalError, PhaseSpacePoint, ThermalState, Unit,
                   convert)
from .twoport import ClickEvent

__all__ = [
    "__version__", "ClickEvent", "ConditioningError", "ConfigurationError", "CouplingConfig",
    "DomainError", "MechanicalConstants", "NumericalError", "PhaseSpacePoint", "ThermalState",
    "Unit", "convert",
]
