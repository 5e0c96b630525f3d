"""Dual-tire-profile vehicle simulation and tire-emission control."""

from .dynamics import ControlInput, Path, Segment, VehicleParams, VehicleState
from .emission import EmissionParams, hard_emission_params, soft_emission_params
from .tire import MagicFormulaCoeffs, TireModel, hard_reference_tire, soft_reference_tire

__version__ = "0.1.0"

__all__ = [
    "ControlInput", "EmissionParams", "MagicFormulaCoeffs", "Path", "Segment",
    "TireModel", "VehicleParams", "VehicleState", "hard_emission_params",
    "hard_reference_tire", "soft_emission_params", "soft_reference_tire",
    "__version__",
]
