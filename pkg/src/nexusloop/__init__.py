"""Bistable dissipative optomechanics: steady states, nexus loops and entanglement."""
from .model import (
    Branch,
    DerivedParams,
    DrivePoint,
    FreqConvention,
    PhysicalParams,
    SteadyState,
    cavity_amplitude,
    cubic_coefficients,
    derive_params,
    drive_amplitude,
    effective_rates,
    fixed_point_residual,
    solve_cubic,
    steady_states,
)

__version__ = "0.1.0"

__all__ = [
    "Branch", "DerivedParams", "DrivePoint", "FreqConvention", "PhysicalParams", "SteadyState", "cavity_amplitude",
    "cubic_coefficients", "derive_params", "drive_amplitude", "effective_rates", "fixed_point_residual",
    "solve_cubic", "steady_states", "__version__",
]
