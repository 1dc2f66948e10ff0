"""Diffusion on the constant energy-momentum sphere of an N-particle system.

The package simulates the heat flow on the manifold of N velocities with
fixed total momentum and energy, solves it exactly by eigenfunction
expansion, marginalizes to n-velocity densities, and carries out the
large-N limit to the kinetic Fokker-Planck equation on R^3.  Every layer
is cross-validated against the others (conservation laws, spectral gaps,
pair decorrelation, Legendre-to-Hermite asymptotics).
"""

__version__ = "0.1.0"

from .model import (
    SystemParams,
    VelocityState,
    WState,
    TimeScale,
    derive_params,
    manifold_residuals,
)

__all__ = [
    "SystemParams",
    "VelocityState",
    "WState",
    "TimeScale",
    "derive_params",
    "manifold_residuals",
    "__version__",
]
