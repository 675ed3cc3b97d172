"""Radially symmetric aggregation dynamics with repulsive-attractive potentials.

Shell steady states, their radial stability, and a pseudo-inverse solver for
the radial interaction equation.
"""

from .potential import AttractivePotential, PowerLawPotential, RadialPotentialDescriptor
from .kernel import KernelContext
from .stability import StabilityReport, classify, shell_radius, boundary_b
from .solver import RadialState, SimConfig, simulate

__all__ = [
    "AttractivePotential",
    "PowerLawPotential",
    "RadialPotentialDescriptor",
    "KernelContext",
    "StabilityReport",
    "classify",
    "shell_radius",
    "boundary_b",
    "RadialState",
    "SimConfig",
    "simulate",
]

__version__ = "0.1.0"
