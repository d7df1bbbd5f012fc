"""Pseudo-spectral lab for 2D stochastic Navier-Stokes with fading memory.

Modules: ``spaces`` (grids, fields, projections), ``trilinear`` (convection),
``memory`` (past-history variable), ``stochastic`` (Wiener paths, OU
process, constants), ``solver`` (pathwise integrator), ``diagnostics``
(energy and far-field checks, absorbing radii), ``attractor`` (pullback
ensembles and the small-noise sweep), ``config`` and ``cli``.
"""

__version__ = "0.1.0"

from .spaces import SpectralField, SpectralGrid, make_grid, random_field  # noqa: E402
from .memory import HistoryState, KernelSpec, make_kernel  # noqa: E402
from .solver import SimConfig, SimState, integrate, integrate_split  # noqa: E402

__all__ = ["SpectralField", "SpectralGrid", "make_grid", "random_field", "HistoryState", "KernelSpec",
           "make_kernel", "SimConfig", "SimState", "integrate", "integrate_split", "__version__"]
