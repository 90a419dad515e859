"""relkin: numerics for relativistic kinetic theory.

Subpackages cover the modified Bessel functions K_j, the kinetic equation of
state, Juttner (relativistic Maxwellian) moment calculus, the center-of-
momentum Boltzmann collision operator with its linearization, a desk-scale
relativistic Euler solver with energy-current monitoring, and the Hilbert
expansion machinery connecting the two.
"""

from .constants import DIMENSIONLESS, PhysicalConstants

__all__ = ["DIMENSIONLESS", "PhysicalConstants"]
__version__ = "0.1.0"
