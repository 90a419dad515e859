"""Physical constants threaded through every formula in the toolkit.

All routines take a :class:`PhysicalConstants` argument instead of assuming a
unit system.  The default instance :data:`DIMENSIONLESS` sets
``m0 = c = k_B = h = 1``, which is the system the test suites run in.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """Rest mass, speed of light, Boltzmann and Planck constants.

    Every field must be strictly positive.
    """

    m0: float = 1.0
    c: float = 1.0
    k_B: float = 1.0
    h: float = 1.0

    def __post_init__(self) -> None:
        for name in ("m0", "c", "k_B", "h"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"constant {name} must be positive, got {getattr(self, name)}")

    @property
    def mc(self) -> float:
        """m0 * c, the momentum scale of the mass shell."""
        return self.m0 * self.c

    @property
    def mc2(self) -> float:
        """m0 * c^2, the rest energy."""
        return self.m0 * self.c**2

    def temperature_from_z(self, z):
        """Temperature corresponding to the dimensionless coldness z = m0 c^2 / (k_B theta)."""
        return self.mc2 / (self.k_B * z)

    def z_from_temperature(self, theta):
        return self.mc2 / (self.k_B * theta)


DIMENSIONLESS = PhysicalConstants()
