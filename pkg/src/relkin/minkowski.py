"""Minkowski-space helpers: metric contractions, four-velocities, boosts.

Metric signature is diag(-1, 1, 1, 1).  Four-vectors are numpy arrays whose
last axis has length 4, ordered (0-component, spatial...).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import DIMENSIONLESS, PhysicalConstants

METRIC_DIAG = np.array([-1.0, 1.0, 1.0, 1.0])


def minkowski_dot(a, b):
    """g_{kappa lambda} a^kappa b^lambda over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.einsum("...k,k,...k->...", a, METRIC_DIAG, b)


def lower_index(a):
    """a_mu = g_{mu nu} a^nu."""
    return np.asarray(a, dtype=float) * METRIC_DIAG


def shell_energy(pbar, constants: PhysicalConstants = DIMENSIONLESS):
    """Mass-shell energy P^0 = sqrt(m0^2 c^2 + |Pbar|^2) (last axis of length 3)."""
    pbar = np.asarray(pbar, dtype=float)
    return np.sqrt(constants.mc**2 + np.sum(pbar * pbar, axis=-1))


def on_shell(pbar, constants: PhysicalConstants = DIMENSIONLESS):
    """Four-momentum (P^0, Pbar) for spatial momenta of shape (..., 3)."""
    pbar = np.asarray(pbar, dtype=float)
    return np.concatenate([shell_energy(pbar, constants)[..., None], pbar], axis=-1)


@dataclass(frozen=True)
class FourVelocity:
    """Future-directed four-velocity with u_kappa u^kappa = -c^2."""

    components: np.ndarray
    constants: PhysicalConstants = field(default=DIMENSIONLESS)

    @staticmethod
    def from_spatial(u_spatial, constants: PhysicalConstants = DIMENSIONLESS) -> "FourVelocity":
        """Build from (u^1, u^2, u^3); u^0 follows from the normalization."""
        u_spatial = np.asarray(u_spatial, dtype=float)
        if u_spatial.shape != (3,):
            raise ValueError("spatial velocity must have shape (3,)")
        u0 = np.sqrt(constants.c**2 + np.sum(u_spatial**2))
        return FourVelocity(np.concatenate([[u0], u_spatial]), constants)

    @staticmethod
    def rest(constants: PhysicalConstants = DIMENSIONLESS) -> "FourVelocity":
        return FourVelocity(np.array([constants.c, 0.0, 0.0, 0.0]), constants)

    def __post_init__(self) -> None:
        comp = np.asarray(self.components, dtype=float)
        if comp.shape != (4,):
            raise ValueError("four-velocity needs 4 components")
        object.__setattr__(self, "components", comp)
        if comp[0] <= 0.0:
            raise ValueError("four-velocity must be future-directed (u^0 > 0)")
        c2 = self.constants.c**2
        if abs(minkowski_dot(comp, comp) + c2) > 1e-10 * c2:
            raise ValueError("four-velocity violates u.u = -c^2")

    @property
    def u0(self) -> float:
        return float(self.components[0])

    @property
    def spatial(self) -> np.ndarray:
        return self.components[1:]

    def dot_momentum(self, pbar):
        """u_kappa P^kappa on the mass shell, for spatial momenta (..., 3)."""
        p0 = shell_energy(pbar, self.constants)
        return -self.u0 * p0 + np.asarray(pbar, dtype=float) @ self.spatial


def boost_matrix(u: FourVelocity) -> np.ndarray:
    """Proper Lorentz boost Lambda with Lambda (c,0,0,0) = u.

    Satisfies Lambda^T g Lambda = g and det Lambda = 1; used as test
    infrastructure for covariance checks.
    """
    c = u.constants.c
    gamma = u.u0 / c
    beta = u.spatial / u.u0
    b2 = float(beta @ beta)
    lam = np.eye(4)
    lam[0, 0] = gamma
    lam[0, 1:] = gamma * beta
    lam[1:, 0] = gamma * beta
    if b2 > 0.0:
        lam[1:, 1:] += (gamma - 1.0) * np.outer(beta, beta) / b2
    return lam


def apply_lorentz(lam: np.ndarray, vec):
    """Lambda^mu_nu v^nu over the last axis."""
    return np.einsum("mn,...n->...m", lam, np.asarray(vec, dtype=float))
