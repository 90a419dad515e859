"""Relativistic Maxwellians (Juttner distributions) and their moment calculus.

Covers evaluation of the local Maxwellian M(n, theta, u; Pbar) and the global
Maxwellian J, numerical momentum moments (particle current, energy-momentum
tensor, entropy four-flow), the macroscopic decomposition of a moment set, and
the J-envelope condition J/C <= M <= C J^alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bessel import k_j
from .constants import DIMENSIONLESS, PhysicalConstants
from .eos import entropy_map, energy_density, pressure_map
from .minkowski import METRIC_DIAG, FourVelocity, lower_index, minkowski_dot, shell_energy
from .momentum_grid import (
    DEFAULT_N_MU,
    DEFAULT_N_PHI,
    DEFAULT_RADIAL,
    MomentumGrid,
    grid_for_params,
)


@dataclass(frozen=True)
class MaxwellianParams:
    """Parameters (n, z, u) of a local Maxwellian."""

    n: float
    z: float
    u: FourVelocity
    constants: PhysicalConstants = field(default=DIMENSIONLESS)

    def __post_init__(self) -> None:
        if self.n <= 0.0 or self.z <= 0.0:
            raise ValueError("Maxwellian needs n > 0 and z > 0")

    @property
    def prefactor(self) -> float:
        c = self.constants
        return self.n * self.z / (4.0 * np.pi * c.mc**3 * k_j(2, self.z))

    @property
    def theta(self) -> float:
        return self.constants.temperature_from_z(self.z)

    def default_grid(
        self,
        n_radial: int = DEFAULT_RADIAL,
        n_mu: int = DEFAULT_N_MU,
        n_phi: int = DEFAULT_N_PHI,
    ) -> MomentumGrid:
        c = self.constants
        beta = float(np.sqrt(np.sum(self.u.spatial**2))) / self.u.u0
        return grid_for_params(self.z, self.u.u0 / c.c, beta, n_radial, n_mu, n_phi, c)


def maxwellian_eval(params: MaxwellianParams, pbar):
    """M = n z / (4 pi m0^3 c^3 K_2(z)) exp(z u_k P^k / (m0 c^2)).

    The exponent is <= -z since u_k P^k <= -m0 c^2 for future-directed
    timelike pairs; the result is strictly positive.
    """
    exponent = params.z * params.u.dot_momentum(pbar) / params.constants.mc2
    return params.prefactor * np.exp(exponent)


def global_maxwellian(pbar, theta_M: float, constants: PhysicalConstants = DIMENSIONLESS):
    """J(Pbar) = exp(-c P^0 / (k_B theta_M))."""
    if theta_M <= 0.0:
        raise ValueError("theta_M must be positive")
    return np.exp(-constants.c * shell_energy(pbar, constants) / (constants.k_B * theta_M))


@dataclass(frozen=True)
class MomentSet:
    """Particle current, energy-momentum tensor and entropy four-flow of a field."""

    current: np.ndarray        # I^mu, (4,)
    stress: np.ndarray         # T^{mu nu}, (4, 4), symmetric
    entropy_flow: np.ndarray   # S^mu, (4,)
    truncation_error: float    # outermost-shell contribution to |I^0|


def moments(
    values,
    grid: MomentumGrid,
    constants: PhysicalConstants = DIMENSIONLESS,
) -> MomentSet:
    """Quadrature moments I^mu, T^{mu nu}, S^mu of samples F >= 0 on the grid.

    The 1/P^0 mass-shell factor is applied per integrand.  Nodes with F = 0
    contribute nothing to the entropy flow (F ln F -> 0).  Negative samples
    beyond a rounding tolerance are a validation error.
    """
    f = np.asarray(values, dtype=float)
    if f.shape != (grid.size,):
        raise ValueError(f"expected {grid.size} samples, got shape {f.shape}")
    scale = float(np.max(np.abs(f), initial=0.0))
    if np.any(f < -1e-13 * scale):
        raise ValueError("distribution has negative samples beyond tolerance")
    f = np.maximum(f, 0.0)

    c = constants.c
    pmu = np.concatenate([grid.p0[:, None], grid.nodes], axis=1)  # (N, 4)
    base = grid.weights * f / grid.p0
    current = c * pmu.T @ base
    stress = c * np.einsum("nm,nk,n->mk", pmu, pmu, base)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy_integrand = np.where(
            f > 0.0, f * (np.log(constants.h**3 * np.where(f > 0.0, f, 1.0)) - 1.0), 0.0
        )
    entropy_flow = -constants.k_B * c * pmu.T @ (grid.weights * entropy_integrand / grid.p0)

    outer = grid.outer_shell_mask()
    trunc = float(c * np.sum(np.abs(base[outer]) * grid.p0[outer]))
    return MomentSet(
        current=current, stress=0.5 * (stress + stress.T), entropy_flow=entropy_flow,
        truncation_error=trunc,
    )


def moments_of(params: MaxwellianParams, grid: MomentumGrid) -> MomentSet:
    return moments(maxwellian_eval(params, grid.nodes), grid, params.constants)


def fluid_stress(rho: float, p: float, u: FourVelocity) -> np.ndarray:
    """Perfect-fluid tensor c^-2 (rho + p) u u + p g^-1."""
    c2 = u.constants.c**2
    return (rho + p) / c2 * np.outer(u.components, u.components) + p * np.diag(METRIC_DIAG)


def closed_form_moments(params: MaxwellianParams) -> MomentSet:
    """The Bessel closed forms: I = n u, T = T_fluid, S = n eta u."""
    c = params.constants
    n, z, u = params.n, params.z, params.u
    p = float(pressure_map(n, z, c))
    rho = float(energy_density(n, z, c))
    eta = float(entropy_map(n, z, c))
    return MomentSet(
        current=n * u.components,
        stress=fluid_stress(rho, p, u),
        entropy_flow=n * eta * u.components,
        truncation_error=0.0,
    )


@dataclass(frozen=True)
class MacroState:
    """Macroscopic decomposition of a moment set."""

    n: float
    u: FourVelocity
    rho: float
    p: float
    eta: float
    viscous: np.ndarray   # v^{mu nu} = p^{mu nu} - p Pi^{mu nu}


def projector(u: FourVelocity) -> np.ndarray:
    """Pi^{mu nu} = c^-2 u^mu u^nu + g^{mu nu}: projects onto the u-orthogonal complement."""
    c2 = u.constants.c**2
    return np.outer(u.components, u.components) / c2 + np.diag(METRIC_DIAG)


def macroscopic_decompose(
    ms: MomentSet, constants: PhysicalConstants = DIMENSIONLESS
) -> MacroState:
    """Recover (n, u, rho, p, eta) from moments via the standard contractions.

    Requires the particle current to be timelike and future-directed.
    """
    ii = float(minkowski_dot(ms.current, ms.current))
    if ii >= 0.0 or ms.current[0] <= 0.0:
        raise ValueError("particle current must be timelike future-directed")
    c = constants.c
    n = np.sqrt(-ii) / c
    u = FourVelocity(ms.current / n, constants)
    u_lo = lower_index(u.components)
    rho = float(u_lo @ ms.stress @ u_lo) / c**2
    pi_up = projector(u)
    pi_mixed = pi_up * METRIC_DIAG[None, :]        # Pi^mu_nu
    pressure_tensor = pi_mixed @ ms.stress @ pi_mixed.T
    pi_lo = METRIC_DIAG[:, None] * pi_up * METRIC_DIAG[None, :]
    p = float(np.einsum("mn,mn->", pi_lo, ms.stress)) / 3.0
    viscous = pressure_tensor - p * pi_up
    eta = -float(u_lo @ ms.entropy_flow) / (c**2 * n)
    return MacroState(n=float(n), u=u, rho=rho, p=p, eta=float(eta), viscous=viscous)


@dataclass(frozen=True)
class EnvelopeReport:
    """Outcome of the two-sided envelope check J/C <= M <= C J^alpha."""

    feasible: bool
    c_given: float
    c_minimal: float
    worst_lower_node: int
    worst_upper_node: int
    upper_worst_on_boundary: bool


def suggest_envelope(params: MaxwellianParams, slack: float = 1.02):
    """A (theta_M, alpha) pair for which the envelope holds on the whole space.

    J must decay faster than M along every direction, so the reference
    coldness sits above the Doppler-blueshifted z; alpha then compensates on
    the redshifted side.  Raises when the boost is too fast for any
    alpha > 1/2 at the requested slack.
    """
    c = params.constants
    gamma = params.u.u0 / c.c
    beta = float(np.sqrt(np.sum(params.u.spatial**2))) / params.u.u0
    z_ref = params.z * gamma * (1.0 + beta) * slack
    alpha = params.z * gamma * (1.0 - beta) / (z_ref * slack)
    if alpha <= 0.5:
        raise ValueError("boost too fast: no alpha in (1/2, 1) satisfies the envelope")
    return c.mc2 / (c.k_B * z_ref), min(alpha, 0.999)


def envelope_check(
    params: MaxwellianParams,
    theta_M: float,
    alpha: float,
    c_bound: float,
    grid: MomentumGrid,
) -> EnvelopeReport:
    """Verify J/C <= M <= C J^alpha at every node of the grid.

    Reports the minimal feasible C for the supplied (theta_M, alpha); a worst
    upper node sitting on the outermost radial shell signals that alpha is too
    large for the boost (the violation grows with |Pbar|).
    """
    if not (0.5 < alpha <= 1.0):
        raise ValueError("alpha must lie in (1/2, 1]")
    if c_bound < 1.0:
        raise ValueError("C must be >= 1")
    consts = params.constants
    # both sides in log space: the raw densities underflow at far nodes
    log_m = np.log(params.prefactor) + params.z * params.u.dot_momentum(grid.nodes) / consts.mc2
    log_j = -consts.c * grid.p0 / (consts.k_B * theta_M)
    lower_margin = log_j - log_m             # need <= ln C
    upper_margin = log_m - alpha * log_j     # need <= ln C
    worst_lower = int(np.argmax(lower_margin))
    worst_upper = int(np.argmax(upper_margin))
    with np.errstate(over="ignore"):
        c_min = float(np.exp(max(lower_margin[worst_lower], upper_margin[worst_upper], 0.0)))
    outer = grid.outer_shell_mask()
    return EnvelopeReport(
        feasible=bool(c_min <= c_bound),
        c_given=float(c_bound),
        c_minimal=c_min,
        worst_lower_node=worst_lower,
        worst_upper_node=worst_upper,
        upper_worst_on_boundary=bool(outer[worst_upper]),
    )
