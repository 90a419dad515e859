"""Momentum-space discretization.

Tensor product of a mapped Gauss-Legendre radial rule, r = R t/(1-t) for
t in (0, 1), with a product rule on the unit sphere (Gauss-Legendre in
cos(theta), uniform trapezoid in phi).  The quadrature weights integrate
against the flat measure dPbar; the mass-shell factor 1/P^0 is applied per
integrand, never baked into the weights.

The grid also provides local tricubic (4-point Lagrange per axis)
interpolation in the structured coordinates (t, mu, phi), which the collision
module uses for off-grid evaluation of post-collisional momenta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import DIMENSIONLESS, PhysicalConstants
from .minkowski import shell_energy

DEFAULT_RADIAL = 64
DEFAULT_N_MU = 8
DEFAULT_N_PHI = 12
_PEAK_DROP_LOG = 40.0  # cutoff where the Maxwellian falls below e^-40 ~ 4e-18 of peak


@dataclass(frozen=True)
class MomentumGrid:
    """Nodes, mass-shell energies and dPbar quadrature weights.

    Two radial maps are supported.  ``mapping="rational"`` sends t in (0, 1)
    to r = R t/(1 - t), covering the whole half line (best for spectrally
    accurate moments).  ``mapping="truncated"`` uses r = R t, a hard cutoff at
    R; fields must be below grid tolerance there.  The truncated map keeps
    1/sqrt(M) representable on every node, which the linearized-operator
    assembly requires.
    """

    nodes: np.ndarray          # (N, 3) momenta
    p0: np.ndarray             # (N,) shell energies
    weights: np.ndarray        # (N,) weights for integration against dPbar
    cutoff: float              # radial map scale R
    t_nodes: np.ndarray        # (n_r,) radial Gauss nodes in (0, 1)
    mu_nodes: np.ndarray       # (n_mu,) Gauss nodes in (-1, 1)
    n_phi: int
    constants: PhysicalConstants = field(default=DIMENSIONLESS)
    mapping: str = "rational"
    radial_power: float = 1.0  # truncated map r = R t^power; > 1 clusters at the origin

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self):
        return (self.t_nodes.size, self.mu_nodes.size, self.n_phi)

    @property
    def radii(self) -> np.ndarray:
        if self.mapping == "truncated":
            return self.cutoff * self.t_nodes**self.radial_power
        return self.cutoff * self.t_nodes / (1.0 - self.t_nodes)

    def outer_shell_mask(self) -> np.ndarray:
        """Flat mask of the outermost radial layer (truncation-error probe)."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[-1, :, :] = True
        return mask.reshape(-1)

    # -- quadrature ---------------------------------------------------------

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def gaussian_selftest(self) -> float:
        """Relative error integrating exp(-|P|^2) against its exact value."""
        exact = np.pi**1.5
        got = self.integrate(np.exp(-np.sum(self.nodes**2, axis=-1)))
        return abs(got - exact) / exact

    # -- structured coordinates and interpolation ---------------------------

    def structured_coords(self, points):
        """(t, mu, phi) of arbitrary momenta, shape (..., 3) -> three arrays."""
        points = np.asarray(points, dtype=float)
        r = np.sqrt(np.sum(points * points, axis=-1))
        if self.mapping == "truncated":
            t = (r / self.cutoff) ** (1.0 / self.radial_power)
        else:
            t = r / (self.cutoff + r)
        safe_r = np.where(r > 0.0, r, 1.0)
        mu = np.where(r > 0.0, points[..., 2] / safe_r, 0.0)
        phi = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2.0 * np.pi)
        return t, np.clip(mu, -1.0, 1.0), phi

    def interp_stencil_axes(self, points):
        """Per-axis 4-point stencils (indices, weights) plus the outside mask."""
        t, mu, phi = self.structured_coords(np.asarray(points, dtype=float).reshape(-1, 3))
        ir, wr = _lagrange_1d(self.t_nodes, t)
        im, wm = _lagrange_1d(self.mu_nodes, mu)
        ip, wp = _lagrange_periodic(self.n_phi, phi)
        t_edge = 1.0 if self.mapping == "truncated" else self.t_nodes[-1]
        return (ir, wr), (im, wm), (ip, wp), (t > t_edge)

    def interp_stencil(self, points):
        """Tricubic interpolation stencil for query momenta.

        Returns (flat_indices, weights) of shape (M, 64).  Queries beyond the
        radial edge get zero weights: fields are below grid tolerance at the
        cutoff by precondition.
        """
        (ir, wr), (im, wm), (ip, wp), outside = self.interp_stencil_axes(points)
        n_r, n_mu, n_phi = self.shape
        # tensor combination: (M, 4, 4, 4) -> (M, 64)
        idx = (ir[:, :, None, None] * n_mu + im[:, None, :, None]) * n_phi + ip[:, None, None, :]
        wgt = wr[:, :, None, None] * wm[:, None, :, None] * wp[:, None, None, :]
        if np.any(outside):
            wgt[outside] = 0.0
        return idx.reshape(-1, 64), wgt.reshape(-1, 64)

    def interpolate(self, values, points):
        values = np.asarray(values, dtype=float)
        idx, wgt = self.interp_stencil(points)
        out = np.einsum("ms,ms->m", values[idx], wgt)
        return out.reshape(np.asarray(points).shape[:-1])

    def refined(self, radial_factor=1.5, mu_factor=1.0, phi_factor=1.0) -> "MomentumGrid":
        n_r = max(4, int(round(self.t_nodes.size * radial_factor)))
        n_mu = max(4, int(round(self.mu_nodes.size * mu_factor)))
        n_phi = max(4, int(round(self.n_phi * phi_factor)))
        return build_grid(self.cutoff, n_r, n_mu, n_phi, self.constants, self.mapping)


def _lagrange_1d(nodes, x):
    """4-point Lagrange stencil on a sorted non-uniform node set.

    Returns (indices (M,4), weights (M,4)); stencils clamp at the ends.
    """
    n = nodes.size
    if n < 4:
        raise ValueError("need at least 4 nodes per axis for cubic interpolation")
    pos = np.searchsorted(nodes, x)
    start = np.clip(pos - 2, 0, n - 4)
    idx = start[:, None] + np.arange(4)[None, :]
    xs = nodes[idx]                                   # (M, 4)
    w = np.ones_like(xs)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[:, a] *= (x - xs[:, b]) / (xs[:, a] - xs[:, b])
    return idx, w


def _lagrange_periodic(n: int, phi):
    """Uniform periodic cubic stencil in phi with spacing 2 pi / n."""
    h = 2.0 * np.pi / n
    base = np.floor(phi / h).astype(int)
    s = phi / h - base
    idx = np.mod(base[:, None] + np.arange(-1, 3)[None, :], n)
    w = np.empty((phi.size, 4))
    w[:, 0] = -s * (s - 1.0) * (s - 2.0) / 6.0
    w[:, 1] = (s * s - 1.0) * (s - 2.0) / 2.0
    w[:, 2] = -s * (s + 1.0) * (s - 2.0) / 2.0
    w[:, 3] = s * (s * s - 1.0) / 6.0
    return idx, w


def build_grid(
    cutoff: float,
    n_radial: int = DEFAULT_RADIAL,
    n_mu: int = DEFAULT_N_MU,
    n_phi: int = DEFAULT_N_PHI,
    constants: PhysicalConstants = DIMENSIONLESS,
    mapping: str = "rational",
    radial_power: float = 1.0,
) -> MomentumGrid:
    """Tensor-product grid with radial map scale ``cutoff``."""
    if cutoff <= 0.0:
        raise ValueError("cutoff must be positive")
    if mapping not in ("rational", "truncated"):
        raise ValueError("mapping must be 'rational' or 'truncated'")
    gl_t, gl_wt = np.polynomial.legendre.leggauss(int(n_radial))
    t = 0.5 * (gl_t + 1.0)
    wt = 0.5 * gl_wt
    if mapping == "truncated":
        r = cutoff * t**radial_power
        dr_dt = cutoff * radial_power * t ** (radial_power - 1.0)
    else:
        r = cutoff * t / (1.0 - t)
        dr_dt = cutoff / (1.0 - t) ** 2
    w_rad = wt * dr_dt * r * r

    mu, w_mu = np.polynomial.legendre.leggauss(int(n_mu))
    phi = 2.0 * np.pi * np.arange(int(n_phi)) / int(n_phi)
    w_phi = np.full(int(n_phi), 2.0 * np.pi / int(n_phi))

    sin_th = np.sqrt(1.0 - mu**2)
    # flat layout: ((radial * mu) * phi)
    rr = r[:, None, None]
    st = sin_th[None, :, None]
    mm = mu[None, :, None]
    cp = np.cos(phi)[None, None, :]
    sp = np.sin(phi)[None, None, :]
    px = (rr * st * cp).reshape(-1)
    py = (rr * st * sp).reshape(-1)
    pz = np.broadcast_to(rr * mm, (r.size, mu.size, phi.size)).reshape(-1)
    nodes = np.stack([px, py, pz], axis=-1)
    weights = (w_rad[:, None, None] * w_mu[None, :, None] * w_phi[None, None, :]).reshape(-1)

    return MomentumGrid(
        nodes=nodes,
        p0=shell_energy(nodes, constants),
        weights=weights,
        cutoff=float(cutoff),
        t_nodes=t,
        mu_nodes=mu,
        n_phi=int(n_phi),
        constants=constants,
        mapping=mapping,
        radial_power=float(radial_power),
    )


def operator_grid(
    z: float,
    n_radial: int = 12,
    n_mu: int = 4,
    n_phi: int = 8,
    constants: PhysicalConstants = DIMENSIONLESS,
    efolds: float = 30.0,
    radial_power: float = 2.0,
) -> MomentumGrid:
    """Truncated grid sized for collision-operator work about coldness z.

    The hard cutoff sits where the rest-frame Maxwellian has dropped
    ``efolds`` e-folds (so 1/sqrt(M) stays representable at every node), and
    the quadratic radial map concentrates nodes in the support of the
    distribution rather than its tail.
    """
    gamma = 1.0
    target = efolds / z
    lo, hi = 0.0, 4.0
    f = lambda rho: np.sqrt(1.0 + rho * rho) - 1.0
    while f(hi) < target:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    cut = float(constants.mc * hi) * gamma
    return build_grid(
        cut, n_radial, n_mu, n_phi, constants, mapping="truncated", radial_power=radial_power
    )


def cutoff_for_maxwellian(
    z: float,
    u0_over_c: float = 1.0,
    beta: float = 0.0,
    constants: PhysicalConstants = DIMENSIONLESS,
) -> float:
    """Radial scale where the Maxwellian drops _PEAK_DROP_LOG e-folds from its peak.

    Solves z (gamma(sqrt(1+rho^2) - beta rho) - gamma) = drop for rho = r/(m0 c)
    along the slowest-decay direction (momentum parallel to the bulk velocity).
    """
    gamma = float(u0_over_c)
    target = _PEAK_DROP_LOG / z
    lo, hi = 0.0, 4.0
    f = lambda rho: gamma * (np.sqrt(1.0 + rho * rho) - beta * rho) - gamma
    while f(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("cutoff search failed")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return float(constants.mc * hi)


def grid_for_params(
    z: float,
    u0_over_c: float = 1.0,
    beta: float = 0.0,
    n_radial: int = DEFAULT_RADIAL,
    n_mu: int = DEFAULT_N_MU,
    n_phi: int = DEFAULT_N_PHI,
    constants: PhysicalConstants = DIMENSIONLESS,
) -> MomentumGrid:
    """Grid whose radial map adapts to the decay of a Maxwellian at coldness z.

    The map scale is a fifth of the 40-efold radius, which puts most radial
    nodes inside the support of the distribution (the mapped rule still covers
    the whole half line, so the quadrature keeps its spectral accuracy).
    """
    cut = cutoff_for_maxwellian(z, u0_over_c, beta, constants)
    return build_grid(cut / 5.0, n_radial, n_mu, n_phi, constants)
