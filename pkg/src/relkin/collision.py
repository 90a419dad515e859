"""Relativistic Boltzmann collision operator in the center-of-momentum reduction.

Provides the collision kinematics (relative momentum, CM energy, Moller
velocity, post-collisional momenta), kernel presets obeying the hard/soft
hypotheses, the bilinear operator Q by quadrature, the collision frequency,
the linearized operator with its five-dimensional null space, the null-space
projection, a coercivity estimate, and the nonlinear form Gamma.

The linearized operator is assembled in its symmetric Dirichlet form

    <L h, g> = (1/4) int v_o sigma M(P) M(Q) [D psi][D chi] dP dQ domega,
    D psi = psi(P') + psi(Q') - psi(P) - psi(Q),   psi = h / sqrt(M),

accumulated as a sum of outer products, so the assembled matrix is symmetric
positive semidefinite by construction.  Off-grid values of psi are obtained by
tricubic interpolation whose stencil weights are corrected to reproduce the
five collision invariants {1, Pbar, P^0} exactly; combined with the exact
four-momentum conservation of the post-collisional formulas this makes the
invariant directions exact null vectors of the assembled matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import DIMENSIONLESS, PhysicalConstants
from .maxwellian import MaxwellianParams, global_maxwellian, maxwellian_eval
from .minkowski import shell_energy
from .momentum_grid import MomentumGrid


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionKernel:
    """Differential cross-section sigma(rho, theta) = (C1 rho^a + C2 rho^-b) sigma0.

    The exponents obey 0 <= a < min(2, 2+gamma) and 0 <= b < min(4, 4+gamma)
    with angular profile 0 <= sigma0(theta) <= sin^gamma(theta).  ``beta`` is
    the empirically fitted collision-frequency growth exponent of the preset
    (nu ~ (P^0)^{beta/2}); it is recorded, not derived.
    """

    name: str
    c1: float
    c2: float
    a: float = 0.0
    b: float = 0.0
    gamma_exp: float = 0.0
    beta: float = 0.0
    angular_profile: object = None   # optional callable sigma0(cos_theta)

    def __post_init__(self) -> None:
        if self.c1 < 0.0 or self.c2 < 0.0:
            raise ValueError("kernel constants must be nonnegative")
        if not (0.0 <= self.a < min(2.0, 2.0 + self.gamma_exp)):
            raise ValueError("exponent a violates the kernel hypotheses")
        if not (0.0 <= self.b < min(4.0, 4.0 + self.gamma_exp)):
            raise ValueError("exponent b violates the kernel hypotheses")
        if self.gamma_exp <= -2.0:
            raise ValueError("angular exponent must exceed -2")

    @property
    def is_soft(self) -> bool:
        return self.c2 > 0.0 and self.b > 0.0

    @property
    def needs_angle(self) -> bool:
        return self.angular_profile is not None

    def sigma(self, rho, cos_theta=None):
        """Evaluate sigma; rho = 0 entries of soft kernels must be excised upstream."""
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            val = np.zeros_like(rho)
            if self.c1 > 0.0:
                val = val + self.c1 * rho**self.a
            if self.c2 > 0.0:
                val = val + self.c2 * np.where(rho > 0.0, rho, 1.0) ** (-self.b)
        if self.angular_profile is not None:
            val = val * self.angular_profile(cos_theta)
        return val


HARD_KERNEL = CollisionKernel(name="hard", c1=1.0, c2=0.0, a=0.0, b=0.0, beta=0.0)
SOFT_KERNEL = CollisionKernel(name="soft", c1=0.0, c2=1.0, a=0.0, b=1.0, beta=-1.0)
_PRESETS = {"hard": HARD_KERNEL, "soft": SOFT_KERNEL}


def kernel_by_name(name: str) -> CollisionKernel:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown kernel preset {name!r}; have {sorted(_PRESETS)}") from None


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionKinematics:
    """Scalar kinematic data of a momentum pair (and optionally a quadruple)."""

    rho: float
    s: float
    v_moller: float
    gamma_boost: float
    cos_theta: float | None = None


def _pair_scalars(pbar, qbar, constants: PhysicalConstants):
    """Vectorized (rho, s, v_moller, gamma) for momenta of shape (..., 3)."""
    pbar = np.asarray(pbar, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    c = constants.c
    p0 = shell_energy(pbar, constants)
    q0 = shell_energy(qbar, constants)
    pq = -p0 * q0 + np.sum(pbar * qbar, axis=-1)
    rho_sq = np.maximum(-2.0 * (pq + constants.mc**2), 0.0)
    s = rho_sq + 4.0 * constants.mc**2
    rho = np.sqrt(rho_sq)
    v_mol = 0.25 * c * rho * np.sqrt(s) / (p0 * q0)
    gamma = (p0 + q0) / np.sqrt(s)
    return rho, s, v_mol, gamma, p0, q0


def moller_velocity_cross_form(pbar, qbar, constants: PhysicalConstants = DIMENSIONLESS):
    """The |vp - vq| / cross-product expression for v_o (consistency oracle)."""
    pbar = np.asarray(pbar, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    c = constants.c
    vp = pbar / shell_energy(pbar, constants)[..., None]
    vq = qbar / shell_energy(qbar, constants)[..., None]
    diff = np.sum((vp - vq) ** 2, axis=-1)
    cross = np.cross(vp, vq)
    return 0.5 * c * np.sqrt(np.maximum(diff - np.sum(cross * cross, axis=-1) / c**2, 0.0))


def kinematics(
    pbar, qbar, constants: PhysicalConstants = DIMENSIONLESS, omega=None
) -> CollisionKinematics:
    rho, s, v_mol, gamma, _, _ = _pair_scalars(pbar, qbar, constants)
    cos_theta = None
    if omega is not None:
        pp, qp = post_collisional(pbar, qbar, omega, constants)
        cos_theta = float(scattering_cosine(pbar, qbar, pp, qp, constants))
    return CollisionKinematics(
        rho=float(rho), s=float(s), v_moller=float(v_mol), gamma_boost=float(gamma),
        cos_theta=cos_theta,
    )


def post_collisional(pbar, qbar, omega, constants: PhysicalConstants = DIMENSIONLESS):
    """Post-collisional 3-momenta for c.m. parameter omega (unit 3-vector).

    Four-momentum conservation holds to rounding.  When Pbar + Qbar = 0 the
    projector term is taken in its continuous limit (gamma -> 1): a pure
    omega transfer.
    """
    pbar = np.asarray(pbar, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    omega = np.asarray(omega, dtype=float)
    rho, _, _, gamma, _, _ = _pair_scalars(pbar, qbar, constants)
    g = pbar + qbar
    g2 = np.sum(g * g, axis=-1)
    g_dot_w = np.sum(g * omega, axis=-1)
    safe = np.where(g2 > 0.0, g2, 1.0)
    corr = np.where(
        (g2 > 0.0)[..., None],
        (gamma - 1.0)[..., None] * g * (g_dot_w / safe)[..., None],
        0.0,
    )
    shift = 0.5 * rho[..., None] * (omega + corr)
    return 0.5 * g + shift, 0.5 * g - shift


def reverse_direction(pbar, qbar, constants: PhysicalConstants = DIMENSIONLESS):
    """The omega that maps the pair's own collision back onto itself.

    Solves (Pbar - Qbar)/rho = omega + (gamma-1) ghat (ghat . omega): the
    inverse scales the ghat-component by 1/gamma.  Feeding the result into
    ``post_collisional`` exchanges nothing: (P', Q') = (P, Q).
    """
    pbar = np.asarray(pbar, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    rho, _, _, gamma, _, _ = _pair_scalars(pbar, qbar, constants)
    v = (pbar - qbar) / rho[..., None]
    g = pbar + qbar
    g2 = np.sum(g * g, axis=-1)
    safe = np.where(g2 > 0.0, g2, 1.0)
    comp = np.sum(g * v, axis=-1) / safe
    omega = v - np.where((g2 > 0.0)[..., None], (1.0 - 1.0 / gamma)[..., None] * g * comp[..., None], 0.0)
    return omega


def scattering_cosine(pbar, qbar, pbar_post, qbar_post, constants: PhysicalConstants = DIMENSIONLESS):
    """cos(theta) = (P - Q) . (P' - Q') / rho^2, clamped to [-1, 1].

    On-shell quadruples cannot exceed unit magnitude; values beyond
    1 + 1e-12 indicate an off-shell input and raise.
    """
    d_pre0 = shell_energy(pbar, constants) - shell_energy(qbar, constants)
    d_post0 = shell_energy(pbar_post, constants) - shell_energy(qbar_post, constants)
    d_pre = np.asarray(pbar, dtype=float) - np.asarray(qbar, dtype=float)
    d_post = np.asarray(pbar_post, dtype=float) - np.asarray(qbar_post, dtype=float)
    rho_sq = -(d_pre0**2) + np.sum(d_pre * d_pre, axis=-1)
    val = (-d_pre0 * d_post0 + np.sum(d_pre * d_post, axis=-1)) / rho_sq
    if np.any(np.abs(val) > 1.0 + 1e-12):
        raise ValueError("scattering cosine exceeds unit magnitude: off-shell quadruple")
    return np.clip(val, -1.0, 1.0)


# ---------------------------------------------------------------------------
# sphere rule for the omega integral
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereRule:
    nodes: np.ndarray    # (M, 3) unit vectors
    weights: np.ndarray  # (M,), summing to 4 pi

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def build_sphere_rule(n_polar: int = 4, n_azimuth: int = 8) -> SphereRule:
    """Product rule: Gauss-Legendre in cos(theta) x trapezoid in phi."""
    mu, wmu = np.polynomial.legendre.leggauss(int(n_polar))
    phi = 2.0 * np.pi * np.arange(int(n_azimuth)) / int(n_azimuth)
    st = np.sqrt(1.0 - mu**2)
    nodes = np.stack(
        [
            (st[:, None] * np.cos(phi)[None, :]).ravel(),
            (st[:, None] * np.sin(phi)[None, :]).ravel(),
            np.broadcast_to(mu[:, None], (mu.size, phi.size)).ravel(),
        ],
        axis=-1,
    )
    weights = (wmu[:, None] * np.full(phi.size, 2.0 * np.pi / phi.size)[None, :]).ravel()
    return SphereRule(nodes=nodes, weights=weights)


# ---------------------------------------------------------------------------
# fields and the bilinear operator Q
# ---------------------------------------------------------------------------

class GridField:
    """Samples on a momentum grid, evaluable off-grid by tricubic interpolation."""

    def __init__(self, grid: MomentumGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError("sample count does not match the grid")
        self.grid = grid
        self.values = values

    def __call__(self, points):
        return self.grid.interpolate(self.values, points)


def as_field(f):
    if callable(f):
        return f
    grid, values = f
    return GridField(grid, values)


@dataclass(frozen=True)
class CollisionQuadrature:
    """Quadrature specification for Q: the Qbar grid, the omega rule, excision."""

    qgrid: MomentumGrid
    sphere: SphereRule
    excision_radius: float | None = None   # soft kernels: epsilon ball around rho = 0

    def default_excision(self) -> float:
        radii = np.sort(np.unique(np.round(self.qgrid.radii, 12)))
        return float(radii[0]) if radii.size == 1 else float(radii[1] - radii[0])


@dataclass(frozen=True)
class QDiagnostics:
    """Per-target diagnostics of a Q evaluation."""

    excised_estimate: np.ndarray
    loss_scale: np.ndarray


def _kernel_factor(kernel, rho, pbar, qbar, pp, qp, constants):
    if kernel.needs_angle:
        return kernel.sigma(rho, scattering_cosine(pbar, qbar, pp, qp, constants))
    return kernel.sigma(rho)


def collision_Q(
    f,
    g,
    targets,
    kernel: CollisionKernel,
    quad: CollisionQuadrature,
    constants: PhysicalConstants = DIMENSIONLESS,
):
    """Q(F, G)(Pbar) = int dQ int domega v_o sigma [F(P')G(Q') - F(P)G(Q)].

    ``f`` and ``g`` are either callables or (grid, samples) pairs.  Soft
    kernels (b > 0) excise an epsilon ball around rho = 0; the excised
    contribution is estimated from the local integrable-power model and
    reported in the diagnostics.

    Returns (values at targets, QDiagnostics).
    """
    f = as_field(f)
    g = as_field(g)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_t = targets.shape[0]
    qnodes = quad.qgrid.nodes
    qw = quad.qgrid.weights
    sph = quad.sphere
    eps = quad.excision_radius
    if kernel.is_soft and eps is None:
        eps = quad.default_excision()

    out = np.empty(n_t)
    excised = np.zeros(n_t)
    loss_scale = np.empty(n_t)
    f_at_t = np.asarray(f(targets), dtype=float)

    for i in range(n_t):
        p = targets[i]
        rho, _, v_mol, _, _, _ = _pair_scalars(p[None, :], qnodes, constants)
        q_rep = np.repeat(qnodes, sph.size, axis=0)
        p_rep = np.broadcast_to(p, q_rep.shape)
        pp, qp = post_collisional(p_rep, q_rep, np.tile(sph.nodes, (qnodes.shape[0], 1)), constants)
        sig = _kernel_factor(kernel, np.repeat(rho, sph.size), p_rep, q_rep, pp, qp, constants)
        weight = np.repeat(qw * v_mol, sph.size) * np.tile(sph.weights, qnodes.shape[0])
        gain = f(pp) * g(qp)
        loss = f_at_t[i] * np.repeat(np.asarray(g(qnodes), dtype=float), sph.size)
        integrand = weight * sig * (gain - loss)
        if eps is not None:
            mask = np.repeat(rho, sph.size) < eps
            if np.any(mask):
                # integrable-power model: sigma ~ rho^-b with b < 4 is summable
                # against the rho^2-ish pair density; bound by the capped kernel
                capped = weight[mask] * kernel.sigma(np.full(mask.sum(), eps)) * np.abs(
                    (gain - loss)[mask]
                )
                excised[i] = float(np.sum(capped))
                integrand = np.where(mask, 0.0, integrand)
        out[i] = float(np.sum(integrand))
        loss_block = weight * sig * np.abs(loss)
        if eps is not None:
            loss_block = np.where(np.repeat(rho, sph.size) < eps, 0.0, loss_block)
        loss_scale[i] = float(np.sum(loss_block))
    return out, QDiagnostics(excised_estimate=excised, loss_scale=loss_scale)


def collision_frequency(
    pbar,
    kernel: CollisionKernel,
    theta_M: float,
    quad: CollisionQuadrature,
    constants: PhysicalConstants = DIMENSIONLESS,
):
    """nu(Pbar) = int dQ int domega v_o sigma J(Q) against the global Maxwellian."""
    targets = np.atleast_2d(np.asarray(pbar, dtype=float))
    j_vals = global_maxwellian(quad.qgrid.nodes, theta_M, constants)
    qnodes = quad.qgrid.nodes
    sph = quad.sphere
    eps = quad.excision_radius
    if kernel.is_soft and eps is None:
        eps = quad.default_excision()
    out = np.empty(targets.shape[0])
    for i, p in enumerate(targets):
        rho, _, v_mol, _, _, _ = _pair_scalars(p[None, :], qnodes, constants)
        if kernel.needs_angle:
            pp, qp = post_collisional(
                np.broadcast_to(p, (qnodes.shape[0] * sph.size, 3)),
                np.repeat(qnodes, sph.size, axis=0),
                np.tile(sph.nodes, (qnodes.shape[0], 1)),
                constants,
            )
            sig = _kernel_factor(
                kernel, np.repeat(rho, sph.size),
                np.broadcast_to(p, pp.shape), np.repeat(qnodes, sph.size, axis=0),
                pp, qp, constants,
            )
            contrib = np.repeat(quad.qgrid.weights * v_mol * j_vals, sph.size) * np.tile(
                sph.weights, qnodes.shape[0]
            ) * sig
            rho_rep = np.repeat(rho, sph.size)
        else:
            sig = kernel.sigma(rho)
            contrib = quad.qgrid.weights * v_mol * j_vals * sig * (4.0 * np.pi)
            rho_rep = rho
        if eps is not None:
            contrib = np.where(rho_rep < eps, 0.0, contrib)
        out[i] = float(np.sum(contrib))
    return out if out.size > 1 else float(out[0])


def fit_frequency_exponent(
    kernel: CollisionKernel,
    theta_M: float,
    quad: CollisionQuadrature,
    constants: PhysicalConstants = DIMENSIONLESS,
    radii=None,
):
    """Fit beta in nu ~ (P^0)^{beta/2} by log-log regression over a P range."""
    if radii is None:
        radii = np.geomspace(2.0, 40.0, 12) * constants.mc
    targets = np.zeros((len(radii), 3))
    targets[:, 0] = radii
    nu = np.atleast_1d(collision_frequency(targets, kernel, theta_M, quad, constants))
    p0 = shell_energy(targets, constants)
    slope = np.polyfit(np.log(p0), np.log(nu), 1)[0]
    return 2.0 * slope


# ---------------------------------------------------------------------------
# linearized operator
# ---------------------------------------------------------------------------

@dataclass
class LinearizedOperator:
    """Dense symmetric matrix of the linearized collision operator on a grid.

    ``matrix`` represents the quadratic form <L h, h> in the weighted nodal
    convention hhat = sqrt(w) h: <L h, g> = ghat^T matrix hhat, so symmetry
    and positive semidefiniteness are intrinsic.  ``null_basis`` holds the
    five orthonormalized invariant directions sqrt(w) sqrt(M) {1, Pbar, P^0};
    ``nu`` are per-node collision frequencies against the background's global
    Maxwellian."""

    grid: MomentumGrid
    background: MaxwellianParams
    kernel: CollisionKernel
    matrix: np.ndarray
    nu: np.ndarray
    null_basis: np.ndarray
    sqrt_m: np.ndarray
    sqrt_w: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def symmetry_defect(self) -> float:
        a = self.matrix
        return float(np.linalg.norm(a - a.T) / np.linalg.norm(a))

    def apply(self, h_nodal):
        """Nodal action (L h)(P_i) for nodal samples of h."""
        hhat = self.sqrt_w * np.asarray(h_nodal, dtype=float)
        return (self.matrix @ hhat) / self.sqrt_w

    def project(self, h_nodal):
        """Split h into its invariant component and the orthogonal remainder."""
        hhat = self.sqrt_w * np.asarray(h_nodal, dtype=float)
        coeff = self.null_basis.T @ hhat
        p_hat = self.null_basis @ coeff
        return p_hat / self.sqrt_w, (hhat - p_hat) / self.sqrt_w

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def delta0(self) -> float:
        """Coercivity constant: min of <L h, h>/|h|_nu^2 over the null complement."""
        q, _ = np.linalg.qr(self.null_basis, mode="complete")
        z = q[:, 5:]
        a = z.T @ self.matrix @ z
        b = z.T @ (self.nu[:, None] * z)
        from scipy.linalg import eigh

        vals = eigh(0.5 * (a + a.T), 0.5 * (b + b.T), subset_by_index=[0, 0], eigvals_only=True)
        d0 = float(vals[0])
        if d0 <= 0.0:
            raise ArithmeticError(f"coercivity estimate is not positive: {d0}")
        return d0

    def save(self, path) -> None:
        save_matrix(path, self.matrix)


def _invariant_basis(grid: MomentumGrid, sqrt_m: np.ndarray, sqrt_w: np.ndarray) -> np.ndarray:
    cols = np.stack(
        [
            np.ones(grid.size),
            grid.nodes[:, 0],
            grid.nodes[:, 1],
            grid.nodes[:, 2],
            grid.p0,
        ],
        axis=1,
    )
    basis = sqrt_w[:, None] * sqrt_m[:, None] * cols
    q, r = np.linalg.qr(basis)
    if np.min(np.abs(np.diag(r))) < 1e-12 * np.max(np.abs(np.diag(r))):
        raise ArithmeticError("collision-invariant basis is numerically rank deficient on this grid")
    return q


def _corrected_stencil(grid: MomentumGrid, points, constants: PhysicalConstants):
    """Interpolation stencils that reproduce {1, Pbar, P^0} exactly at the query.

    Starting from the tricubic weights w0, solves the minimum-norm correction
    with the five moment constraints (a 5x5 KKT system per query).  Queries
    outside the grid keep zero weights.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    (ir, wr), (im, wm), (ip, wp), outside = grid.interp_stencil_axes(pts)
    n_r, n_mu, n_phi = grid.shape
    idx = ((ir[:, :, None, None] * n_mu + im[:, None, :, None]) * n_phi
           + ip[:, None, None, :]).reshape(-1, 64)
    w0 = (wr[:, :, None, None] * wm[:, None, :, None] * wp[:, None, None, :]).reshape(-1, 64)
    if np.any(outside):
        w0[outside] = 0.0
    live = ~outside
    if not np.any(live):
        return idx, w0

    # Everything factors along the (t, mu, phi) axes: the five invariants are
    # tensor products 1 = 1*1*1, x = r*s*cos, y = r*s*sin, z = r*mu*1,
    # p0 = p0(r)*1*1, so the interpolation defect, the 5x5 Gram of the
    # constraint Jacobian, and the correction tensor are all built from
    # per-axis (M, 4) factor arrays with no 3D gathers.
    m = int(np.count_nonzero(live))
    r_st = np.take(grid.radii, ir[live])
    p0_st = np.sqrt(constants.mc**2 + r_st**2)
    mu_st = np.take(grid.mu_nodes, im[live])
    s_st = np.sqrt(1.0 - mu_st**2)
    phi_vals = 2.0 * np.pi * np.arange(n_phi) / n_phi
    cos_st = np.take(np.cos(phi_vals), ip[live])
    sin_st = np.take(np.sin(phi_vals), ip[live])
    ones = np.ones((m, 4))

    fr = np.stack([ones, r_st, r_st, r_st, p0_st], axis=1)       # (M, 5, 4)
    fm = np.stack([ones, s_st, s_st, mu_st, ones], axis=1)
    fp = np.stack([ones, cos_st, sin_st, ones, ones], axis=1)

    wrl, wml, wpl = wr[live], wm[live], wp[live]
    interp = (
        np.einsum("mca,ma->mc", fr, wrl)
        * np.einsum("mca,ma->mc", fm, wml)
        * np.einsum("mca,ma->mc", fp, wpl)
    )
    target = np.empty((m, 5))
    target[:, 0] = 1.0
    target[:, 1:4] = pts[live]
    target[:, 4] = shell_energy(pts[live], constants)
    defect = interp - target

    gram = (
        np.einsum("mca,mda->mcd", fr, fr)
        * np.einsum("mca,mda->mcd", fm, fm)
        * np.einsum("mca,mda->mcd", fp, fp)
    )
    trace = gram[:, range(5), range(5)].sum(axis=1)
    gram += (1e-13 / 5.0 * trace)[:, None, None] * np.eye(5)[None, :, :]
    lam = np.linalg.solve(gram, defect[..., None])[..., 0]
    # correction = sum_c lam_c fr_c (x) fm_c (x) fp_c, contracted pairwise
    t_rm = (lam[:, :, None] * fr)[:, :, :, None] * fm[:, :, None, :]   # (M, 5, 4, 4)
    corr = np.einsum("mcab,mcg->mabg", t_rm, fp).reshape(m, 64)
    wl_full = w0[live]
    wl_full -= corr
    w0[live] = wl_full
    return idx, w0


def assemble_L(
    background: MaxwellianParams,
    grid: MomentumGrid,
    kernel: CollisionKernel,
    sphere: SphereRule | None = None,
    pair_chunk: int = 60000,
) -> LinearizedOperator:
    """Assemble the linearized operator about a Maxwellian background.

    The grid must use the truncated radial mapping: the psi = h/sqrt(M)
    change of variables needs 1/sqrt(M) representable at every node.
    Quadrature pairs run over grid x grid nodes and the sphere rule; pairs
    are processed in chunks of at most ``pair_chunk`` per sphere node.
    Grids above 2048 nodes are rejected (dense cost grows like N^2 per row).
    """
    if sphere is None:
        sphere = build_sphere_rule(4, 8)
    n = grid.size
    if n > 2048:
        raise MemoryError("operator assembly is limited to grids of at most 2048 nodes")
    if grid.mapping != "truncated":
        raise ValueError("operator assembly needs a truncated-mapping grid (see operator_grid)")
    consts = background.constants
    m_vals = maxwellian_eval(background, grid.nodes)
    sqrt_m = np.sqrt(m_vals)
    inv_sqrt_m = 1.0 / sqrt_m
    if np.any(~np.isfinite(inv_sqrt_m)):
        raise ArithmeticError("background Maxwellian underflows on the grid; shrink the cutoff")
    sqrt_w = np.sqrt(grid.weights)

    eps = None
    if kernel.is_soft:
        radii = np.sort(np.unique(np.round(grid.radii, 12)))
        eps = float(radii[1] - radii[0]) if radii.size > 1 else float(radii[0])

    # omega-independent pair data; the integrand is symmetric under i <-> j,
    # so only ordered pairs i <= j are kept, with doubled off-diagonal weight
    iu, ju = np.triu_indices(n)
    p_i = grid.nodes[iu]
    q_j = grid.nodes[ju]
    rho, _, v_mol, _, _, _ = _pair_scalars(p_i, q_j, consts)
    pair_sym = np.where(iu == ju, 1.0, 2.0)
    base = (
        0.25 * pair_sym * grid.weights[iu] * grid.weights[ju] * v_mol
        * m_vals[iu] * m_vals[ju]
    )
    if not kernel.needs_angle:
        sig = kernel.sigma(rho)
        if eps is not None:
            sig = np.where(rho < eps, 0.0, sig)
        base = base * sig
    live = np.flatnonzero(base > 0.0)

    a_psi = np.zeros((n, n))
    for k in range(sphere.size):
        omega = sphere.nodes[k]
        for start in range(0, live.size, pair_chunk):
            sel = live[start : start + pair_chunk]
            pp, qp = post_collisional(p_i[sel], q_j[sel], np.broadcast_to(omega, (sel.size, 3)), consts)
            measure = base[sel] * sphere.weights[k]
            if kernel.needs_angle:
                sig = _kernel_factor(kernel, rho[sel], p_i[sel], q_j[sel], pp, qp, consts)
                if eps is not None:
                    sig = np.where(rho[sel] < eps, 0.0, sig)
                measure = measure * sig
            nq = sel.size
            idx_p, wgt_p = _corrected_stencil(grid, pp, consts)
            idx_q, wgt_q = _corrected_stencil(grid, qp, consts)
            # dense Delta rows of the Dirichlet form, acting on nodal h
            rows64 = np.repeat(np.arange(nq), 64) * n
            rows_q = np.arange(nq) * n
            cols = np.concatenate(
                [rows64 + idx_p.reshape(-1), rows64 + idx_q.reshape(-1),
                 rows_q + iu[sel], rows_q + ju[sel]]
            )
            vals = np.concatenate(
                [(wgt_p * inv_sqrt_m[idx_p]).reshape(-1), (wgt_q * inv_sqrt_m[idx_q]).reshape(-1),
                 -inv_sqrt_m[iu[sel]], -inv_sqrt_m[ju[sel]]]
            )
            delta = np.bincount(cols, weights=vals, minlength=nq * n).reshape(nq, n)
            dw = delta * np.sqrt(measure)[:, None]
            a_psi += dw.T @ dw

    # the delta rows already act on nodal h (the 1/sqrt(M) factors are folded
    # into the stencil weights); convert the bilinear form to hhat = sqrt(w) h
    d = 1.0 / sqrt_w
    matrix = d[:, None] * a_psi * d[None, :]
    matrix = 0.5 * (matrix + matrix.T)

    theta_m = background.theta
    quad = CollisionQuadrature(qgrid=grid, sphere=sphere, excision_radius=eps)
    nu = np.atleast_1d(collision_frequency(grid.nodes, kernel, theta_m, quad, consts))
    return LinearizedOperator(
        grid=grid,
        background=background,
        kernel=kernel,
        matrix=matrix,
        nu=nu,
        null_basis=_invariant_basis(grid, sqrt_m, sqrt_w),
        sqrt_m=sqrt_m,
        sqrt_w=sqrt_w,
    )


def project_P(h_nodal, background: MaxwellianParams, grid: MomentumGrid):
    """Orthogonal projection onto span{sqrt(M), Pbar sqrt(M), P^0 sqrt(M)}.

    Returns (Ph, h_perp) as nodal samples; the inner product is the grid's
    L^2(dPbar) quadrature.
    """
    sqrt_m = np.sqrt(maxwellian_eval(background, grid.nodes))
    sqrt_w = np.sqrt(grid.weights)
    basis = _invariant_basis(grid, sqrt_m, sqrt_w)
    hhat = sqrt_w * np.asarray(h_nodal, dtype=float)
    p_hat = basis @ (basis.T @ hhat)
    return p_hat / sqrt_w, (hhat - p_hat) / sqrt_w


def gamma_form(
    h,
    f,
    background: MaxwellianParams,
    grid: MomentumGrid,
    kernel: CollisionKernel,
    sphere: SphereRule | None = None,
):
    """Gamma(h, f) = M^{-1/2} Q(sqrt(M) h, sqrt(M) f), nodewise on the grid.

    ``h`` and ``f`` are nodal samples (interpolated off-grid) or analytic
    callables, matching the contract of :func:`collision_Q`.
    """
    if sphere is None:
        sphere = build_sphere_rule(4, 8)
    sqrt_m = np.sqrt(maxwellian_eval(background, grid.nodes))

    def weighted(arg):
        if callable(arg):
            return lambda pts: np.sqrt(maxwellian_eval(background, pts)) * arg(pts)
        return GridField(grid, sqrt_m * np.asarray(arg, dtype=float))

    quad = CollisionQuadrature(qgrid=grid, sphere=sphere)
    vals, _ = collision_Q(weighted(h), weighted(f), grid.nodes, kernel, quad, background.constants)
    return vals / sqrt_m


# ---------------------------------------------------------------------------
# dense binary export (header: two int64 dims, then float64 row-major)
# ---------------------------------------------------------------------------

def save_matrix(path, matrix) -> None:
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    with open(path, "wb") as fh:
        np.array(matrix.shape, dtype=np.int64).tofile(fh)
        matrix.tofile(fh)


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims = np.fromfile(fh, dtype=np.int64, count=2)
        data = np.fromfile(fh, dtype=np.float64)
    return data.reshape(dims[0], dims[1])
