"""Hilbert-expansion construction on top of an Euler solution.

Builds the leading Maxwellian F0 from the fluid fields, evaluates the kinetic
transport term (d_t + Phat . d_x) F0 by the chain rule through the Maxwellian
parameters, checks the five solvability conditions, solves the first
correction F1 through the pseudoinverse of the assembled linearized operator
on the null-space complement, and evaluates the defect of the remainder
equation for the truncated ansatz.

Linear-operator work happens in the h = F/sqrt(M) normalization throughout;
operator assemblies are cached per quantized background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eos
from .collision import (
    CollisionKernel,
    LinearizedOperator,
    SphereRule,
    assemble_L,
    build_sphere_rule,
    gamma_form,
)
from .constants import DIMENSIONLESS, PhysicalConstants
from .euler import EulerState, euler_rhs, spatial_derivative
from .maxwellian import MaxwellianParams, maxwellian_eval
from .minkowski import FourVelocity
from .momentum_grid import MomentumGrid

DECAY_EXPONENT = 0.9
SOLVABILITY_RTOL = 1e-6


class InhomogeneityNotOrthogonal(ArithmeticError):
    """The transport term has a null-space component beyond the threshold."""


@dataclass
class ExpansionTerm:
    """One order of the Hilbert expansion on (cells x momentum nodes)."""

    order: int
    values: np.ndarray          # (n_cells, n_momentum)
    decay_q: float
    decay_coeff: float          # C(q): max over nodes of |F_k| / M^q

    def certificate_holds(self, f0_values) -> bool:
        bound = self.decay_coeff * np.asarray(f0_values) ** self.decay_q
        return bool(np.all(np.abs(self.values) <= bound * (1.0 + 1e-12) + 1e-300))


@dataclass(frozen=True)
class WeightedNorms:
    """L2, dissipation and weighted-sup norms of a phase-space field."""

    ell: float
    l2: float
    nu_weighted: float
    sup_weighted: float


def weighted_norms(values, grid: MomentumGrid, ell: float, nu=None, dx: float = 1.0) -> WeightedNorms:
    """Norms of samples on (cells x momentum nodes) or a single momentum slice.

    The weight is w_ell = (1 + |Pbar|^2)^(ell/2); the nu-norm needs per-node
    collision frequencies.  ``dx`` is the spatial cell volume.
    """
    if ell < 0.0:
        raise ValueError("weight exponent must be nonnegative")
    values = np.atleast_2d(np.asarray(values, dtype=float))
    w_ell = (1.0 + np.sum(grid.nodes**2, axis=1)) ** (ell / 2.0)
    l2 = float(np.sqrt(dx * np.sum(values**2 @ grid.weights)))
    nu_norm = float("nan")
    if nu is not None:
        nu_norm = float(np.sqrt(dx * np.sum(values**2 @ (grid.weights * np.asarray(nu)))))
    sup = float(np.abs(values * w_ell[None, :]).max())
    return WeightedNorms(ell=float(ell), l2=l2, nu_weighted=nu_norm, sup_weighted=sup)


# ---------------------------------------------------------------------------
# F0 and its transport
# ---------------------------------------------------------------------------

def f0_params(state: EulerState):
    """Maxwellian parameters of every cell from the fluid fields."""
    der = state.derived()
    n_flat = der.n.reshape(-1)
    z_flat = der.z.reshape(-1)
    u_flat = state.u.reshape(3, -1)
    params = []
    for i in range(n_flat.size):
        params.append(
            MaxwellianParams(
                n=float(n_flat[i]),
                z=float(z_flat[i]),
                u=FourVelocity.from_spatial(u_flat[:, i], state.constants),
                constants=state.constants,
            )
        )
    return params


def f0_values(state: EulerState, grid: MomentumGrid) -> np.ndarray:
    """F0 samples, shape (n_cells, n_momentum)."""
    return np.stack([maxwellian_eval(p, grid.nodes) for p in f0_params(state)])


def _parameter_rates(state: EulerState):
    """(d_t + grad) data of (n, z, u) per cell from the Euler solution.

    Returns time derivatives and spatial gradients of n, z and u, flattened
    over cells, using the chain rule through (eta, p).
    """
    der = state.derived()
    deta_dt, dp_dt, du_dt = euler_rhs(state)
    z, p = der.z, state.p
    dpdz = eos.dp_dz_over_p(z)
    k_b = state.constants.k_B

    def z_rate(eta_rate, p_rate):
        return (p_rate / p + eta_rate / k_b) / dpdz

    def n_rate(p_rate, zr):
        return (z * p_rate + p * zr) / state.constants.mc2

    def dj(f, j):
        return spatial_derivative(f, state.dx, j, state.deriv_order)

    zt = z_rate(deta_dt, dp_dt)
    rates = {
        "n_t": n_rate(dp_dt, zt).reshape(-1),
        "z_t": zt.reshape(-1),
        "u_t": du_dt.reshape(3, -1),
    }
    for j in range(3):
        zj = z_rate(dj(state.eta, j), dj(state.p, j))
        rates[f"n_{j}"] = n_rate(dj(state.p, j), zj).reshape(-1)
        rates[f"z_{j}"] = zj.reshape(-1)
        rates[f"u_{j}"] = np.stack([dj(state.u[i], j) for i in range(3)]).reshape(3, -1)
    return rates, der


def transport_term(state: EulerState, grid: MomentumGrid) -> np.ndarray:
    """(d_t + Phat . d_x) F0 per cell on the momentum grid, shape (cells, N).

    The time derivatives of the Maxwellian parameters come from the Euler
    equations; spatial derivatives use the solver's stencil; the momentum
    dependence is analytic through the chain rule.
    """
    rates, der = _parameter_rates(state)
    consts = state.constants
    c = consts.c
    nodes, p0 = grid.nodes, grid.p0
    phat = c * nodes / p0[:, None]              # (N, 3)
    n_flat = der.n.reshape(-1)
    z_flat = der.z.reshape(-1)
    u_flat = state.u.reshape(3, -1)
    u0_flat = der.u0.reshape(-1)
    ratio = eos.bessel_ratio(z_flat)

    out = np.empty((n_flat.size, grid.size))
    for i in range(n_flat.size):
        u4 = FourVelocity.from_spatial(u_flat[:, i], consts)
        m_vals = maxwellian_eval(
            MaxwellianParams(n=float(n_flat[i]), z=float(z_flat[i]), u=u4, constants=consts),
            nodes,
        )
        u_dot_p = u4.dot_momentum(nodes)
        dlnm_dz = 3.0 / z_flat[i] + ratio[i] + u_dot_p / consts.mc2
        dlnm_duj = z_flat[i] / consts.mc2 * (
            nodes - (u_flat[:, i][None, :] * (p0 / u0_flat[i])[:, None])
        )
        g_n = rates["n_t"][i] + sum(phat[:, j] * rates[f"n_{j}"][i] for j in range(3))
        g_z = rates["z_t"][i] + sum(phat[:, j] * rates[f"z_{j}"][i] for j in range(3))
        g_u = [
            rates["u_t"][k, i] + sum(phat[:, j] * rates[f"u_{j}"][k, i] for j in range(3))
            for k in range(3)
        ]
        out[i] = m_vals * (
            g_n / n_flat[i] + dlnm_dz * g_z + sum(dlnm_duj[:, k] * g_u[k] for k in range(3))
        )
    return out


def solvability_check(transport_values, grid: MomentumGrid) -> np.ndarray:
    """The five moments <phi_i, transport> per cell, phi in {1, Pbar, P^0}."""
    transport_values = np.atleast_2d(np.asarray(transport_values, dtype=float))
    tests = np.stack(
        [np.ones(grid.size), grid.nodes[:, 0], grid.nodes[:, 1], grid.nodes[:, 2], grid.p0]
    )
    return transport_values @ (tests * grid.weights[None, :]).T


# ---------------------------------------------------------------------------
# solving the first correction
# ---------------------------------------------------------------------------

def solve_order(
    transport_cell: np.ndarray,
    op: LinearizedOperator,
    phi_null=None,
    solvability_rtol: float = SOLVABILITY_RTOL,
):
    """Minimum-norm solution of L(F_k) = -transport on the null complement.

    Works in the h = F/sqrt(M) normalization: solves the symmetric system for
    hhat on the orthogonal complement of the five invariant directions and
    maps back.  ``phi_null`` optionally adds a null-space element (nodal F
    samples); the default is the minimum-norm choice Phi = 0.

    Returns (f_values, relative solver residual).  Raises
    ``InhomogeneityNotOrthogonal`` when the transport term has a null
    component above ``solvability_rtol`` (relative to its norm).
    """
    rhs_h = -np.asarray(transport_cell, dtype=float) / op.sqrt_m
    rhs_hat = op.sqrt_w * rhs_h
    null_part = op.null_basis.T @ rhs_hat
    rhs_norm = float(np.linalg.norm(rhs_hat))
    if rhs_norm > 0.0 and np.linalg.norm(null_part) > solvability_rtol * rhs_norm:
        raise InhomogeneityNotOrthogonal(
            f"null components {null_part} exceed {solvability_rtol} x |rhs| = "
            f"{solvability_rtol * rhs_norm:.3e}"
        )
    rhs_perp = rhs_hat - op.null_basis @ null_part
    h_hat = _solve_on_complement(op, rhs_perp)
    residual = float(
        np.linalg.norm(op.matrix @ h_hat - rhs_perp) / max(rhs_norm, 1e-300)
    )
    f_vals = op.sqrt_m * (h_hat / op.sqrt_w)
    if phi_null is not None:
        f_vals = f_vals + np.asarray(phi_null, dtype=float)
    return f_vals, residual


def _solve_on_complement(op: LinearizedOperator, rhs_hat: np.ndarray) -> np.ndarray:
    """Pseudoinverse apply through the operator's cached eigendecomposition."""
    if not hasattr(op, "_eig_cache"):
        vals, vecs = np.linalg.eigh(op.matrix)
        op._eig_cache = (vals, vecs)
    vals, vecs = op._eig_cache
    cut = 1e-10 * vals.max()
    inv = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    return vecs @ (inv * (vecs.T @ rhs_hat))


@dataclass
class OperatorCache:
    """Assembled operators keyed by quantized background parameters."""

    grid: MomentumGrid
    kernel: CollisionKernel
    sphere: SphereRule = field(default_factory=lambda: build_sphere_rule(3, 6))
    rel_tol: float = 0.05
    _store: dict = field(default_factory=dict)

    def key(self, params: MaxwellianParams):
        qn = round(np.log(params.n) / self.rel_tol)
        qz = round(np.log(params.z) / self.rel_tol)
        qu = tuple(round(float(v) / (self.rel_tol * params.constants.c)) for v in params.u.spatial)
        return (qn, qz, qu)

    def get(self, params: MaxwellianParams) -> LinearizedOperator:
        k = self.key(params)
        if k not in self._store:
            self._store[k] = assemble_L(params, self.grid, self.kernel, sphere=self.sphere)
        return self._store[k]

    def __len__(self) -> int:
        return len(self._store)


def build_first_correction(
    state: EulerState,
    cache: OperatorCache,
    phi1=None,
    solvability_rtol: float = SOLVABILITY_RTOL,
) -> tuple:
    """F1 for every cell of the Euler state; returns (ExpansionTerm, residuals).

    Backgrounds are quantized through the cache, so near-constant states share
    one operator assembly.
    """
    grid = cache.grid
    params = f0_params(state)
    transport = transport_term(state, grid)
    f0_vals = f0_values(state, grid)
    values = np.empty_like(transport)
    residuals = np.empty(len(params))
    for i, prm in enumerate(params):
        op = cache.get(prm)
        phi_cell = None if phi1 is None else np.asarray(phi1)[i]
        values[i], residuals[i] = solve_order(
            transport[i], op, phi_null=phi_cell, solvability_rtol=solvability_rtol
        )
    with np.errstate(divide="ignore"):
        coeff = float(np.max(np.abs(values) / f0_vals**DECAY_EXPONENT, initial=0.0))
    term = ExpansionTerm(order=1, values=values, decay_q=DECAY_EXPONENT, decay_coeff=coeff)
    return term, residuals


# ---------------------------------------------------------------------------
# remainder-equation defect
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RemainderDefect:
    """Norms of the kinetic-equation defect of the truncated ansatz."""

    epsilon: float
    l2: float
    sup_weighted: float


def remainder_defect(
    state: EulerState,
    cache: OperatorCache,
    term1: ExpansionTerm,
    epsilon: float,
    remainder=None,
    f1_time_derivative=None,
    ell: float = 5.0,
) -> RemainderDefect:
    """Defect of the rescaled kinetic equation for F = F0 + eps F1 + eps^3 R.

    Every term is evaluated with the assembled operators: the linear collision
    terms through the operator action, the quadratic ones through the
    nonlinear form.  With R = 0 this measures how well the truncated
    expansion satisfies the kinetic equation; the order-zero bracket vanishes
    to solver accuracy, leaving an O(eps) defect.

    ``f1_time_derivative`` optionally supplies d_t F1 samples; the default
    freezes F1 in time (the quasi-static evaluation), which changes the
    O(eps) constant but not the scaling.
    """
    grid = cache.grid
    consts = state.constants
    params = f0_params(state)
    transport0 = transport_term(state, grid)
    f1 = term1.values
    n_cells = f1.shape[0]
    phat = consts.c * grid.nodes / grid.p0[:, None]

    # spatial transport of F1 across cells (periodic stencil per momentum node)
    shape = state.grid_shape
    transport1 = np.zeros_like(f1)
    field3 = f1.reshape(shape + (grid.size,))
    for j in range(len(shape)):
        dfj = spatial_derivative(field3, state.dx, j, state.deriv_order)
        transport1 += (dfj.reshape(n_cells, grid.size)) * phat[None, :, j]
    if f1_time_derivative is not None:
        transport1 = transport1 + np.asarray(f1_time_derivative, dtype=float)

    defect = np.empty_like(f1)
    for i, prm in enumerate(params):
        op = cache.get(prm)
        sqrt_m = op.sqrt_m
        h1 = f1[i] / sqrt_m
        l_f1 = sqrt_m * op.apply(h1)                       # L(F1) nodal
        gamma11 = sqrt_m * gamma_form(h1, h1, prm, grid, cache.kernel, cache.sphere)
        cell = transport0[i] + l_f1 + epsilon * (transport1[i] - gamma11)
        if remainder is not None:
            h_r = np.asarray(remainder)[i] / sqrt_m
            l_r = sqrt_m * op.apply(h_r)
            gamma_1r = sqrt_m * (
                gamma_form(h1, h_r, prm, grid, cache.kernel, cache.sphere)
                + gamma_form(h_r, h1, prm, grid, cache.kernel, cache.sphere)
            )
            gamma_rr = sqrt_m * gamma_form(h_r, h_r, prm, grid, cache.kernel, cache.sphere)
            cell = cell + epsilon**2 * l_r - epsilon**3 * gamma_1r - epsilon**5 * gamma_rr
        defect[i] = cell
    norms = weighted_norms(defect, grid, ell=ell, dx=state.dx ** len(state.grid_shape))
    return RemainderDefect(epsilon=float(epsilon), l2=norms.l2, sup_weighted=norms.sup_weighted)
