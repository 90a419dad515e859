"""Tests for the collision operator: kinematics, Q, frequency, linearization."""

import numpy as np
import pytest

from relkin.collision import (
    CollisionKernel,
    CollisionQuadrature,
    GridField,
    HARD_KERNEL,
    SOFT_KERNEL,
    assemble_L,
    build_sphere_rule,
    collision_Q,
    collision_frequency,
    fit_frequency_exponent,
    gamma_form,
    kernel_by_name,
    kinematics,
    load_matrix,
    moller_velocity_cross_form,
    post_collisional,
    project_P,
    reverse_direction,
    save_matrix,
    scattering_cosine,
)
from relkin.constants import DIMENSIONLESS
from relkin.maxwellian import MaxwellianParams, global_maxwellian, maxwellian_eval
from relkin.minkowski import FourVelocity, shell_energy
from relkin.momentum_grid import operator_grid

BACKGROUND = MaxwellianParams(n=1.0, z=1.0, u=FourVelocity.rest())


@pytest.fixture(scope="module")
def small_operator():
    grid = operator_grid(1.0, n_radial=8, n_mu=4, n_phi=6)
    op = assemble_L(BACKGROUND, grid, HARD_KERNEL, sphere=build_sphere_rule(3, 6))
    return op


# -- kernels ------------------------------------------------------------------

def test_kernel_presets_satisfy_hypotheses():
    for name in ("hard", "soft"):
        k = kernel_by_name(name)
        assert 0.0 <= k.a < min(2.0, 2.0 + k.gamma_exp)
        assert 0.0 <= k.b < min(4.0, 4.0 + k.gamma_exp)
    assert HARD_KERNEL.sigma(2.0) == 1.0
    assert SOFT_KERNEL.sigma(2.0) == 0.5


def test_kernel_envelope_bound():
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.1, 10.0, 200)
    for k in (HARD_KERNEL, SOFT_KERNEL):
        bound = k.c1 * rho**k.a + k.c2 * rho ** (-k.b)
        assert np.all(k.sigma(rho) <= bound + 1e-14)


def test_kernel_invalid_exponents():
    with pytest.raises(ValueError):
        CollisionKernel(name="bad", c1=1.0, c2=0.0, a=2.5)
    with pytest.raises(ValueError):
        CollisionKernel(name="bad", c1=0.0, c2=1.0, b=4.0)
    with pytest.raises(ValueError):
        kernel_by_name("nope")


# -- kinematics ---------------------------------------------------------------

def test_identical_momenta_degenerate():
    kin = kinematics(np.array([0.3, -0.2, 0.9]), np.array([0.3, -0.2, 0.9]))
    assert kin.rho == 0.0
    assert kin.v_moller == 0.0


def test_head_on_hand_value():
    # P = (1,0,0), Q = (-1,0,0): P.Q = -(P0)^2 - 1 so rho^2 = 2 (P0)^2 = 4
    kin = kinematics(np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
    assert kin.rho**2 == pytest.approx(4.0, rel=1e-14)
    assert kin.s == pytest.approx(8.0, rel=1e-14)
    assert kin.v_moller == pytest.approx(
        moller_velocity_cross_form([1.0, 0, 0], [-1.0, 0, 0]), rel=1e-13
    )


def test_mass_shell_relation_random_pairs():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(100, 3)) * 2.0
    q = rng.normal(size=(100, 3)) * 2.0
    from relkin.collision import _pair_scalars

    rho, s, v_mol, _, _, _ = _pair_scalars(p, q, DIMENSIONLESS)
    assert np.abs(s - rho**2 - 4.0).max() < 1e-12
    assert np.abs(v_mol - moller_velocity_cross_form(p, q)).max() < 1e-12


def test_four_momentum_conservation_thousand_quadruples():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(1000, 3)) * 3.0
    q = rng.normal(size=(1000, 3)) * 3.0
    w = rng.normal(size=(1000, 3))
    w /= np.linalg.norm(w, axis=1)[:, None]
    pp, qp = post_collisional(p, q, w)
    e_pre = shell_energy(p) + shell_energy(q)
    e_post = shell_energy(pp) + shell_energy(qp)
    assert np.max(np.abs(e_pre - e_post) / e_pre) < 1e-13
    assert np.max(np.abs(p + q - pp - qp)) < 1e-13 * np.max(e_pre)


def test_center_of_momentum_rest_limit():
    p = np.array([[0.7, 0.0, 0.0]])
    omega = np.array([[0.0, 1.0, 0.0]])
    pp, qp = post_collisional(p, -p, omega)
    kin = kinematics(p[0], -p[0])
    assert np.allclose(pp[0], 0.5 * kin.rho * omega[0], atol=1e-14)
    assert np.allclose(qp[0], -0.5 * kin.rho * omega[0], atol=1e-14)


def test_identity_collision_exists():
    # omega along the boosted relative direction reproduces the incoming pair
    rng = np.random.default_rng(3)
    p = rng.normal(size=(50, 3))
    q = rng.normal(size=(50, 3))
    omega = reverse_direction(p, q)
    assert np.abs(np.linalg.norm(omega, axis=1) - 1.0).max() < 1e-12
    pp, qp = post_collisional(p, q, omega)
    assert np.abs(pp - p).max() < 1e-12
    assert np.abs(qp - q).max() < 1e-12


def test_scattering_cosine_on_shell():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(200, 3))
    q = rng.normal(size=(200, 3))
    w = rng.normal(size=(200, 3))
    w /= np.linalg.norm(w, axis=1)[:, None]
    pp, qp = post_collisional(p, q, w)
    cth = scattering_cosine(p, q, pp, qp)
    assert np.all(np.abs(cth) <= 1.0)


def test_prepost_measure_invariance_monte_carlo():
    # d P d Q = (P'0 Q'0 / P0 Q0) d P' d Q' at fixed collision geometry: the
    # gain- and loss-side Monte Carlo estimators of the same functional agree
    rng = np.random.default_rng(5)
    n = 400_000
    # uniform in a ball large enough that the decaying functional makes the
    # boundary contribution negligible; the constant density drops out
    radius = 5.0
    p = rng.normal(size=(n, 3))
    p *= (radius * rng.uniform(size=n) ** (1.0 / 3.0) / np.linalg.norm(p, axis=1))[:, None]
    q = rng.normal(size=(n, 3))
    q *= (radius * rng.uniform(size=n) ** (1.0 / 3.0) / np.linalg.norm(q, axis=1))[:, None]
    w = rng.normal(size=(n, 3))
    w /= np.linalg.norm(w, axis=1)[:, None]
    pp, qp = post_collisional(p, q, w)
    from relkin.collision import _pair_scalars

    _, _, v_mol, _, _, _ = _pair_scalars(p, q, DIMENSIONLESS)

    def phi(a, b):
        return np.exp(-shell_energy(a) - shell_energy(b)) * (1.0 + a[:, 0] * b[:, 1])

    gain = phi(pp, qp) * v_mol
    loss = phi(p, q) * v_mol
    diff = gain.mean() - loss.mean()
    stderr = np.sqrt((gain.var() + loss.var()) / n)
    assert stderr < 0.02 * abs(loss.mean())  # the comparison has power
    assert abs(diff) < 4.0 * stderr


# -- sphere rule --------------------------------------------------------------

def test_sphere_rule_exactness():
    rule = build_sphere_rule(4, 8)
    assert rule.weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-14)
    # odd spherical harmonics integrate to zero, |x|^2 to 4 pi / 3
    x = rule.nodes[:, 0]
    z = rule.nodes[:, 2]
    assert abs(np.dot(rule.weights, x)) < 1e-13
    assert abs(np.dot(rule.weights, x * z)) < 1e-13
    assert np.dot(rule.weights, x * x) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-13)


# -- the bilinear operator Q --------------------------------------------------

def test_equilibrium_annihilation_analytic():
    grid = operator_grid(1.0, n_radial=16, n_mu=6, n_phi=8)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(4, 8))
    m_call = lambda pts: maxwellian_eval(BACKGROUND, pts)
    targets = np.array([[0.5, 0.0, 0.0], [1.0, 0.7, -0.4], [0.0, 0.0, 2.0]])
    vals, diag = collision_Q(m_call, m_call, targets, HARD_KERNEL, quad)
    assert np.max(np.abs(vals) / diag.loss_scale) < 1e-13


def test_global_maxwellian_annihilation():
    grid = operator_grid(1.0, n_radial=16, n_mu=6, n_phi=8)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(4, 8))
    j_call = lambda pts: global_maxwellian(pts, 1.3)
    vals, diag = collision_Q(j_call, j_call, np.array([[0.4, 0.2, 0.0]]), HARD_KERNEL, quad)
    assert np.max(np.abs(vals) / diag.loss_scale) < 1e-13


def test_equilibrium_annihilation_gridded_refines():
    # sampled-and-interpolated Maxwellian: the defect is discretization error
    # and drops by >= 4x when the radial and polar resolutions double
    rng = np.random.default_rng(42)
    targets = rng.normal(size=(8, 3)) * 0.5
    rels = []
    for n_r, n_mu in [(48, 8), (96, 16)]:
        g = operator_grid(1.0, n_radial=n_r, n_mu=n_mu, n_phi=8, efolds=14.0, radial_power=1.0)
        quad = CollisionQuadrature(qgrid=g, sphere=build_sphere_rule(4, 8))
        m_field = GridField(g, maxwellian_eval(BACKGROUND, g.nodes))
        vals, diag = collision_Q(m_field, m_field, targets, HARD_KERNEL, quad)
        rels.append(np.max(np.abs(vals) / diag.loss_scale))
    assert rels[0] < 1e-3
    assert rels[0] / rels[1] > 4.0


def test_collision_invariant_moments_vanish():
    grid = operator_grid(1.0, n_radial=16, n_mu=6, n_phi=8)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(4, 8))
    shifted = MaxwellianParams(n=0.7, z=1.4, u=FourVelocity.from_spatial([0.15, 0.0, 0.0]))
    f_neq = lambda pts: maxwellian_eval(BACKGROUND, pts) + maxwellian_eval(shifted, pts)
    vals, diag = collision_Q(f_neq, f_neq, grid.nodes, HARD_KERNEL, quad)
    tests = [np.ones(grid.size), grid.nodes[:, 0], grid.nodes[:, 1], grid.nodes[:, 2], grid.p0]
    for phi in tests:
        moment = grid.integrate(vals * phi)
        loss_moment = grid.integrate(diag.loss_scale * np.maximum(np.abs(phi), 0.0))
        assert abs(moment) / loss_moment < 5e-4


def test_soft_kernel_excision_reported():
    grid = operator_grid(1.0, n_radial=12, n_mu=4, n_phi=6)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(3, 6))
    m_call = lambda pts: maxwellian_eval(BACKGROUND, pts)
    # target on a grid node: rho = 0 against itself is inside the excised ball
    vals, diag = collision_Q(m_call, m_call, grid.nodes[:2], SOFT_KERNEL, quad)
    assert np.all(np.isfinite(vals))
    assert np.all(diag.excised_estimate >= 0.0)


# -- collision frequency ------------------------------------------------------

def test_frequency_radial_symmetry():
    grid = operator_grid(1.0, n_radial=20, n_mu=6, n_phi=8)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(4, 8))
    nu_x = collision_frequency(np.array([[2.0, 0.0, 0.0]]), HARD_KERNEL, 1.0, quad)
    nu_z = collision_frequency(np.array([[0.0, 0.0, 2.0]]), HARD_KERNEL, 1.0, quad)
    assert nu_x == pytest.approx(nu_z, rel=1e-3)


def test_frequency_refinement_oracle_at_origin():
    coarse = operator_grid(1.0, n_radial=16, n_mu=6, n_phi=8)
    fine = operator_grid(1.0, n_radial=32, n_mu=8, n_phi=8)
    target = np.array([[0.0, 0.0, 0.0]])
    vals = []
    for g in (coarse, fine):
        quad = CollisionQuadrature(qgrid=g, sphere=build_sphere_rule(4, 8))
        vals.append(collision_frequency(target, HARD_KERNEL, 1.0, quad))
    assert vals[0] == pytest.approx(vals[1], rel=1e-5)


def test_frequency_growth_exponents():
    grid = operator_grid(1.0, n_radial=24, n_mu=6, n_phi=8, efolds=25.0)
    quad = CollisionQuadrature(qgrid=grid, sphere=build_sphere_rule(4, 8))
    beta_hard = fit_frequency_exponent(HARD_KERNEL, 1.0, quad)
    beta_soft = fit_frequency_exponent(SOFT_KERNEL, 1.0, quad)
    assert abs(beta_hard - HARD_KERNEL.beta) < 0.2
    assert abs(beta_soft - SOFT_KERNEL.beta) < 0.2


# -- linearized operator ------------------------------------------------------

def test_operator_symmetric_by_construction(small_operator):
    assert small_operator.symmetry_defect() < 1e-14


def test_operator_nullity_exactly_five(small_operator):
    sv = small_operator.singular_values()
    assert sv[-5] / sv[0] < 1e-10
    assert sv[-6] / sv[-5] > 10.0


def test_operator_annihilates_sqrt_m(small_operator):
    op = small_operator
    for vec in (op.sqrt_m, op.sqrt_m * op.grid.nodes[:, 0], op.sqrt_m * op.grid.p0):
        image = op.apply(vec)
        rel = np.linalg.norm(op.sqrt_w * image) / (
            np.linalg.norm(op.matrix) * np.linalg.norm(op.sqrt_w * vec)
        )
        assert rel < 1e-9


def test_operator_positive_semidefinite(small_operator):
    op = small_operator
    rng = np.random.default_rng(7)
    for _ in range(100):
        h_hat = op.sqrt_w * rng.normal(size=op.size)
        assert h_hat @ op.matrix @ h_hat >= -1e-12 * np.linalg.norm(op.matrix)


def test_projection_structure(small_operator):
    op = small_operator
    rng = np.random.default_rng(8)
    h = rng.normal(size=op.size) * np.exp(-0.2 * op.grid.p0)
    ph, h_perp = op.project(h)
    assert np.allclose(ph + h_perp, h, atol=1e-12 * np.abs(h).max())
    # idempotent and exactly complementary
    ph2, residue = op.project(ph)
    assert np.allclose(ph2, ph, atol=1e-11 * np.abs(ph).max())
    assert np.abs(residue).max() < 1e-11 * np.abs(ph).max()
    # h_perp is orthogonal to all five invariant directions
    hat = op.sqrt_w * h_perp
    assert np.abs(op.null_basis.T @ hat).max() < 1e-11 * np.linalg.norm(hat)


def test_project_p_standalone_matches(small_operator):
    op = small_operator
    rng = np.random.default_rng(9)
    h = rng.normal(size=op.size) * np.exp(-0.3 * op.grid.p0)
    ph_a, perp_a = op.project(h)
    ph_b, perp_b = project_P(h, BACKGROUND, op.grid)
    assert np.allclose(ph_a, ph_b, atol=1e-12 * np.abs(h).max())
    assert np.allclose(perp_a, perp_b, atol=1e-12 * np.abs(h).max())


def test_projection_of_orthogonal_vector(small_operator):
    op = small_operator
    rng = np.random.default_rng(10)
    h = rng.normal(size=op.size) * np.exp(-0.2 * op.grid.p0)
    _, h_perp = op.project(h)
    ph, _ = op.project(h_perp)
    assert np.abs(ph).max() < 1e-11 * np.abs(h_perp).max()


def test_coercivity_positive(small_operator):
    assert small_operator.delta0() > 0.0


def test_sigma_scaling(small_operator):
    # doubling the kernel doubles both L and nu, so delta0 with the scaled nu
    # is invariant while the quotient against the original nu doubles
    double = CollisionKernel(name="hard2", c1=2.0, c2=0.0, beta=0.0)
    op2 = assemble_L(
        BACKGROUND, small_operator.grid, double, sphere=build_sphere_rule(3, 6)
    )
    scale = np.linalg.norm(op2.matrix) / np.linalg.norm(small_operator.matrix)
    assert scale == pytest.approx(2.0, rel=1e-12)
    assert np.allclose(op2.matrix, 2.0 * small_operator.matrix, atol=1e-12 * np.linalg.norm(op2.matrix))
    assert np.allclose(op2.nu, 2.0 * small_operator.nu, rtol=1e-12)
    assert op2.delta0() == pytest.approx(small_operator.delta0(), rel=1e-9)


def test_gamma_form_bilinear(small_operator):
    op = small_operator
    grid, sphere = op.grid, build_sphere_rule(3, 6)
    h = np.exp(-0.3 * grid.p0) * (1.0 + 0.2 * grid.nodes[:, 0])
    f = np.exp(-0.2 * grid.p0)
    g1 = gamma_form(h, f, BACKGROUND, grid, HARD_KERNEL, sphere)
    g2 = gamma_form(2.0 * h, f, BACKGROUND, grid, HARD_KERNEL, sphere)
    g3 = gamma_form(h, 3.0 * f, BACKGROUND, grid, HARD_KERNEL, sphere)
    assert np.allclose(g2, 2.0 * g1, atol=1e-12 * np.abs(g1).max())
    assert np.allclose(g3, 3.0 * g1, atol=1e-12 * np.abs(g1).max())
    assert np.abs(gamma_form(np.zeros(grid.size), f, BACKGROUND, grid, HARD_KERNEL, sphere)).max() == 0.0
    assert np.abs(gamma_form(h, np.zeros(grid.size), BACKGROUND, grid, HARD_KERNEL, sphere)).max() == 0.0


def test_gamma_invariant_moments():
    # <Gamma(h, h), sqrt(M) phi> ~ 0 for the five collision invariants;
    # analytic arguments so the check measures quadrature, not interpolation
    grid = operator_grid(1.0, n_radial=16, n_mu=6, n_phi=8)
    sqrt_m = np.sqrt(maxwellian_eval(BACKGROUND, grid.nodes))

    def h(pts):
        pts = np.asarray(pts, dtype=float)
        p0 = shell_energy(pts)
        return np.exp(-0.3 * p0) * (1.0 + 0.2 * pts[..., 0] - 0.1 * pts[..., 2])

    gam = gamma_form(h, h, BACKGROUND, grid, HARD_KERNEL, build_sphere_rule(4, 8))
    scale = grid.integrate(np.abs(gam) * sqrt_m * grid.p0)
    for phi in (np.ones(grid.size), grid.nodes[:, 0], grid.nodes[:, 2], grid.p0):
        moment = grid.integrate(gam * sqrt_m * phi)
        assert abs(moment) < 1e-3 * scale


def test_gamma_magnitude_bound(small_operator):
    # |<Gamma(h1,h2), h3>| <= C |h3|_{inf,l} |h2|_2 |h1|_2 with a stable C
    op = small_operator
    grid = op.grid
    rng = np.random.default_rng(12)
    w2 = (1.0 + np.sum(grid.nodes**2, axis=1))
    ratios = []
    for _ in range(6):
        h1 = rng.normal(size=grid.size) * np.exp(-0.4 * grid.p0)
        h2 = rng.normal(size=grid.size) * np.exp(-0.4 * grid.p0)
        h3 = rng.normal(size=grid.size) * np.exp(-0.4 * grid.p0)
        gam = gamma_form(h1, h2, BACKGROUND, grid, HARD_KERNEL, build_sphere_rule(3, 6))
        lhs = abs(grid.integrate(gam * h3))
        n1 = np.sqrt(grid.integrate(h1**2))
        n2 = np.sqrt(grid.integrate(h2**2))
        n3 = np.abs(w2 * h3).max()
        ratios.append(lhs / (n1 * n2 * n3))
    assert max(ratios) < 10.0  # finite fitted constant at order unity


def test_matrix_binary_round_trip(tmp_path, small_operator):
    path = tmp_path / "op.bin"
    save_matrix(path, small_operator.matrix)
    back = load_matrix(path)
    assert back.shape == small_operator.matrix.shape
    assert np.array_equal(back, small_operator.matrix)
