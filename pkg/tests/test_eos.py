"""Tests for the kinetic equation of state."""

import math

import numpy as np
import pytest

from relkin import eos
from relkin.bessel import bessel_ratio
from relkin.constants import DIMENSIONLESS, PhysicalConstants

# Independent quadrature oracle (mpmath, 40 digits, defining integral):
K1_1 = 0.6019072301972345747375
K2_1 = 1.624838898635177482811
# entropy at (n=2, z=1) in dimensionless mode, assembled from the oracle K values:
# ln(4 pi e^4) - ln 2 + ln K_2(1) + K_1(1)/K_2(1)
ETA_ORACLE_N2_Z1 = 6.693726912606409621769


def test_pressure_is_n_over_z_dimensionless():
    tp = eos.thermo_from_nz(1.0, 1.0)
    assert tp.p == 1.0
    assert eos.pressure_map(1.0, 2.0) == 0.5


def test_rho_identity_machine_precision():
    for n, z in [(0.5, 0.5), (1.0, 1.0), (2.0, 5.0), (7.0, 0.02)]:
        tp = eos.thermo_from_nz(n, z)
        assert tp.rho == pytest.approx(tp.p * (z * bessel_ratio(z) + 3.0), rel=1e-15)
        assert tp.rho - 3.0 * tp.p > 0.0


def test_rho_over_p_small_z_band():
    # rho = p (z K1/K2 + 3) with the small-z ratio bound |K1/K2 - z/2| <= 2 z^2
    z = 0.05
    tp = eos.thermo_from_nz(1.0, z)
    lo = 3.0 + z * (z / 2.0 - 2.0 * z**2)
    hi = 3.0 + z * (z / 2.0 + 2.0 * z**2)
    assert lo <= tp.rho / tp.p <= hi


def test_entropy_against_oracle():
    assert eos.entropy_map(2.0, 1.0) == pytest.approx(ETA_ORACLE_N2_Z1, rel=1e-13)


def test_entropy_log_in_n():
    for n, z in [(0.3, 0.7), (1.0, 1.0), (4.0, 20.0)]:
        diff = eos.entropy_map(n, z) - eos.entropy_map(2.0 * n, z)
        assert diff == pytest.approx(math.log(2.0), rel=1e-13)


def test_homogeneity_in_n():
    lam = 3.7
    for n, z in [(0.2, 0.1), (1.0, 2.0)]:
        assert eos.pressure_map(lam * n, z) == pytest.approx(lam * eos.pressure_map(n, z), rel=1e-15)
        assert eos.entropy_map(lam * n, z) == pytest.approx(
            eos.entropy_map(n, z) - math.log(lam), rel=1e-13
        )


@pytest.mark.parametrize("n,z", [(1.0, 0.05), (1.0, 100.0), (3.0, 5.0)])
def test_invert_round_trip(n, z):
    inv = eos.invert_eos(float(eos.entropy_map(n, z)), float(eos.pressure_map(n, z)))
    assert inv.z == pytest.approx(z, rel=1e-10)
    assert inv.n == pytest.approx(n, rel=1e-10)
    assert inv.residual < 1e-12


def test_invert_round_trip_grid():
    ns = np.geomspace(1e-2, 1e2, 20)
    zs = np.geomspace(1e-2, 1e2, 20)
    for n in ns:
        for z in zs:
            inv = eos.invert_eos(float(eos.entropy_map(n, z)), float(eos.pressure_map(n, z)))
            assert abs(inv.n - n) / n < 1e-10
            assert abs(inv.z - z) / z < 1e-10


def test_entropy_shift_halves_density():
    # n enters the entropy map only as n^-1 inside the log, so raising eta by
    # k_B ln 2 (with p following the pressure relation) halves n at unchanged z
    n, z = 1.4, 0.9
    eta = float(eos.entropy_map(n, z))
    p = float(eos.pressure_map(n, z))
    inv = eos.invert_eos(eta + math.log(2.0), p / 2.0)
    assert inv.z == pytest.approx(z, rel=1e-10)
    assert inv.n == pytest.approx(n / 2.0, rel=1e-10)


def test_invert_with_warm_start_and_grid_solver():
    n, z = 2.0, 7.0
    eta = float(eos.entropy_map(n, z))
    p = float(eos.pressure_map(n, z))
    inv = eos.invert_eos(eta, p, z_init=6.0)
    assert inv.z == pytest.approx(z, rel=1e-10)
    ns, zs = eos.invert_eos_grid(np.full(4, eta), np.full(4, p), np.full(4, 6.0))
    assert np.allclose(zs, z, rtol=1e-10) and np.allclose(ns, n, rtol=1e-10)


def test_invert_dimensionful_constants():
    consts = PhysicalConstants(m0=1.67e-27, c=3.0e8, k_B=1.38e-23, h=6.626e-34)
    n, z = 1.0e25, 3.0
    inv = eos.invert_eos(
        float(eos.entropy_map(n, z, consts)), float(eos.pressure_map(n, z, consts)), consts
    )
    assert inv.n == pytest.approx(n, rel=1e-10)
    assert inv.z == pytest.approx(z, rel=1e-10)


def test_dp_dz_paper_inequalities():
    assert 0.05 * eos.dp_dz_over_p(0.05) < -3.0
    assert 100.0 * eos.dp_dz_over_p(100.0) < -1.0


def test_dp_dz_matches_constant_eta_finite_difference():
    z0 = 1.0
    eta0 = float(eos.entropy_map(1.0, z0))

    def p_of_z(z):
        return float(eos.pressure_map(eos.constant_eta_density(eta0, z), z))

    h = 1e-6
    fd = (p_of_z(z0 + h) - p_of_z(z0 - h)) / (2.0 * h * p_of_z(z0))
    assert eos.dp_dz_over_p(z0) == pytest.approx(fd, rel=1e-8)


def test_drho_dp_matches_finite_difference_chain():
    z0 = 1.0
    eta0 = float(eos.entropy_map(1.0, z0))

    def state(z):
        n = eos.constant_eta_density(eta0, z)
        return float(eos.energy_density(n, z)), float(eos.pressure_map(n, z))

    h = 1e-6
    (rp, pp), (rm, pm) = state(z0 + h), state(z0 - h)
    assert eos.drho_dp(z0) == pytest.approx((rp - rm) / (pp - pm), rel=1e-8)


def test_sound_speed_paper_tolerances():
    assert abs(eos.sound_speed_sq(0.05) - 1.0 / 3.0) <= 0.0025
    assert abs(eos.drho_dp(100.0) - 60.0) <= 41.0


def test_sound_speed_limits_monotone_trend():
    zs = np.geomspace(1e-3, 1e3, 200)
    cs2 = eos.sound_speed_sq(zs)
    assert cs2[0] == pytest.approx(1.0 / 3.0, abs=1e-5)
    # ultrarelativistic tail decays like 5/(3z)
    assert cs2[-1] == pytest.approx(5.0 / (3.0 * zs[-1]), rel=0.05)
    assert np.all(np.diff(cs2) < 0.0)


def test_scan_no_violations_middle_regime():
    rep = eos.scan_conjectures(0.1, 70.0, 2000)
    assert rep.sign_violations == 0
    assert rep.sound_violations == 0


def test_scan_large_z_estimate():
    rep = eos.scan_conjectures(70.0, 500.0, 500)
    assert np.all(np.abs(rep.drho_dp - 3.0 * rep.z / 5.0) <= 41.0)


def test_scan_csv_schema(tmp_path):
    rep = eos.scan_conjectures(0.5, 2.0, 5)
    out = tmp_path / "scan.csv"
    rep.write_csv(out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "z,dp_dz_over_p,drho_dp,sound_speed_sq"
    assert len(lines) == 6
    first = [float(x) for x in lines[1].split(",")]
    assert first[0] == 0.5
    # full double precision round-trips
    assert first[1] == float(eos.dp_dz_over_p(0.5))


@pytest.mark.parametrize("z", [0.05, 1.0, 5.0, 100.0])
def test_maxwell_relations_second_order(z):
    res_coarse = eos.maxwell_relations_check(1.0, z, step=1e-2)
    res_fine = eos.maxwell_relations_check(1.0, z, step=1e-3)
    for coarse, fine in zip(res_coarse, res_fine):
        assert fine < coarse / 50.0  # O(step^2) decay
        assert fine < 1e-4


def test_density_relation_exact_at_fixed_z():
    # both rho and p are degree 1 in n at fixed z, so the analytic identity
    # rho + p = n * (rho + p)/n holds exactly; the finite difference measures
    # only the eta-correction along the constant-eta curve
    n, z, lam = 1.3, 2.0, 2.5
    rho_p = eos.energy_density(n, z) + eos.pressure_map(n, z)
    rho_p_scaled = eos.energy_density(lam * n, z) + eos.pressure_map(lam * n, z)
    assert rho_p_scaled == pytest.approx(lam * rho_p, rel=1e-15)


def test_domain_errors():
    with pytest.raises(ValueError):
        eos.thermo_from_nz(-1.0, 1.0)
    with pytest.raises(ValueError):
        eos.thermo_from_nz(1.0, 0.0)
    with pytest.raises(ValueError):
        eos.invert_eos(0.0, -2.0)
    with pytest.raises(ValueError):
        eos.scan_conjectures(2.0, 1.0, 100)
