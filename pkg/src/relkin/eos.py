"""The kinetic equation of state.

Five macroscopic variables (n, theta, eta, p, rho) are tied together by the
equilibrium relations

    p   = k_B n theta = m0 c^2 n / z,
    rho = m0 c^2 n K_1(z)/K_2(z) + 3 p,
    eta = H(n, z)  (closed form below),

with z = m0 c^2 / (k_B theta).  This module provides the forward maps, the
Newton inversion (eta, p) -> (n, z), the Bessel-ratio formulas for
d p/d z |_eta and d rho/d p |_eta, the speed of sound, and the grid scans
behind the two monotonicity/causality conjectures.

All scalar formulas accept numpy arrays; the Euler solver relies on the
vectorized inversion with warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bessel import bessel_ratio, k_j_scaled
from .constants import DIMENSIONLESS, PhysicalConstants

NEWTON_RTOL = 1e-12
NEWTON_MAX_ITER = 60
_BRACKET_PROBES = (1e-3, 1.0, 1e3)


class MonotonicityViolation(ArithmeticError):
    """Newton hit a vanishing d p/d z |_eta: the conjectured monotonicity failed."""


@dataclass(frozen=True)
class ThermoPoint:
    """A consistent fluid state under the kinetic equation of state."""

    n: float
    z: float
    theta: float
    eta: float
    p: float
    rho: float


@dataclass(frozen=True)
class EosInversion:
    """Result of inverting (eta, p) -> (n, z), with the achieved Newton residual."""

    n: float
    z: float
    residual: float
    iterations: int


@dataclass
class ConjectureReport:
    """Grid scan of the two EOS conjectures (monotonicity and causal sound speed)."""

    z: np.ndarray
    dp_dz_over_p: np.ndarray
    drho_dp: np.ndarray
    sound_speed_sq: np.ndarray

    @property
    def sign_violations(self) -> int:
        """Grid points where d p/d z |_eta fails to be negative."""
        return int(np.count_nonzero(self.dp_dz_over_p >= 0.0))

    @property
    def sound_violations(self) -> int:
        """Grid points where the squared sound speed leaves (0, 1/3)."""
        bad = (self.sound_speed_sq <= 0.0) | (self.sound_speed_sq >= 1.0 / 3.0)
        return int(np.count_nonzero(bad))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("z,dp_dz_over_p,drho_dp,sound_speed_sq\n")
            for row in zip(self.z, self.dp_dz_over_p, self.drho_dp, self.sound_speed_sq):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        arr = np.asarray(value)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise ValueError(f"{name} must be positive and finite")


def pressure_map(n, z, constants: PhysicalConstants = DIMENSIONLESS):
    """P(n, z) = m0 c^2 n / z."""
    _check_positive(n=n, z=z)
    return constants.mc2 * np.asarray(n, dtype=float) / z


def entropy_map(n, z, constants: PhysicalConstants = DIMENSIONLESS):
    """H(n, z) = k_B ln(4 pi e^4 m0^3 c^3 h^-3 n^-1 K_2(z)/z exp(z K_1/K_2))."""
    _check_positive(n=n, z=z)
    n = np.asarray(n, dtype=float)
    z = np.asarray(z, dtype=float)
    # ln K_2 through the scaled form stays finite over the whole z range
    ln_k2 = np.log(k_j_scaled(2, z)) - z
    const = np.log(4.0 * np.pi) + 4.0 + 3.0 * np.log(constants.mc) - 3.0 * np.log(constants.h)
    return constants.k_B * (const - np.log(n) + ln_k2 - np.log(z) + z * bessel_ratio(z))


def energy_density(n, z, constants: PhysicalConstants = DIMENSIONLESS):
    """rho(n, z) = m0 c^2 n K_1/K_2 + 3 p."""
    _check_positive(n=n, z=z)
    p = pressure_map(n, z, constants)
    return p * (np.asarray(z, dtype=float) * bessel_ratio(z) + 3.0)


def thermo_from_nz(n: float, z: float, constants: PhysicalConstants = DIMENSIONLESS) -> ThermoPoint:
    """Populate the full consistent tuple (n, z, theta, eta, p, rho)."""
    _check_positive(n=n, z=z)
    p = float(pressure_map(n, z, constants))
    return ThermoPoint(
        n=float(n),
        z=float(z),
        theta=float(constants.temperature_from_z(z)),
        eta=float(entropy_map(n, z, constants)),
        p=p,
        rho=p * (z * float(bessel_ratio(z)) + 3.0),
    )


def constant_eta_density(eta, z, constants: PhysicalConstants = DIMENSIONLESS):
    """n on the constant-entropy curve: the closed-form solve of H(n, z) = eta.

    n enters H only inside the logarithm, so the curve z -> n(z) is explicit;
    derivative checks parametrize constant-eta paths this way instead of
    nesting root finds.
    """
    _check_positive(z=z)
    z = np.asarray(z, dtype=float)
    ln_k2 = np.log(k_j_scaled(2, z)) - z
    const = np.log(4.0 * np.pi) + 4.0 + 3.0 * np.log(constants.mc) - 3.0 * np.log(constants.h)
    ln_n = const + ln_k2 - np.log(z) + z * bessel_ratio(z) - np.asarray(eta) / constants.k_B
    return np.exp(ln_n)


def dp_dz_over_p(z):
    """d_z p / p at constant entropy: 3 K1/K2 + z (K1/K2)^2 - z - 4/z.

    Grouped as 3 r - 4/z + z (r - 1)(r + 1) so the O(z) pieces cancel
    analytically before roundoff matters at large z.
    """
    _check_positive(z=z)
    z = np.asarray(z, dtype=float)
    r = bessel_ratio(z)
    return 3.0 * r - 4.0 / z + z * (r - 1.0) * (r + 1.0)


def drho_dp(z):
    """d rho/d p at constant entropy, as the closed Bessel-ratio expression."""
    _check_positive(z=z)
    z = np.asarray(z, dtype=float)
    r = bessel_ratio(z)
    denom = 3.0 * r - 4.0 / z + z * (r - 1.0) * (r + 1.0)
    if np.any(denom == 0.0):
        zbad = np.atleast_1d(z)[np.atleast_1d(denom) == 0.0]
        raise ZeroDivisionError(f"d_z p vanished at z = {zbad[:5]}; ratio formula is singular there")
    numer = 4.0 * r + z * (r - 1.0) * (r + 1.0)
    return 3.0 + z * r + numer / denom


def sound_speed_sq(z):
    """Squared speed of sound in units of c^2: (d rho/d p|_eta)^{-1}."""
    return 1.0 / drho_dp(z)


def _log_pressure_times_exp_entropy(z, constants: PhysicalConstants):
    """ln(p exp(eta/k_B)) as a function of z alone (the inversion residual basis)."""
    z = np.asarray(z, dtype=float)
    ln_k2 = np.log(k_j_scaled(2, z)) - z
    const = (
        np.log(4.0 * np.pi)
        + 4.0
        + 4.0 * np.log(constants.mc)
        + np.log(constants.c)
        - 3.0 * np.log(constants.h)
    )
    return const + ln_k2 - 2.0 * np.log(z) + z * bessel_ratio(z)


def _bracket_z(target: float, constants: PhysicalConstants):
    """Bracket the root of lnG(z) = target; lnG decreases wherever the scan holds."""
    probes = [float(p) for p in _BRACKET_PROBES]
    vals = [float(_log_pressure_times_exp_entropy(p, constants)) for p in probes]
    lo, hi = probes[0], probes[-1]
    # extend outward until the (decreasing) residual changes sign
    while vals[0] < target:
        lo /= 100.0
        if lo < 1e-12:
            raise ArithmeticError(f"no bracket: target {target} above lnG({lo * 100.0})")
        probes.insert(0, lo)
        vals.insert(0, float(_log_pressure_times_exp_entropy(lo, constants)))
    while vals[-1] > target:
        hi *= 100.0
        if hi > 1e12:
            raise ArithmeticError(f"no bracket: target {target} below lnG({hi / 100.0})")
        probes.append(hi)
        vals.append(float(_log_pressure_times_exp_entropy(hi, constants)))
    for a, b, fa, fb in zip(probes, probes[1:], vals, vals[1:]):
        if (fa - target) * (fb - target) <= 0.0:
            lo, hi = a, b
            break
    # bisect on log z until the interval is narrow enough for Newton
    for _ in range(40):
        if hi / lo < 1.5:
            break
        mid = float(np.sqrt(lo * hi))
        if (float(_log_pressure_times_exp_entropy(mid, constants)) - target) >= 0.0:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def invert_eos(
    eta: float,
    p: float,
    constants: PhysicalConstants = DIMENSIONLESS,
    z_init: float | None = None,
) -> EosInversion:
    """Recover (n, z) from (eta, p) by Newton iteration on z alone.

    p exp(eta/k_B) is a function of z only, so the solve is scalar; afterwards
    n = p z / (m0 c^2).  Without ``z_init`` the root is bracketed by probing
    z in {1e-3, 1, 1e3} and bisecting to a sign change first, which keeps the
    middle regime robust where monotonicity is only conjectured.
    """
    _check_positive(p=p)
    if z_init is not None:
        _check_positive(z_init=z_init)
    target = float(np.log(p)) + float(eta) / constants.k_B
    z = float(z_init) if z_init is not None else _bracket_z(target, constants)
    residual = np.inf
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        f = float(_log_pressure_times_exp_entropy(z, constants)) - target
        slope = z * float(dp_dz_over_p(z))  # d(lnG)/d(ln z)
        if abs(slope) < 1e-14:
            raise MonotonicityViolation(
                f"d p/d z |_eta vanished at z = {z}; cannot trust the Newton root"
            )
        step = -f / slope
        step = float(np.clip(step, -2.0, 2.0))  # stay on the positive axis
        z_new = z * float(np.exp(step))
        residual = abs(z_new - z) / z_new
        z = z_new
        if residual < NEWTON_RTOL:
            n = p * z / constants.mc2
            return EosInversion(n=float(n), z=float(z), residual=residual, iterations=iteration)
    raise ArithmeticError(
        f"EOS inversion did not converge: last z = {z}, |dz|/z = {residual:.3e}"
    )


def invert_eos_grid(eta, p, z_init, constants: PhysicalConstants = DIMENSIONLESS):
    """Vectorized warm-started Newton for field solves; returns (n, z) arrays.

    Every entry must converge; the caller supplies per-entry initial guesses
    (previous step's z in the Euler solver).
    """
    eta = np.asarray(eta, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_positive(p=p, z_init=z_init)
    target = np.log(p) + eta / constants.k_B
    z = np.array(z_init, dtype=float, copy=True)
    for _ in range(NEWTON_MAX_ITER):
        f = _log_pressure_times_exp_entropy(z, constants) - target
        slope = z * dp_dz_over_p(z)
        if np.any(np.abs(slope) < 1e-14):
            raise MonotonicityViolation("d p/d z |_eta vanished during field inversion")
        step = np.clip(-f / slope, -2.0, 2.0)
        z_new = z * np.exp(step)
        residual = np.abs(z_new - z) / z_new
        z = z_new
        if residual.max() < NEWTON_RTOL:
            return p * z / constants.mc2, z
    raise ArithmeticError(
        f"field EOS inversion did not converge; worst |dz|/z = {residual.max():.3e}"
    )


def scan_conjectures(z_min: float, z_max: float, samples: int) -> ConjectureReport:
    """Evaluate the monotonicity and sound-speed quantities on a log grid.

    Violations are recorded in the report, never raised; the CSV columns
    reproduce the data behind the two published scan figures.
    """
    _check_positive(z_min=z_min, z_max=z_max)
    if not (z_min < z_max) or samples < 2:
        raise ValueError("need z_min < z_max and samples >= 2")
    zs = np.geomspace(z_min, z_max, int(samples))
    dpdz = np.empty_like(zs)
    ddp = np.empty_like(zs)
    # chunked so the vectorized quadrature stays within memory
    for start in range(0, zs.size, 2048):
        sl = slice(start, start + 2048)
        dpdz[sl] = dp_dz_over_p(zs[sl])
        ddp[sl] = drho_dp(zs[sl])
    return ConjectureReport(z=zs, dp_dz_over_p=dpdz, drho_dp=ddp, sound_speed_sq=1.0 / ddp)


def maxwell_relations_check(
    n: float,
    z: float,
    constants: PhysicalConstants = DIMENSIONLESS,
    step: float = 1e-4,
):
    """Residuals of the two Maxwell relations, by centered finite differences.

    Both identities are checked along the curve that holds the appropriate
    variable fixed; ``step`` is the relative z-step of the stencil and the
    returned residuals are relative, each O(step^2).
    """
    _check_positive(n=n, z=z, step=step)
    dz = step * z
    # n theta = d rho/d eta at constant n: parametrize by z at fixed n
    rho_p = energy_density(n, z + dz, constants)
    rho_m = energy_density(n, z - dz, constants)
    eta_p = entropy_map(n, z + dz, constants)
    eta_m = entropy_map(n, z - dz, constants)
    lhs = n * constants.temperature_from_z(z)
    res_entropy = abs((rho_p - rho_m) / (eta_p - eta_m) - lhs) / abs(lhs)
    # rho + p = n d rho/d n at constant eta: explicit n(z) on the eta level set
    eta0 = entropy_map(n, z, constants)
    n_p = constant_eta_density(eta0, z + dz, constants)
    n_m = constant_eta_density(eta0, z - dz, constants)
    rho_p = energy_density(n_p, z + dz, constants)
    rho_m = energy_density(n_m, z - dz, constants)
    rhs = energy_density(n, z, constants) + pressure_map(n, z, constants)
    res_density = abs(n * (rho_p - rho_m) / (n_p - n_m) - rhs) / abs(rhs)
    return float(res_entropy), float(res_density)
