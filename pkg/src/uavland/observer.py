"""Extended high-gain observer over the error, attitude-error, and reference chains.

The 30 estimated scalars are three integrator chains extended with lumped
disturbance states: position error (rho1, rho2, sigma_rho), attitude error
(xi1, xi2, varsigma_xi), and the reference system up to its jerk
(xc1, xc2, xc3, sigma_xc). Correction gains form a ladder alpha_j / eps^j
driven by the position-level residual of each chain. Rotor rates are not
measured, so the observer integrates its own copy of the actuator lag and
feeds the squared simulated rates through the mixer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import rotational_drift
from .dynamics import VehicleParams, euler_rate_matrix, thrust_direction
from .errors import NonHurwitzError

BLOCK_ORDERS = (3, 3, 4)
N_STATES = 30

# index ranges of the named blocks inside the 30-vector
SL_RHO1 = slice(0, 3)
SL_RHO2 = slice(3, 6)
SL_SIGMA_RHO = slice(6, 9)
SL_XI1 = slice(9, 12)
SL_XI2 = slice(12, 15)
SL_VARSIGMA_XI = slice(15, 18)
SL_XC1 = slice(18, 21)
SL_XC2 = slice(21, 24)
SL_XC3 = slice(24, 27)
SL_SIGMA_XC = slice(27, 30)


def binomial_ladder(rho: int) -> np.ndarray:
    """Coefficients of (s+1)^rho without the leading 1: all roots at -1."""
    return np.array([math.comb(rho, j) for j in range(1, rho + 1)], dtype=float)


def assert_hurwitz(alpha: np.ndarray):
    roots = np.roots(np.concatenate(([1.0], np.asarray(alpha, dtype=float))))
    if np.any(roots.real >= 0):
        raise NonHurwitzError(f"ladder {list(alpha)} has roots {roots} not in the open left half-plane")


def make_gain_ladder(rho: int, epsilon: float, alpha=None):
    """Correction ladder for one observer block.

    Returns (alpha, h) where h[j] = alpha[j+1] / epsilon**(j+1). Custom alpha
    must make s^rho + alpha_1 s^(rho-1) + ... + alpha_rho Hurwitz.
    """
    if rho not in (3, 4):
        raise ValueError("block order must be 3 or 4")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    alpha = binomial_ladder(rho) if alpha is None else np.asarray(alpha, dtype=float)
    if alpha.shape != (rho,):
        raise ValueError(f"ladder for order {rho} needs {rho} coefficients")
    assert_hurwitz(alpha)
    powers = np.arange(1, rho + 1)
    return alpha, alpha / epsilon ** powers


def companion_matrix(alpha: np.ndarray) -> np.ndarray:
    """Scaled-error-dynamics system matrix of one block (per scalar axis)."""
    rho = len(alpha)
    F = np.zeros((rho, rho))
    F[:, 0] = -np.asarray(alpha, dtype=float)
    F[:-1, 1:] = np.eye(rho - 1)
    return F


@dataclass
class ObserverGains:
    """Observer small parameter, per-block ladders, and estimate saturation bounds."""

    epsilon: float = 0.01
    alpha1: np.ndarray | None = None
    alpha2: np.ndarray | None = None
    alpha3: np.ndarray | None = None
    sat_bounds: np.ndarray = field(default_factory=lambda: default_sat_bounds())

    def __post_init__(self):
        self.alpha1, self.h1 = make_gain_ladder(3, self.epsilon, self.alpha1)
        self.alpha2, self.h2 = make_gain_ladder(3, self.epsilon, self.alpha2)
        self.alpha3, self.h3 = make_gain_ladder(4, self.epsilon, self.alpha3)
        self.sat_bounds = np.asarray(self.sat_bounds, dtype=float)
        if self.sat_bounds.shape != (N_STATES,):
            raise ValueError("sat_bounds must have 30 components")
        if np.any(self.sat_bounds <= 0):
            raise ValueError("sat_bounds must be strictly positive")


def default_sat_bounds() -> np.ndarray:
    """Hand-sized saturation bounds for the bundled landing scenario.

    Roomy enough that they never engage after the startup transient; see
    calibrate_sat_bounds for the rehearsal-based procedure.
    """
    k = np.empty(N_STATES)
    k[SL_RHO1] = 16.0
    k[SL_RHO2] = 10.0
    k[SL_SIGMA_RHO] = 5.0
    k[SL_XI1] = math.pi / 2
    k[SL_XI2] = 12.0
    k[SL_VARSIGMA_XI] = 20.0
    k[SL_XC1] = 120.0
    k[SL_XC2] = 6.0
    k[SL_XC3] = 6.0
    k[SL_SIGMA_XC] = 6.0
    return k


@dataclass
class ObserverState:
    """Estimate vector plus the simulated rotor rates."""

    chi_hat: np.ndarray
    omega_hat: np.ndarray

    @staticmethod
    def initial(n_rotors: int, xc1_measurement=None) -> "ObserverState":
        chi = np.zeros(N_STATES)
        if xc1_measurement is not None:
            chi[SL_XC1] = np.asarray(xc1_measurement, dtype=float)
        return ObserverState(chi, np.zeros(n_rotors))


def saturate_estimates(chi_hat: np.ndarray, sat_bounds: np.ndarray) -> np.ndarray:
    """Componentwise k*sat(x/k); identity inside the bounds, idempotent."""
    k = np.asarray(sat_bounds, dtype=float)
    return np.clip(np.asarray(chi_hat, dtype=float), -k, k)


def simulated_actuator_derivative(omega_hat, omega_des, tau_m: float) -> np.ndarray:
    """Observer copy of the ESC lag; never clamped."""
    return (np.asarray(omega_des) - np.asarray(omega_hat)) / tau_m


def simulated_actuator_step(omega_hat, omega_des, tau_m: float, dt: float) -> np.ndarray:
    """Advance the simulated rotor rates one RK4 step (linear, exact-stage form)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = np.asarray(omega_hat, dtype=float)
    d = np.asarray(omega_des, dtype=float)
    k1 = (d - w) / tau_m
    k2 = (d - (w + 0.5 * dt * k1)) / tau_m
    k3 = (d - (w + 0.5 * dt * k2)) / tau_m
    k4 = (d - (w + dt * k3)) / tau_m
    return w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Measurements:
    """Position-level outputs feeding the three correction chains.

    rho1 is the multirotor position relative to the current reference-position
    estimate (or to the true reference in oracle diagnostics); xi1 the measured
    attitude minus the commanded attitude reference; xc1 the measured reference
    position.
    """

    rho1: np.ndarray
    xi1: np.ndarray
    xc1: np.ndarray


def observer_derivative(obs: ObserverState, meas: Measurements, theta1,
                        theta_r_dot_est, params: VehicleParams,
                        gains: ObserverGains, omega_sq_override=None) -> np.ndarray:
    """Time derivative of the 30 estimate states.

    The model input is the wrench reconstructed from the squared simulated
    rotor rates (or, with omega_sq_override, from raw squared commands when
    the actuator lag is deliberately left out). Estimates entering the
    nonlinear drift terms are saturated first so a peaking transient cannot
    blow up the quadratic terms.
    """
    chi = np.asarray(obs.chi_hat, dtype=float)
    chi_s = saturate_estimates(chi, gains.sat_bounds)

    omega_sq = np.asarray(obs.omega_hat) ** 2 if omega_sq_override is None \
        else np.asarray(omega_sq_override, dtype=float)
    wrench = params.b * params.M @ omega_sq
    u_f_hat, torque_hat = wrench[0], wrench[1:4]

    accel_model = (-(u_f_hat / params.m) * thrust_direction(theta1)
                   + params.g * np.array([0.0, 0.0, 1.0]) - chi_s[SL_XC3])
    drift = rotational_drift(chi_s[SL_XI2], theta1, theta_r_dot_est, params)
    G = euler_rate_matrix(theta1) @ params.J_inv

    r1 = np.asarray(meas.rho1) - chi[SL_RHO1]
    r2 = np.asarray(meas.xi1) - chi[SL_XI1]
    r3 = np.asarray(meas.xc1) - chi[SL_XC1]

    dchi = np.empty(N_STATES)
    h1, h2, h3 = gains.h1, gains.h2, gains.h3
    dchi[SL_RHO1] = chi[SL_RHO2] + h1[0] * r1
    dchi[SL_RHO2] = chi[SL_SIGMA_RHO] + accel_model + h1[1] * r1
    dchi[SL_SIGMA_RHO] = h1[2] * r1
    dchi[SL_XI1] = chi[SL_XI2] + h2[0] * r2
    dchi[SL_XI2] = chi[SL_VARSIGMA_XI] + drift + G @ torque_hat + h2[1] * r2
    dchi[SL_VARSIGMA_XI] = h2[2] * r2
    dchi[SL_XC1] = chi[SL_XC2] + h3[0] * r3
    dchi[SL_XC2] = chi[SL_XC3] + h3[1] * r3
    dchi[SL_XC3] = chi[SL_SIGMA_XC] + h3[2] * r3
    dchi[SL_SIGMA_XC] = h3[3] * r3
    return dchi
