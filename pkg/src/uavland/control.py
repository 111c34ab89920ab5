"""Feedback-linearizing controllers and control allocation.

The translational loop produces roll/pitch references and a total-thrust
command from a virtual force; the rotational loop cancels the attitude
nonlinearities and imposes linear error dynamics; the allocator maps thrust
and torques to per-rotor speed commands through the minimum-energy inverse of
the mixer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    VehicleParams,
    check_euler_guard,
    euler_rate_matrix,
    euler_rate_matrix_dot,
    euler_rate_matrix_inv,
    thrust_direction,
)
from .errors import (
    DegenerateDirectionError,
    RankDeficiencyError,
    ThrustInfeasibleError,
)

E_Z = np.array([0.0, 0.0, 1.0])


@dataclass
class ControlGains:
    """Loop gains plus the landing-approach geometry.

    beta1/beta2 close the rotational loop, gamma1/gamma2 the translational
    loop; all must be positive so both error systems are Hurwitz. delta_rho is
    the tanh bounding radius applied to the estimated position error,
    landing_radius the contact sphere, approach_offset the height held above
    the platform until the vehicle is captured.
    """

    beta1: float = 16.0
    beta2: float = 8.0
    gamma1: float = 4.0
    gamma2: float = 4.0
    delta_rho: float = 3.0
    landing_radius: float = 0.04
    approach_offset: float = 0.5
    ref_margin: float = 0.35  # attitude references kept this far inside pi/2

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.gamma1, self.gamma2) <= 0:
            raise ValueError("all control gains must be strictly positive")
        if self.delta_rho <= 0:
            raise ValueError("delta_rho must be positive")
        if not 0 < self.ref_margin < math.pi / 2:
            raise ValueError("ref_margin must lie in (0, pi/2)")


@dataclass
class AttitudeCommand:
    theta_r: np.ndarray
    theta_r_dot_est: np.ndarray
    u_fd: float
    f_t: np.ndarray


@dataclass
class ControlOutput:
    torque_d: np.ndarray
    u_fd: float
    omega_sd: np.ndarray
    omega_des: np.ndarray
    attitude_cmd: AttitudeCommand
    alloc_clamped: bool = False
    rotor_saturated: bool = False


def virtual_force(rho1, rho2, sigma_rho, ref_accel, params: VehicleParams,
                  gains: ControlGains) -> np.ndarray:
    """PD force with disturbance cancellation, reference feedforward and gravity."""
    return (-gains.gamma1 * np.asarray(rho1) - gains.gamma2 * np.asarray(rho2)
            - np.asarray(sigma_rho) + np.asarray(ref_accel) - params.g * E_Z)


def attitude_from_force(f_t: np.ndarray, params: VehicleParams) -> AttitudeCommand:
    """Invert the thrust map: attitude references and total thrust realizing f_t.

    Requires f_z < 0 (net force has an upward component in the down-positive
    frame); the returned command satisfies -(u_fd/m) * R3(theta_r) = f_t.
    """
    fx, fy, fz = float(f_t[0]), float(f_t[1]), float(f_t[2])
    if fz >= 0.0:
        raise ThrustInfeasibleError(
            f"virtual force f_z = {fz:.4f} >= 0; thrust cannot realize it"
        )
    phi_r = math.atan(fy / math.sqrt(fx * fx + fz * fz))
    theta_r = math.atan(fx / fz)
    u_fd = -params.m * fz / (math.cos(phi_r) * math.cos(theta_r))
    theta_r_vec = np.array([phi_r, theta_r, 0.0])
    return AttitudeCommand(theta_r_vec, np.zeros(3), u_fd, np.asarray(f_t, dtype=float))


def translational_control(rho1, rho2, sigma_rho, ref_accel,
                          params: VehicleParams, gains: ControlGains) -> AttitudeCommand:
    """Full translational law: virtual force then thrust-map inversion."""
    return attitude_from_force(
        virtual_force(rho1, rho2, sigma_rho, ref_accel, params, gains), params)


def virtual_force_rate(rho2, u_f, theta1, sigma_rho, ref_accel, ref_jerk,
                       params: VehicleParams, gains: ControlGains,
                       bound_slope=None) -> np.ndarray:
    """Analytic time derivative of the virtual force with the disturbance rate
    taken as zero.

    The acceleration error inside is reconstructed from the applied thrust and
    current attitude. bound_slope, when given, is the elementwise slope of the
    position-error bounding map (chain rule through tanh); identity otherwise.
    """
    accel_err = (-(u_f / params.m) * thrust_direction(theta1) + params.g * E_Z
                 + np.asarray(sigma_rho) - np.asarray(ref_accel))
    p_term = gains.gamma1 * np.asarray(rho2)
    if bound_slope is not None:
        p_term = p_term * np.asarray(bound_slope)
    return -p_term - gains.gamma2 * accel_err + np.asarray(ref_jerk)


def attitude_rate_from_force(f_t: np.ndarray, f_t_dot: np.ndarray) -> np.ndarray:
    """Attitude-reference rates induced by the virtual force and its rate."""
    fx, fy, fz = float(f_t[0]), float(f_t[1]), float(f_t[2])
    dfx, dfy, dfz = float(f_t_dot[0]), float(f_t_dot[1]), float(f_t_dot[2])
    sxz = fx * fx + fz * fz
    if sxz < 1e-12:
        raise DegenerateDirectionError("f_x^2 + f_z^2 ~ 0: reference rates undefined")
    norm2 = sxz + fy * fy
    phi_r_dot = (dfy * sxz - fy * (dfx * fx + dfz * fz)) / (math.sqrt(sxz) * norm2)
    theta_r_dot = (dfx * fz - fx * dfz) / sxz
    return np.array([phi_r_dot, theta_r_dot, 0.0])


def attitude_reference_rate(rho2, u_f, theta1, sigma_rho, ref_accel, ref_jerk,
                            params: VehicleParams, gains: ControlGains,
                            f_t: np.ndarray, bound_slope=None) -> np.ndarray:
    """Estimated rate of the attitude references produced by translational_control."""
    f_t_dot = virtual_force_rate(rho2, u_f, theta1, sigma_rho, ref_accel, ref_jerk,
                                 params, gains, bound_slope)
    return attitude_rate_from_force(f_t, f_t_dot)


def rotational_drift(xi2, theta1, theta_r_dot, params: VehicleParams) -> np.ndarray:
    """Drift term of the rotational error dynamics (rate-matrix and gyroscopic parts)."""
    theta2 = np.asarray(xi2) + np.asarray(theta_r_dot)
    Psi = euler_rate_matrix(theta1)
    Psi_inv = euler_rate_matrix_inv(theta1)
    Psi_dot = euler_rate_matrix_dot(theta1, theta2)
    Omega = Psi_inv @ theta2
    return Psi_dot @ Omega - Psi @ params.J_inv @ np.cross(Omega, params.J @ Omega)


def rotational_control(xi1, xi2, theta1, theta_r_dot_est, varsigma_xi,
                       params: VehicleParams, gains: ControlGains) -> np.ndarray:
    """Feedback-linearizing torque: cancels drift and disturbance, imposes PD error law."""
    check_euler_guard(theta1)
    f_r = (-gains.beta1 * np.asarray(xi1) - gains.beta2 * np.asarray(xi2)
           - np.asarray(varsigma_xi))
    drift = rotational_drift(xi2, theta1, theta_r_dot_est, params)
    G_inv = params.J @ euler_rate_matrix_inv(theta1)
    return G_inv @ (f_r - drift)


def mixer_pseudo_inverse(params: VehicleParams) -> np.ndarray:
    M = params.M
    MMt = M @ M.T
    if np.linalg.matrix_rank(MMt) < 4:
        raise RankDeficiencyError("mixer M is rank deficient")
    return M.T @ np.linalg.inv(MMt)


def allocate_rotors(u_fd: float, torque_d, params: VehicleParams):
    """Minimum-norm rotor allocation for the commanded thrust and torques.

    Negative squared-rate components are clamped to zero and flagged; rotor
    rate commands are clamped to omega_max and flagged. Returns
    (omega_sd, omega_des, clamped, saturated).
    """
    wrench = np.concatenate(([u_fd], np.asarray(torque_d, dtype=float)))
    omega_sd = (mixer_pseudo_inverse(params) @ wrench) / params.b
    clamped = bool(np.any(omega_sd < 0))
    omega_sd = np.maximum(omega_sd, 0.0)
    omega_des = np.sqrt(omega_sd)
    saturated = bool(np.any(omega_des > params.omega_max))
    omega_des = np.minimum(omega_des, params.omega_max)
    return omega_sd, omega_des, clamped, saturated


def bound_position_error(rho1_est, delta_rho: float) -> np.ndarray:
    """Smooth elementwise bound keeping the position error seen by the controller
    inside (-delta_rho, delta_rho)."""
    if delta_rho <= 0:
        raise ValueError("delta_rho must be positive")
    return delta_rho * np.tanh(np.asarray(rho1_est, dtype=float) / delta_rho)


def bound_position_error_slope(rho1_est, delta_rho: float) -> np.ndarray:
    """Elementwise derivative of bound_position_error at rho1_est."""
    return 1.0 / np.cosh(np.asarray(rho1_est, dtype=float) / delta_rho) ** 2


@dataclass
class EstimateBlocks:
    """Observer estimates split into named blocks (already saturated by the caller)."""

    rho1: np.ndarray
    rho2: np.ndarray
    sigma_rho: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    varsigma_xi: np.ndarray
    xc1: np.ndarray
    xc2: np.ndarray
    xc3: np.ndarray
    sigma_xc: np.ndarray

    @staticmethod
    def from_vector(chi: np.ndarray) -> "EstimateBlocks":
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (30,):
            raise ValueError("estimate vector must have 30 components")
        return EstimateBlocks(
            rho1=chi[0:3], rho2=chi[3:6], sigma_rho=chi[6:9],
            xi1=chi[9:12], xi2=chi[12:15], varsigma_xi=chi[15:18],
            xc1=chi[18:21], xc2=chi[21:24], xc3=chi[24:27], sigma_xc=chi[27:30],
        )


def output_feedback_step(est: EstimateBlocks, theta1_measured,
                         params: VehicleParams, gains: ControlGains,
                         offset_active: bool = False) -> ControlOutput:
    """One output-feedback control update from saturated estimates.

    Composes the translational law (estimated errors, disturbance, and
    reference acceleration), the analytic attitude-reference rate (reference
    jerk taken from the extended estimate), the rotational law, and the rotor
    allocation. While offset_active, the z reference is shifted upward by the
    approach offset so the vehicle holds station above the platform.
    """
    rho1 = np.asarray(est.rho1, dtype=float).copy()
    if offset_active:
        rho1[2] += gains.approach_offset
    rho1_b = bound_position_error(rho1, gains.delta_rho)
    slope = bound_position_error_slope(rho1, gains.delta_rho)

    cmd = translational_control(rho1_b, est.rho2, est.sigma_rho, est.xc3, params, gains)
    cmd.theta_r_dot_est = attitude_reference_rate(
        est.rho2, cmd.u_fd, theta1_measured, est.sigma_rho, est.xc3, est.sigma_xc,
        params, gains, cmd.f_t, bound_slope=slope)

    torque_d = rotational_control(est.xi1, est.xi2, theta1_measured,
                                  cmd.theta_r_dot_est, est.varsigma_xi, params, gains)

    omega_sd, omega_des, clamped, saturated = allocate_rotors(cmd.u_fd, torque_d, params)
    return ControlOutput(torque_d, cmd.u_fd, omega_sd, omega_des, cmd,
                         alloc_clamped=clamped, rotor_saturated=saturated)
