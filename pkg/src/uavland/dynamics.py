"""Continuous-time models of the vehicle and its surroundings.

Everything here is a pure derivative function: multirotor rotational and
translational rigid-body dynamics in Z-Y-X Euler coordinates, the first-order
ESC/actuator lag, the mixer mapping squared rotor rates to thrust/torques, and
the reference (ground vehicle) system with pluggable drivers.

Axis convention: z is measured downward, so gravity enters as +g*e_z with
e_z = [0, 0, 1]. Altitude 5 m above ground is z = -5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DriverUndefinedError, SingularityError

EULER_GUARD = 1e-3  # rad inside the pi/2 singularity


# ---------------------------------------------------------------------------
# parameter and state containers
# ---------------------------------------------------------------------------

def hexrotor_mixer(r: float, c: float) -> np.ndarray:
    """Mixer of an x-geometry hexrotor, rotors numbered clockwise from front right.

    Rows map squared rotor rates (times the thrust coefficient) to
    [total thrust, roll torque, pitch torque, yaw torque].
    """
    s3 = math.sqrt(3.0) / 2.0
    return np.array([
        [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        [-r / 2.0, -r, -r / 2.0, r / 2.0, r, r / 2.0],
        [r * s3, 0.0, -r * s3, -r * s3, 0.0, r * s3],
        [c, -c, c, -c, c, -c],
    ])


@dataclass
class VehicleParams:
    """Physical parameters of the multirotor platform.

    Defaults are the measured values of the 550 mm hexrotor experimental
    platform (inertia via bifilar pendulum, thrust/drag via load cell).
    """

    J: np.ndarray = field(default_factory=lambda: np.diag([0.0228, 0.0241, 0.0446]))
    m: float = 1.824
    g: float = 9.81
    b: float = 1.8182e-05
    c_drag: float = 0.1
    r: float = 0.275
    tau_m: float = 0.059
    M: np.ndarray | None = None
    omega_max: float = 800.0

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.M is None:
            self.M = hexrotor_mixer(self.r, self.c_drag)
        self.M = np.asarray(self.M, dtype=float)
        self.validate()

    @property
    def n_rotors(self) -> int:
        return self.M.shape[1]

    @property
    def J_inv(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    def validate(self):
        if self.J.shape != (3, 3) or not np.allclose(self.J, self.J.T):
            raise ValueError("J must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(self.J) <= 0):
            raise ValueError("J must be positive definite")
        if self.m <= 0 or self.b <= 0 or self.tau_m <= 0 or self.omega_max <= 0:
            raise ValueError("m, b, tau_m, omega_max must be positive")
        if self.M.shape[0] != 4:
            raise ValueError("mixer M must have 4 rows")
        if self.n_rotors not in (4, 6, 8):
            raise ValueError(f"unsupported rotor count {self.n_rotors}")
        if np.linalg.matrix_rank(self.M) < 4:
            raise ValueError("mixer M must have full row rank 4")

    def hover_thrust(self) -> float:
        return self.m * self.g

    def hover_rotor_rate(self) -> float:
        """Rotor rate at which all rotors together balance gravity."""
        u = self.hover_thrust()
        pinv = self.M.T @ np.linalg.inv(self.M @ self.M.T)
        ws = pinv @ np.array([u / self.b, 0.0, 0.0, 0.0])
        return float(np.sqrt(ws.max()))


@dataclass
class VehicleState:
    """Full plant state: attitude, attitude rates, position, velocity, rotor rates."""

    theta1: np.ndarray
    theta2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("theta1", "theta2", "p1", "p2", "omega"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def check(self, params: VehicleParams):
        check_euler_guard(self.theta1)
        if np.any(self.omega < 0) or np.any(self.omega > params.omega_max):
            raise ValueError("rotor rates outside [0, omega_max]")


@dataclass
class ReferenceState:
    """Position and velocity of the reference (ground vehicle) system."""

    xc1: np.ndarray
    xc2: np.ndarray

    def __post_init__(self):
        self.xc1 = np.asarray(self.xc1, dtype=float)
        self.xc2 = np.asarray(self.xc2, dtype=float)


@dataclass
class DisturbanceSpec:
    """Lumped disturbance inputs as functions of time.

    Both functions must be continuously differentiable with bounded derivative
    over the scenario horizon.
    """

    sigma_xi: Callable[[float], np.ndarray]
    sigma_rho: Callable[[float], np.ndarray]
    description: str = ""

    @staticmethod
    def zero() -> "DisturbanceSpec":
        z = np.zeros(3)
        return DisturbanceSpec(lambda t: z, lambda t: z, "none")


# ---------------------------------------------------------------------------
# Euler kinematics
# ---------------------------------------------------------------------------

def check_euler_guard(theta1: np.ndarray, guard: float = EULER_GUARD):
    phi, theta = float(theta1[0]), float(theta1[1])
    lim = math.pi / 2.0 - guard
    if abs(phi) >= lim or abs(theta) >= lim:
        raise SingularityError(
            f"attitude [{phi:.4f}, {theta:.4f}] within {guard} rad of the Euler singularity"
        )


def euler_rate_matrix(theta1: np.ndarray) -> np.ndarray:
    """Matrix mapping body angular velocity to Euler angle rates."""
    check_euler_guard(theta1)
    phi, theta = theta1[0], theta1[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    tt = st / ct
    return np.array([
        [1.0, sp * tt, cp * tt],
        [0.0, cp, -sp],
        [0.0, sp / ct, cp / ct],
    ])


def euler_rate_matrix_inv(theta1: np.ndarray) -> np.ndarray:
    """Closed-form inverse of the Euler-rate matrix (body rates from Euler rates)."""
    check_euler_guard(theta1)
    phi, theta = theta1[0], theta1[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cp, sp * ct],
        [0.0, -sp, cp * ct],
    ])


def euler_rate_matrix_dot(theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """Time derivative of the Euler-rate matrix along Euler rates theta2 (chain rule)."""
    check_euler_guard(theta1)
    phi, theta = theta1[0], theta1[1]
    dphi, dtheta = theta2[0], theta2[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    tt = st / ct
    sec2 = 1.0 / (ct * ct)
    dPsi_dphi = np.array([
        [0.0, cp * tt, -sp * tt],
        [0.0, -sp, -cp],
        [0.0, cp / ct, -sp / ct],
    ])
    dPsi_dtheta = np.array([
        [0.0, sp * sec2, cp * sec2],
        [0.0, 0.0, 0.0],
        [0.0, sp * st * sec2, cp * st * sec2],
    ])
    return dPsi_dphi * dphi + dPsi_dtheta * dtheta


def thrust_direction(theta1: np.ndarray) -> np.ndarray:
    """Third column of the Z-Y-X rotation matrix: inertial direction of body -z thrust."""
    phi, theta, psi = theta1[0], theta1[1], theta1[2]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    return np.array([
        cp * st * cpsi + sp * spsi,
        cp * st * spsi - sp * cpsi,
        cp * ct,
    ])


# ---------------------------------------------------------------------------
# rigid-body derivatives
# ---------------------------------------------------------------------------

def rotational_derivative(state: VehicleState, torque: np.ndarray,
                          sigma_xi: np.ndarray, params: VehicleParams):
    """Euler-coordinate rotational dynamics.

    Returns (theta1_dot, theta2_dot) where the attitude acceleration combines
    the rate-matrix drift, the gyroscopic coupling, the applied torque mapped
    through the rate matrix, and the lumped rotational disturbance.
    """
    Psi = euler_rate_matrix(state.theta1)
    Psi_inv = euler_rate_matrix_inv(state.theta1)
    Psi_dot = euler_rate_matrix_dot(state.theta1, state.theta2)
    Omega = Psi_inv @ state.theta2
    J = params.J
    coriolis = Psi @ params.J_inv @ np.cross(Omega, J @ Omega)
    theta2_dot = Psi_dot @ Omega - coriolis + Psi @ params.J_inv @ np.asarray(torque) \
        + np.asarray(sigma_xi)
    return state.theta2.copy(), theta2_dot


def translational_derivative(state: VehicleState, u_f: float,
                             sigma_rho: np.ndarray, params: VehicleParams):
    """Point-mass translational dynamics under total thrust u_f (N, >= 0)."""
    if u_f < 0:
        raise ValueError("total thrust must be non-negative")
    p2_dot = -(u_f / params.m) * thrust_direction(state.theta1) \
        + params.g * np.array([0.0, 0.0, 1.0]) + np.asarray(sigma_rho)
    return state.p2.copy(), p2_dot


def actuator_derivative(omega: np.ndarray, omega_des: np.ndarray,
                        tau_m: float) -> np.ndarray:
    """First-order ESC lag: rotor rates chase the commanded rates."""
    if tau_m <= 0:
        raise ValueError("tau_m must be positive")
    return (np.asarray(omega_des) - np.asarray(omega)) / tau_m


def mixer_forward(omega: np.ndarray, params: VehicleParams):
    """Thrust and body torques produced by rotor rates omega (componentwise >= 0)."""
    omega = np.asarray(omega, dtype=float)
    wrench = params.b * params.M @ (omega * omega)
    return float(wrench[0]), wrench[1:4].copy()


# ---------------------------------------------------------------------------
# reference (ground vehicle) drivers
# ---------------------------------------------------------------------------

class HarmonicPathDriver:
    """Scripted driver: per-axis path c0 + c1*t + A*sin(w*t + phase).

    Acceleration, velocity, and jerk are analytic, so this driver doubles as
    the truth oracle in estimation-error studies.
    """

    kind = "harmonic"

    def __init__(self, c0, c1, amplitude, omega, phase):
        self.c0 = np.asarray(c0, dtype=float)
        self.c1 = np.asarray(c1, dtype=float)
        self.amplitude = np.asarray(amplitude, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.phase = np.asarray(phase, dtype=float)

    def position(self, t: float) -> np.ndarray:
        return self.c0 + self.c1 * t + self.amplitude * np.sin(self.omega * t + self.phase)

    def velocity(self, t: float) -> np.ndarray:
        return self.c1 + self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def acceleration(self, t: float, xc2: np.ndarray) -> np.ndarray:
        return -self.amplitude * self.omega ** 2 * np.sin(self.omega * t + self.phase)

    def jerk(self, t: float) -> np.ndarray:
        return -self.amplitude * self.omega ** 3 * np.cos(self.omega * t + self.phase)


class ConstantVelocityDriver:
    """Reference vehicle coasts at whatever velocity it currently has."""

    kind = "constant_velocity"

    def acceleration(self, t: float, xc2: np.ndarray) -> np.ndarray:
        return np.zeros(3)

    def jerk(self, t: float) -> np.ndarray:
        return np.zeros(3)


class VelocityCommandDriver:
    """First-order tracking of a commanded planar velocity (teleoperation).

    Emulates a differential-drive ground robot: the velocity relaxes toward the
    command with time constant tau_v. The command is mutable between ticks.
    """

    kind = "velocity_command"

    def __init__(self, tau_v: float = 0.3, command=(0.0, 0.0, 0.0)):
        if tau_v <= 0:
            raise DriverUndefinedError("velocity-command driver needs tau_v > 0")
        self.tau_v = float(tau_v)
        self.command = np.asarray(command, dtype=float)

    def set_command(self, vx: float, vy: float):
        self.command = np.array([vx, vy, 0.0])

    def acceleration(self, t: float, xc2: np.ndarray) -> np.ndarray:
        return (self.command - np.asarray(xc2)) / self.tau_v

    def jerk(self, t: float) -> np.ndarray:
        return np.zeros(3)


def reference_derivative(state: ReferenceState, t: float, driver):
    """Reference-system dynamics: velocity integrates the driver's acceleration."""
    if not hasattr(driver, "acceleration"):
        raise DriverUndefinedError(f"driver {driver!r} provides no acceleration")
    return state.xc2.copy(), np.asarray(driver.acceleration(t, state.xc2), dtype=float)
