"""Scenario configuration: types, strict JSON loading, kernel packing.

A scenario fully determines a run (bit-identical logs for equal scenarios,
including the seed). Disturbances and scripted reference paths are declarative
per-axis sinusoid families so that truth values stay analytic for the
estimation-error oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .control import ControlGains
from .dynamics import (
    ConstantVelocityDriver,
    HarmonicPathDriver,
    VehicleParams,
    VelocityCommandDriver,
)
from .errors import ConfigError
from .observer import ObserverGains, default_sat_bounds


@dataclass
class SinusoidSpec:
    """Per-axis a*sin(w*t + phase) + offset; the zero spec is all zeros."""

    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("amplitude", "omega", "phase", "offset"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ConfigError(f"disturbance field '{name}' must have 3 components")
            setattr(self, name, v)

    def __call__(self, t: float) -> np.ndarray:
        return self.offset + self.amplitude * np.sin(self.omega * t + self.phase)

    def derivative(self, t: float) -> np.ndarray:
        return self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.amplitude, self.omega, self.phase, self.offset])

    @staticmethod
    def zero() -> "SinusoidSpec":
        return SinusoidSpec()


@dataclass
class NoiseSpec:
    """Standard deviations of the Gaussian measurement noise, per channel group."""

    position: float = 0.002
    attitude: float = math.radians(0.2)
    reference_position: float = 0.005

    def __post_init__(self):
        if min(self.position, self.attitude, self.reference_position) < 0:
            raise ConfigError("noise std-devs must be non-negative")


@dataclass
class InitialConditions:
    p1: np.ndarray = field(default_factory=lambda: np.array([-10.0, 1.0, -5.0]))
    theta1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    xc1: np.ndarray = field(default_factory=lambda: np.array([2.0, 0.0, -0.5]))
    xc2: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    omega: object = None  # per-rotor rates, "hover", or None for rest

    def __post_init__(self):
        for f in fields(self):
            if f.name == "omega":
                continue
            v = np.asarray(getattr(self, f.name), dtype=float)
            if v.shape != (3,):
                raise ConfigError(f"initial.{f.name} must have 3 components")
            setattr(self, f.name, v)
        if self.omega is not None and not isinstance(self.omega, str):
            self.omega = np.asarray(self.omega, dtype=float)

    def rotor_rates(self, vehicle: VehicleParams) -> np.ndarray:
        if self.omega is None:
            return np.zeros(vehicle.n_rotors)
        if isinstance(self.omega, str):
            if self.omega != "hover":
                raise ConfigError("initial.omega must be a list, 'hover', or null")
            return np.full(vehicle.n_rotors, vehicle.hover_rotor_rate())
        if self.omega.shape != (vehicle.n_rotors,):
            raise ConfigError("initial.omega length must match the rotor count")
        return self.omega.copy()


@dataclass
class DriverSpec:
    """Reference-vehicle driver configuration."""

    kind: str = "harmonic"
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.ones(3))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau_v: float = 0.3

    KINDS = ("harmonic", "constant_velocity", "velocity_command")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"reference_driver.kind must be one of {self.KINDS}")
        for name in ("amplitude", "omega", "phase"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ConfigError(f"reference_driver.{name} must have 3 components")
            setattr(self, name, v)
        if self.tau_v <= 0:
            raise ConfigError("reference_driver.tau_v must be positive")

    def kind_id(self) -> int:
        return self.KINDS.index(self.kind)

    def build(self, init: InitialConditions):
        if self.kind == "harmonic":
            c1 = init.xc2 - self.amplitude * self.omega * np.cos(self.phase)
            c0 = init.xc1 - self.amplitude * np.sin(self.phase)
            return HarmonicPathDriver(c0, c1, self.amplitude, self.omega, self.phase)
        if self.kind == "constant_velocity":
            return ConstantVelocityDriver()
        return VelocityCommandDriver(self.tau_v)


@dataclass
class ScenarioFlags:
    include_actuator_dynamics: bool = True
    state_feedback: bool = False
    bypass_actuators: bool = False
    oracle_rho_innovation: bool = False
    saturation_enabled: bool = True
    clamp_rotor_rates: bool = True
    # diagnostics: start the simulated rotors at the plant rates and the
    # estimates at the true extended state instead of the cold defaults
    observer_rotors_match_plant: bool = False
    perfect_initial_estimates: bool = False


@dataclass
class Scenario:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    gains: ControlGains = field(default_factory=ControlGains)
    observer: ObserverGains = field(default_factory=ObserverGains)
    sigma_xi: SinusoidSpec = field(default_factory=SinusoidSpec.zero)
    sigma_rho: SinusoidSpec = field(default_factory=SinusoidSpec.zero)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    initial: InitialConditions = field(default_factory=InitialConditions)
    reference_driver: DriverSpec = field(default_factory=DriverSpec)
    dt_plant: float = 1e-4
    controller_rate: float = 100.0
    duration: float = 60.0
    seed: int = 20260809
    v_land: float = 0.25
    divergence_norm: float = 1e6
    flags: ScenarioFlags = field(default_factory=ScenarioFlags)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.dt_plant <= 0:
            raise ConfigError("dt_plant must be positive")
        if self.dt_plant > self.observer.epsilon / 10.0 + 1e-15:
            raise ConfigError(
                f"dt_plant = {self.dt_plant} too coarse for epsilon = "
                f"{self.observer.epsilon}; need dt_plant <= epsilon/10")
        n_sub = self.controller_period / self.dt_plant
        if abs(n_sub - round(n_sub)) > 1e-9 or round(n_sub) < 1:
            raise ConfigError(
                "controller period must be an integer multiple of dt_plant")

    @property
    def controller_period(self) -> float:
        return 1.0 / self.controller_rate

    @property
    def steps_per_tick(self) -> int:
        return int(round(self.controller_period / self.dt_plant))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.controller_rate))


# ---------------------------------------------------------------------------
# strict dict <-> dataclass conversion
# ---------------------------------------------------------------------------

_SECTION_TYPES = {
    "vehicle": VehicleParams,
    "gains": ControlGains,
    "noise": NoiseSpec,
    "initial": InitialConditions,
    "reference_driver": DriverSpec,
    "flags": ScenarioFlags,
}


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path}' must be an object")
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field '{path}.{key}'")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{path}': {exc}") from exc


def _build_observer(data: dict) -> ObserverGains:
    allowed = {"epsilon", "alpha1", "alpha2", "alpha3", "sat_bounds"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field 'observer.{key}'")
    data = dict(data)
    if data.get("sat_bounds") is None:
        data["sat_bounds"] = default_sat_bounds()
    try:
        return ObserverGains(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section 'observer': {exc}") from exc


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario document must be a JSON object")
    allowed = {f.name for f in fields(Scenario)} | {"disturbances"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field '{key}'")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        elif key == "observer":
            kwargs[key] = _build_observer(value)
        elif key == "disturbances":
            if not isinstance(value, dict):
                raise ConfigError("section 'disturbances' must be an object")
            for dkey in value:
                if dkey not in ("sigma_xi", "sigma_rho"):
                    raise ConfigError(f"unknown field 'disturbances.{dkey}'")
                kwargs[dkey] = _build_section(
                    SinusoidSpec, value[dkey], f"disturbances.{dkey}")
        else:
            kwargs[key] = value
    try:
        return Scenario(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def scenario_to_dict(s: Scenario) -> dict:
    def arr(a):
        return np.asarray(a).tolist()

    return {
        "vehicle": {
            "J": arr(s.vehicle.J), "m": s.vehicle.m, "g": s.vehicle.g,
            "b": s.vehicle.b, "c_drag": s.vehicle.c_drag, "r": s.vehicle.r,
            "tau_m": s.vehicle.tau_m, "M": arr(s.vehicle.M),
            "omega_max": s.vehicle.omega_max,
        },
        "gains": {
            "beta1": s.gains.beta1, "beta2": s.gains.beta2,
            "gamma1": s.gains.gamma1, "gamma2": s.gains.gamma2,
            "delta_rho": s.gains.delta_rho,
            "landing_radius": s.gains.landing_radius,
            "approach_offset": s.gains.approach_offset,
        },
        "observer": {
            "epsilon": s.observer.epsilon,
            "alpha1": arr(s.observer.alpha1), "alpha2": arr(s.observer.alpha2),
            "alpha3": arr(s.observer.alpha3),
            "sat_bounds": arr(s.observer.sat_bounds),
        },
        "disturbances": {
            "sigma_xi": {
                "amplitude": arr(s.sigma_xi.amplitude), "omega": arr(s.sigma_xi.omega),
                "phase": arr(s.sigma_xi.phase), "offset": arr(s.sigma_xi.offset),
            },
            "sigma_rho": {
                "amplitude": arr(s.sigma_rho.amplitude), "omega": arr(s.sigma_rho.omega),
                "phase": arr(s.sigma_rho.phase), "offset": arr(s.sigma_rho.offset),
            },
        },
        "noise": {
            "position": s.noise.position, "attitude": s.noise.attitude,
            "reference_position": s.noise.reference_position,
        },
        "initial": {
            "p1": arr(s.initial.p1), "theta1": arr(s.initial.theta1),
            "p2": arr(s.initial.p2), "theta2": arr(s.initial.theta2),
            "xc1": arr(s.initial.xc1), "xc2": arr(s.initial.xc2),
            "omega": s.initial.omega if (s.initial.omega is None
                                         or isinstance(s.initial.omega, str))
            else arr(s.initial.omega),
        },
        "reference_driver": {
            "kind": s.reference_driver.kind,
            "amplitude": arr(s.reference_driver.amplitude),
            "omega": arr(s.reference_driver.omega),
            "phase": arr(s.reference_driver.phase),
            "tau_v": s.reference_driver.tau_v,
        },
        "dt_plant": s.dt_plant,
        "controller_rate": s.controller_rate,
        "duration": s.duration,
        "seed": s.seed,
        "v_land": s.v_land,
        "divergence_norm": s.divergence_norm,
        "flags": {
            "include_actuator_dynamics": s.flags.include_actuator_dynamics,
            "state_feedback": s.flags.state_feedback,
            "bypass_actuators": s.flags.bypass_actuators,
            "oracle_rho_innovation": s.flags.oracle_rho_innovation,
            "saturation_enabled": s.flags.saturation_enabled,
            "clamp_rotor_rates": s.flags.clamp_rotor_rates,
            "observer_rotors_match_plant": s.flags.observer_rotors_match_plant,
            "perfect_initial_estimates": s.flags.perfect_initial_estimates,
        },
    }


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply key=value overrides with dotted paths to a scenario dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"override path '{key}' does not exist")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"override path '{key}' does not exist")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return data


def section_v_scenario(**updates) -> Scenario:
    """The bundled moving-platform landing configuration.

    Sinusoidal disturbances on both loops, measurement noise on, ground
    vehicle on the weaving constant-speed path, multirotor starting far away.
    """
    hp = math.pi / 2
    base = dict(
        sigma_xi=SinusoidSpec(amplitude=[1.0, 1.0, 1.0], omega=[1.0, 1.0, 1.0],
                              phase=[0.0, hp, 0.0]),
        sigma_rho=SinusoidSpec(amplitude=[1.0, 1.0, 1.0], omega=[1.0, 1.0, 1.0],
                               phase=[hp, 0.0, hp]),
        reference_driver=DriverSpec(kind="harmonic", amplitude=[0.0, 2.0, 0.0],
                                    omega=[1.0, 1.0, 1.0], phase=[0.0, hp, 0.0]),
        gains=ControlGains(beta1=16.0, beta2=8.0, gamma1=3.0, gamma2=3.5,
                           delta_rho=2.5, landing_radius=0.04,
                           approach_offset=0.5),
        observer=ObserverGains(epsilon=0.01),
        duration=60.0,
        seed=20260809,
    )
    base.update(updates)
    return Scenario(**base)
