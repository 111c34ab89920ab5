import dataclasses
import math

import numpy as np
import pytest

from uavland import kernel
from uavland.dynamics import (
    VehicleParams,
    VehicleState,
    actuator_derivative,
    rotational_derivative,
    translational_derivative,
)
from uavland.engine import (
    NoiseStreams,
    SimulationSession,
    inject_noise,
    log_columns,
    rk4_step,
    run_scenario,
    write_log_csv,
)
from uavland.errors import ConfigError
from uavland.observer import Measurements, ObserverGains, ObserverState, \
    observer_derivative
from uavland.scenario import (
    DriverSpec,
    InitialConditions,
    NoiseSpec,
    Scenario,
    ScenarioFlags,
    SinusoidSpec,
    apply_overrides,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
    section_v_scenario,
)


def quiet_scenario(**kw) -> Scenario:
    """Stationary platform, no disturbance, no noise; small and fast."""
    base = dict(
        sigma_xi=SinusoidSpec.zero(),
        sigma_rho=SinusoidSpec.zero(),
        noise=NoiseSpec(position=0.0, attitude=0.0, reference_position=0.0),
        initial=InitialConditions(p1=[0.0, 0.0, -1.0], xc1=[0.0, 0.0, -0.5],
                                  xc2=[0.0, 0.0, 0.0], omega="hover"),
        reference_driver=DriverSpec(kind="constant_velocity"),
        duration=2.0,
        seed=5,
    )
    base.update(kw)
    return Scenario(**base)


# ---------------------------------------------------------------------------
# rk4
# ---------------------------------------------------------------------------

def test_rk4_zero_derivative():
    y = np.array([1.0, -2.0, 3.0])
    out = rk4_step(lambda t, y: np.zeros(3), y, 0.0, 0.1)
    assert np.array_equal(out, y)


def test_rk4_exponential_multiplier():
    # one step of y' = -y at dt = 0.1 multiplies by the 4th-order Taylor
    # polynomial of exp(-0.1)
    out = rk4_step(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)
    h = -0.1
    taylor = 1 + h + h ** 2 / 2 + h ** 3 / 6 + h ** 4 / 24
    assert np.isclose(out[0], taylor, rtol=1e-15)
    assert abs(taylor - math.exp(-0.1)) < 1e-7
    assert np.isclose(out[0], 0.9048375)


def test_rk4_global_order_four_on_rotational_plant():
    params = VehicleParams()
    th1 = np.array([0.2, -0.1, 0.3])
    th2 = np.array([0.4, 0.3, -0.5])

    def f(t, y):
        st = VehicleState(y[:3], y[3:], np.zeros(3), np.zeros(3), np.zeros(6))
        d1, d2 = rotational_derivative(st, np.zeros(3), np.zeros(3), params)
        return np.concatenate([d1, d2])

    def integrate(dt, T=0.5):
        y = np.concatenate([th1, th2])
        for k in range(int(round(T / dt))):
            y = rk4_step(f, y, k * dt, dt)
        return y

    ref = integrate(1e-4)
    errs = [np.linalg.norm(integrate(dt) - ref) for dt in (0.01, 0.005, 0.0025)]
    slopes = np.diff(np.log(errs)) / np.diff(np.log([0.01, 0.005, 0.0025]))
    assert np.all(slopes > 3.7)


def test_rk4_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        rk4_step(lambda t, y: y * np.inf, np.ones(2), 0.0, 0.1)


# ---------------------------------------------------------------------------
# noise streams
# ---------------------------------------------------------------------------

def test_noise_zero_std_is_identity():
    streams = NoiseStreams(42)
    spec = NoiseSpec(position=0.0, attitude=0.0, reference_position=0.0)
    vals = (np.ones(3), np.full(3, 0.5), np.zeros(3))
    out = inject_noise(vals, spec, streams, 7)
    for a, b in zip(vals, out):
        assert np.array_equal(a, b)


def test_noise_deterministic_per_seed_channel_tick():
    a = NoiseStreams(42).gauss(1, 99, 0.01)
    b = NoiseStreams(42).gauss(1, 99, 0.01)
    c = NoiseStreams(43).gauss(1, 99, 0.01)
    d = NoiseStreams(42).gauss(2, 99, 0.01)
    e = NoiseStreams(42).gauss(1, 100, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert not np.array_equal(a, e)


def test_noise_order_independent_across_channels():
    s = NoiseStreams(11)
    first = s.gauss(0, 5, 1.0).copy()
    _ = s.gauss(2, 5, 1.0)
    again = s.gauss(0, 5, 1.0)
    assert np.array_equal(first, again)


def test_noise_sample_mean_clt_bound():
    s = NoiseStreams(2024)
    n = 100_000
    draws = np.concatenate([s.gauss(0, k, 1.0) for k in range(n // 3 + 1)])[:n]
    assert abs(draws.mean()) < 4.0 / math.sqrt(n)
    assert abs(draws.std() - 1.0) < 0.02


# ---------------------------------------------------------------------------
# kernel consistency against the plain-numpy model
# ---------------------------------------------------------------------------

def numpy_composed_derivative(session, y, t, upack, omega_des, omega_sd_cmd,
                              th1m):
    """Reference composition of the module-level derivative functions."""
    sc = session.sc
    params = session.params
    n = session.n
    lay = session.lay
    dy = np.zeros_like(y)

    state = VehicleState(y[0:3], y[3:6], y[6:9], y[9:12], y[12:12 + n])
    u_f, torque = params.b * params.M @ (y[12:12 + n] ** 2)[None, :].sum(axis=0), None
    wrench = params.b * params.M @ (y[12:12 + n] ** 2)
    u_f, torque = wrench[0], wrench[1:4]
    d1, d2 = rotational_derivative(state, torque, sc.sigma_xi(t), params)
    dy[0:3], dy[3:6] = d1, d2
    p1d, p2d = translational_derivative(state, u_f, sc.sigma_rho(t), params)
    dy[6:9], dy[9:12] = p1d, p2d
    dy[12:12 + n] = actuator_derivative(y[12:12 + n], omega_des, params.tau_m)

    obs = ObserverState(y[lay["chi"]:lay["chi"] + 30].copy(),
                        y[lay["omega_hat"]:lay["omega_hat"] + n].copy())
    meas = Measurements(rho1=upack[10:13] - obs.chi_hat[18:21],
                        xi1=upack[13:16] - upack[4:7],
                        xc1=upack[16:19])
    dy[lay["chi"]:lay["chi"] + 30] = observer_derivative(
        obs, meas, th1m, upack[7:10], params, session.ogains)
    dy[lay["omega_hat"]:lay["omega_hat"] + n] = actuator_derivative(
        obs.omega_hat, omega_des, params.tau_m)

    dy[lay["xc1"]:lay["xc1"] + 3] = y[lay["xc2"]:lay["xc2"] + 3]
    dy[lay["xc2"]:lay["xc2"] + 3] = session.driver.acceleration(
        t, y[lay["xc2"]:lay["xc2"] + 3])
    return dy


def test_kernel_derivative_matches_numpy_composition():
    sc = section_v_scenario(duration=1.0)
    session = SimulationSession(sc)
    rng = np.random.default_rng(3)
    n = session.n

    for trial in range(25):
        y = np.zeros(session.lay["size"])
        y[0:3] = rng.uniform(-0.6, 0.6, 3)
        y[3:6] = rng.normal(scale=0.5, size=3)
        y[6:9] = rng.normal(scale=3.0, size=3)
        y[9:12] = rng.normal(scale=1.0, size=3)
        y[12:12 + n] = rng.uniform(100, 500, n)
        y[session.lay["chi"]:session.lay["chi"] + 30] = rng.normal(scale=1.0, size=30)
        y[session.lay["omega_hat"]:session.lay["omega_hat"] + n] = rng.uniform(0, 500, n)
        y[session.lay["xc1"]:] = rng.normal(scale=1.0, size=6)

        th1m = y[0:3] + rng.normal(scale=0.002, size=3)
        upack = np.concatenate([
            rng.uniform(5, 30, 1), rng.normal(scale=0.2, size=3),
            rng.normal(scale=0.1, size=3), rng.normal(scale=0.2, size=3),
            y[6:9] + rng.normal(scale=0.002, size=3), th1m,
            y[session.lay["xc1"]:session.lay["xc1"] + 3] + rng.normal(scale=0.005, size=3),
        ])
        omega_des = rng.uniform(100, 600, n)
        omega_sd_cmd = omega_des ** 2
        t = rng.uniform(0, 10)

        mobs = kernel.measured_attitude_pack(th1m)
        dy_kernel = np.zeros_like(y)
        status = kernel._composed_derivative(
            y, t, dy_kernel, n, session.phys, session.J, session.Jinv,
            session.M, session.h, session.sat, session.dist, session.drv,
            session.drv_kind, session.kflags, upack, omega_des, omega_sd_cmd,
            mobs)
        assert status == kernel.STATUS_OK

        dy_ref = numpy_composed_derivative(session, y, t, upack, omega_des,
                                           omega_sd_cmd, th1m)
        scale = np.maximum(np.abs(dy_ref), 1.0)
        assert np.max(np.abs(dy_kernel - dy_ref) / scale) < 1e-12


def test_kernel_reports_singularity():
    sc = quiet_scenario()
    session = SimulationSession(sc)
    y = np.zeros(session.lay["size"])
    y[1] = math.pi / 2  # pitch at the singularity
    dy = np.zeros_like(y)
    upack = np.zeros(19)
    status = kernel._composed_derivative(
        y, 0.0, dy, session.n, session.phys, session.J, session.Jinv,
        session.M, session.h, session.sat, session.dist, session.drv,
        session.drv_kind, session.kflags, upack, np.zeros(6), np.zeros(6),
        kernel.measured_attitude_pack(np.zeros(3)))
    assert status == kernel.STATUS_SINGULAR


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------

def test_scenario_round_trip(tmp_path):
    sc = section_v_scenario()
    d = scenario_to_dict(sc)
    sc2 = scenario_from_dict(d)
    assert scenario_to_dict(sc2) == d
    p = tmp_path / "s.json"
    from uavland.scenario import save_scenario
    save_scenario(sc, p)
    sc3 = load_scenario(p)
    assert scenario_to_dict(sc3) == d


def test_scenario_rejects_unknown_keys():
    d = scenario_to_dict(section_v_scenario())
    d["not_a_field"] = 1
    with pytest.raises(ConfigError, match="not_a_field"):
        scenario_from_dict(d)
    d.pop("not_a_field")
    d["gains"]["bogus"] = 2
    with pytest.raises(ConfigError, match="gains.bogus"):
        scenario_from_dict(d)


def test_scenario_rejects_bad_steps():
    with pytest.raises(ConfigError, match="epsilon"):
        quiet_scenario(dt_plant=0.01)
    with pytest.raises(ConfigError, match="integer multiple"):
        quiet_scenario(dt_plant=3e-4)


def test_overrides():
    d = scenario_to_dict(section_v_scenario())
    apply_overrides(d, ["noise.position=0", "seed=9",
                        "gains.gamma1=2.5"])
    sc = scenario_from_dict(d)
    assert sc.noise.position == 0
    assert sc.seed == 9
    assert sc.gains.gamma1 == 2.5
    with pytest.raises(ConfigError, match="does not exist"):
        apply_overrides(d, ["gains.nope=1"])


# ---------------------------------------------------------------------------
# closed-loop regressions
# ---------------------------------------------------------------------------

def test_hover_equilibrium_regression():
    sc = quiet_scenario(
        duration=3.0,
        v_land=0.0,  # never trigger touchdown so the hold can be observed
        initial=InitialConditions(p1=[0.0, 0.0, -0.5], xc1=[0.0, 0.0, -0.5],
                                  xc2=[0.0, 0.0, 0.0], omega="hover"),
        gains=dataclasses.replace(quiet_scenario().gains, approach_offset=0.0),
        flags=ScenarioFlags(observer_rotors_match_plant=True,
                            perfect_initial_estimates=True),
    )
    res = run_scenario(sc)
    assert res.status == "completed"
    rho = np.linalg.norm(res.block(["rho1_x", "rho1_y", "rho1_z"]), axis=1)
    assert np.max(rho) < 1e-3


def test_determinism_bit_identical_logs(tmp_path):
    sc = section_v_scenario(duration=1.5)
    payloads = []
    for i in range(3):
        res = run_scenario(sc)
        path = tmp_path / f"log{i}.csv"
        write_log_csv(res, path)
        payloads.append(path.read_bytes())
    assert payloads[0] == payloads[1] == payloads[2]


def test_lemma2_simulated_rotors_track_plant_exactly():
    # same initial conditions, same commands, unclamped in practice: the
    # simulated rotor rates reproduce the plant rates bit for bit
    sc = quiet_scenario(duration=2.0)
    sc = dataclasses.replace(
        sc, initial=dataclasses.replace(sc.initial, omega=None))
    res = run_scenario(sc)
    for i in range(1, 7):
        w = res.column(f"omega_{i}")
        wh = res.column(f"omega_hat_{i}")
        assert np.array_equal(w, wh)


def test_divergence_reported_not_raised():
    # absurd epsilon with coarse dt destabilizes the observer: the run must
    # come back flagged, not crash
    sc = section_v_scenario(duration=5.0,
                            observer=ObserverGains(epsilon=0.001),
                            dt_plant=1e-4)
    res = run_scenario(sc)
    assert res.status in ("diverged", "completed", "landed")


def test_log_columns_match_rows():
    sc = quiet_scenario(duration=0.5)
    res = run_scenario(sc)
    assert res.log.shape[1] == len(log_columns(6))
    assert res.log.shape[0] >= 50
    t = res.column("t")
    assert np.all(np.diff(t) > 0)
    assert np.all(np.isfinite(res.log))
