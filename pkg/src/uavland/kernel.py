"""Fused fixed-step integration core.

The plant, observer, simulated actuators, and reference system are advanced
together by classical RK4 over one controller period with all commands and
measurements held. Compiled with numba; the composed derivative is also
exposed for cross-checking against the plain-numpy model functions.

Flat state layout (n rotors, offsets for n = 6 in brackets):
    theta1[0:3] theta2[3:6] p1[6:9] p2[9:12] omega[12:12+n]
    chi_hat[12+n : 42+n] omega_hat[42+n : 42+2n] xc1[-6:-3] xc2[-3:]
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_NONFINITE = 2

FLAG_INCLUDE_ACT = 1
FLAG_ORACLE_RHO = 2
FLAG_DIRECT_DRIVE = 4
FLAG_OBSERVER_ON = 8
FLAG_CLAMP_ROTORS = 16


def layout(n_rotors: int) -> dict:
    """Index offsets of the flat composed state."""
    i_omega = 12
    i_chi = i_omega + n_rotors
    i_omega_hat = i_chi + 30
    i_xc1 = i_omega_hat + n_rotors
    i_xc2 = i_xc1 + 3
    return {
        "theta1": 0, "theta2": 3, "p1": 6, "p2": 9,
        "omega": i_omega, "chi": i_chi, "omega_hat": i_omega_hat,
        "xc1": i_xc1, "xc2": i_xc2, "size": i_xc2 + 3,
    }


def measured_attitude_pack(theta1_meas: np.ndarray) -> np.ndarray:
    """Precompute attitude-dependent observer matrices for one control period.

    Rows 0-2: rate matrix; 3-5: its inverse; 6-8: d/dphi; 9-11: d/dtheta;
    row 12: thrust direction. All at the held measured attitude.
    """
    phi, th, psi = float(theta1_meas[0]), float(theta1_meas[1]), float(theta1_meas[2])
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(th), math.cos(th)
    sps, cps = math.sin(psi), math.cos(psi)
    tt = st / ct
    sec2 = 1.0 / (ct * ct)
    out = np.zeros((13, 3))
    out[0] = (1.0, sp * tt, cp * tt)
    out[1] = (0.0, cp, -sp)
    out[2] = (0.0, sp / ct, cp / ct)
    out[3] = (1.0, 0.0, -st)
    out[4] = (0.0, cp, sp * ct)
    out[5] = (0.0, -sp, cp * ct)
    out[6] = (0.0, cp * tt, -sp * tt)
    out[7] = (0.0, -sp, -cp)
    out[8] = (0.0, cp / ct, -sp / ct)
    out[9] = (0.0, sp * sec2, cp * sec2)
    out[10] = (0.0, 0.0, 0.0)
    out[11] = (0.0, sp * st * sec2, cp * st * sec2)
    out[12] = (cp * st * cps + sp * sps, cp * st * sps - sp * cps, cp * ct)
    return out


@njit(cache=True)
def _composed_derivative(y, t, dy, n, phys, J, Jinv, M, h, sat, dist, drv,
                         drv_kind, flags, upack, omega_des, omega_sd_cmd, mobs):
    """Writes the composed state derivative into dy; returns a status code."""
    m_mass = phys[0]
    g = phys[1]
    b = phys[2]
    tau_m = phys[3]
    guard = phys[5]

    i_omega = 12
    i_chi = i_omega + n
    i_oh = i_chi + 30
    i_xc1 = i_oh + n
    i_xc2 = i_xc1 + 3

    phi = y[0]
    th = y[1]
    psi = y[2]
    lim = 0.5 * math.pi - guard
    if abs(phi) >= lim or abs(th) >= lim:
        return STATUS_SINGULAR

    sp = math.sin(phi)
    cp = math.cos(phi)
    st = math.sin(th)
    ct = math.cos(th)
    sps = math.sin(psi)
    cps = math.cos(psi)
    tt = st / ct

    # --- plant wrench -----------------------------------------------------
    if flags & FLAG_DIRECT_DRIVE:
        u_f = upack[0]
        tx = upack[1]
        ty = upack[2]
        tz = upack[3]
    else:
        u_f = 0.0
        tx = 0.0
        ty = 0.0
        tz = 0.0
        for i in range(n):
            ws = y[i_omega + i] * y[i_omega + i]
            u_f += M[0, i] * ws
            tx += M[1, i] * ws
            ty += M[2, i] * ws
            tz += M[3, i] * ws
        u_f *= b
        tx *= b
        ty *= b
        tz *= b

    # --- rotational dynamics ---------------------------------------------
    d1 = y[3]
    d2 = y[4]
    d3 = y[5]
    # body rates from Euler rates
    om0 = d1 - st * d3
    om1 = cp * d2 + sp * ct * d3
    om2 = -sp * d2 + cp * ct * d3
    # J @ Omega and gyroscopic cross term
    jw0 = J[0, 0] * om0 + J[0, 1] * om1 + J[0, 2] * om2
    jw1 = J[1, 0] * om0 + J[1, 1] * om1 + J[1, 2] * om2
    jw2 = J[2, 0] * om0 + J[2, 1] * om1 + J[2, 2] * om2
    cx = om1 * jw2 - om2 * jw1
    cy = om2 * jw0 - om0 * jw2
    cz = om0 * jw1 - om1 * jw0
    # body angular acceleration
    ax = Jinv[0, 0] * (tx - cx) + Jinv[0, 1] * (ty - cy) + Jinv[0, 2] * (tz - cz)
    ay = Jinv[1, 0] * (tx - cx) + Jinv[1, 1] * (ty - cy) + Jinv[1, 2] * (tz - cz)
    az = Jinv[2, 0] * (tx - cx) + Jinv[2, 1] * (ty - cy) + Jinv[2, 2] * (tz - cz)
    # rate-matrix drift: Psi_dot @ Omega with Psi_dot via chain rule
    sec2 = 1.0 / (ct * ct)
    pd00 = cp * tt * d1 + sp * sec2 * d2
    pd01 = -sp * tt * d1 + cp * sec2 * d2
    pd10 = -sp * d1
    pd11 = -cp * d1
    pd20 = cp / ct * d1 + sp * st * sec2 * d2
    pd21 = -sp / ct * d1 + cp * st * sec2 * d2
    drift0 = pd00 * om1 + pd01 * om2
    drift1 = pd10 * om1 + pd11 * om2
    drift2 = pd20 * om1 + pd21 * om2
    # Psi @ body angular acceleration
    pa0 = ax + sp * tt * ay + cp * tt * az
    pa1 = cp * ay - sp * az
    pa2 = sp / ct * ay + cp / ct * az

    dy[0] = d1
    dy[1] = d2
    dy[2] = d3
    dy[3] = drift0 + pa0 + dist[9] + dist[0] * math.sin(dist[3] * t + dist[6])
    dy[4] = drift1 + pa1 + dist[10] + dist[1] * math.sin(dist[4] * t + dist[7])
    dy[5] = drift2 + pa2 + dist[11] + dist[2] * math.sin(dist[5] * t + dist[8])

    # --- translational dynamics -------------------------------------------
    r30 = cp * st * cps + sp * sps
    r31 = cp * st * sps - sp * cps
    r32 = cp * ct
    dy[6] = y[9]
    dy[7] = y[10]
    dy[8] = y[11]
    dy[9] = -(u_f / m_mass) * r30 + dist[21] + dist[12] * math.sin(dist[15] * t + dist[18])
    dy[10] = -(u_f / m_mass) * r31 + dist[22] + dist[13] * math.sin(dist[16] * t + dist[19])
    dy[11] = -(u_f / m_mass) * r32 + g + dist[23] + dist[14] * math.sin(dist[17] * t + dist[20])

    # --- actuators ----------------------------------------------------------
    if flags & FLAG_DIRECT_DRIVE:
        for i in range(n):
            dy[i_omega + i] = 0.0
    else:
        for i in range(n):
            dy[i_omega + i] = (omega_des[i] - y[i_omega + i]) / tau_m

    # --- reference system ---------------------------------------------------
    dy[i_xc1] = y[i_xc2]
    dy[i_xc1 + 1] = y[i_xc2 + 1]
    dy[i_xc1 + 2] = y[i_xc2 + 2]
    for i in range(3):
        if drv_kind == 0:
            acc = -drv[i] * drv[3 + i] * drv[3 + i] * math.sin(drv[3 + i] * t + drv[6 + i])
        elif drv_kind == 2:
            acc = (drv[9 + i] - y[i_xc2 + i]) / drv[12]
        else:
            acc = 0.0
        dy[i_xc2 + i] = acc

    # --- observer -------------------------------------------------------------
    if flags & FLAG_OBSERVER_ON:
        # wrench model from simulated (or commanded) squared rotor rates
        uh = 0.0
        thx = 0.0
        thy = 0.0
        thz = 0.0
        for i in range(n):
            if flags & FLAG_INCLUDE_ACT:
                ws = y[i_oh + i] * y[i_oh + i]
            else:
                ws = omega_sd_cmd[i]
            uh += M[0, i] * ws
            thx += M[1, i] * ws
            thy += M[2, i] * ws
            thz += M[3, i] * ws
        uh *= b
        thx *= b
        thy *= b
        thz *= b

        # saturated estimates entering the nonlinear model terms
        x20 = min(max(y[i_chi + 12], -sat[12]), sat[12])
        x21 = min(max(y[i_chi + 13], -sat[13]), sat[13])
        x22 = min(max(y[i_chi + 14], -sat[14]), sat[14])
        c30 = min(max(y[i_chi + 24], -sat[24]), sat[24])
        c31 = min(max(y[i_chi + 25], -sat[25]), sat[25])
        c32 = min(max(y[i_chi + 26], -sat[26]), sat[26])

        # attitude rate estimate at the held measured attitude
        e0 = x20 + upack[7]
        e1 = x21 + upack[8]
        e2 = x22 + upack[9]
        ho0 = mobs[3, 0] * e0 + mobs[3, 1] * e1 + mobs[3, 2] * e2
        ho1 = mobs[4, 0] * e0 + mobs[4, 1] * e1 + mobs[4, 2] * e2
        ho2 = mobs[5, 0] * e0 + mobs[5, 1] * e1 + mobs[5, 2] * e2
        hjw0 = J[0, 0] * ho0 + J[0, 1] * ho1 + J[0, 2] * ho2
        hjw1 = J[1, 0] * ho0 + J[1, 1] * ho1 + J[1, 2] * ho2
        hjw2 = J[2, 0] * ho0 + J[2, 1] * ho1 + J[2, 2] * ho2
        hcx = ho1 * hjw2 - ho2 * hjw1
        hcy = ho2 * hjw0 - ho0 * hjw2
        hcz = ho0 * hjw1 - ho1 * hjw0
        # body accel from estimated torque minus gyroscopic part
        gx = Jinv[0, 0] * (thx - hcx) + Jinv[0, 1] * (thy - hcy) + Jinv[0, 2] * (thz - hcz)
        gy = Jinv[1, 0] * (thx - hcx) + Jinv[1, 1] * (thy - hcy) + Jinv[1, 2] * (thz - hcz)
        gz = Jinv[2, 0] * (thx - hcx) + Jinv[2, 1] * (thy - hcy) + Jinv[2, 2] * (thz - hcz)
        # rate-matrix drift at measured attitude
        hd0 = (mobs[6, 1] * e0 + mobs[9, 1] * e1) * ho1 + (mobs[6, 2] * e0 + mobs[9, 2] * e1) * ho2
        hd1 = (mobs[7, 1] * e0) * ho1 + (mobs[7, 2] * e0) * ho2
        hd2 = (mobs[8, 1] * e0 + mobs[11, 1] * e1) * ho1 + (mobs[8, 2] * e0 + mobs[11, 2] * e1) * ho2
        f20 = hd0 + mobs[0, 0] * gx + mobs[0, 1] * gy + mobs[0, 2] * gz
        f21 = hd1 + mobs[1, 0] * gx + mobs[1, 1] * gy + mobs[1, 2] * gz
        f22 = hd2 + mobs[2, 0] * gx + mobs[2, 1] * gy + mobs[2, 2] * gz

        for i in range(3):
            # residuals of the three measured chains
            if flags & FLAG_ORACLE_RHO:
                rho_meas = y[6 + i] - y[i_xc1 + i]
            else:
                rho_meas = upack[10 + i] - y[i_chi + 18 + i]
            r1 = rho_meas - y[i_chi + i]
            r2 = (upack[13 + i] - upack[4 + i]) - y[i_chi + 9 + i]
            r3 = upack[16 + i] - y[i_chi + 18 + i]

            accel_model = -(uh / m_mass) * mobs[12, i] - (c30 if i == 0 else (c31 if i == 1 else c32))
            if i == 2:
                accel_model += g
            f2 = f20 if i == 0 else (f21 if i == 1 else f22)

            dy[i_chi + i] = y[i_chi + 3 + i] + h[0] * r1
            dy[i_chi + 3 + i] = y[i_chi + 6 + i] + accel_model + h[1] * r1
            dy[i_chi + 6 + i] = h[2] * r1
            dy[i_chi + 9 + i] = y[i_chi + 12 + i] + h[3] * r2
            dy[i_chi + 12 + i] = y[i_chi + 15 + i] + f2 + h[4] * r2
            dy[i_chi + 15 + i] = h[5] * r2
            dy[i_chi + 18 + i] = y[i_chi + 21 + i] + h[6] * r3
            dy[i_chi + 21 + i] = y[i_chi + 24 + i] + h[7] * r3
            dy[i_chi + 24 + i] = y[i_chi + 27 + i] + h[8] * r3
            dy[i_chi + 27 + i] = h[9] * r3
    else:
        for i in range(36):
            dy[i_chi + i] = 0.0

    # simulated actuator model (never clamped)
    for i in range(n):
        dy[i_oh + i] = (omega_des[i] - y[i_oh + i]) / tau_m

    return STATUS_OK


@njit(cache=True)
def advance_period(y, t0, n_sub, dt, n, phys, J, Jinv, M, h, sat, dist, drv,
                   drv_kind, flags, upack, omega_des, omega_sd_cmd, mobs):
    """Advance the composed state n_sub RK4 substeps in place."""
    size = y.shape[0]
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    yt = np.empty(size)
    omega_max = phys[4]
    i_omega = 12

    for s in range(n_sub):
        t = t0 + s * dt
        st1 = _composed_derivative(y, t, k1, n, phys, J, Jinv, M, h, sat, dist,
                                   drv, drv_kind, flags, upack, omega_des,
                                   omega_sd_cmd, mobs)
        if st1 != STATUS_OK:
            return st1
        for i in range(size):
            yt[i] = y[i] + 0.5 * dt * k1[i]
        st2 = _composed_derivative(yt, t + 0.5 * dt, k2, n, phys, J, Jinv, M, h,
                                   sat, dist, drv, drv_kind, flags, upack,
                                   omega_des, omega_sd_cmd, mobs)
        for i in range(size):
            yt[i] = y[i] + 0.5 * dt * k2[i]
        st3 = _composed_derivative(yt, t + 0.5 * dt, k3, n, phys, J, Jinv, M, h,
                                   sat, dist, drv, drv_kind, flags, upack,
                                   omega_des, omega_sd_cmd, mobs)
        for i in range(size):
            yt[i] = y[i] + dt * k3[i]
        st4 = _composed_derivative(yt, t + dt, k4, n, phys, J, Jinv, M, h, sat,
                                   dist, drv, drv_kind, flags, upack, omega_des,
                                   omega_sd_cmd, mobs)
        if st2 != STATUS_OK or st3 != STATUS_OK or st4 != STATUS_OK:
            return max(st2, max(st3, st4))
        ok = True
        for i in range(size):
            y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(y[i]):
                ok = False
        if not ok:
            return STATUS_NONFINITE
        if (flags & FLAG_CLAMP_ROTORS) and not (flags & FLAG_DIRECT_DRIVE):
            for i in range(n):
                w = y[i_omega + i]
                if w < 0.0:
                    y[i_omega + i] = 0.0
                elif w > omega_max:
                    y[i_omega + i] = omega_max
    return STATUS_OK
