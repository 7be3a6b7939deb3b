"""Compiled inner loops for the four-node house model.

Everything here works on flat float arrays so it can be jitted.  The public
wrappers in :mod:`tcl_testbed.etp` own validation and the dataclass types.

State vector layout (length ``N_Y``)::

    0 t_w   water tank, °C
    1 t_a   room air, °C
    2 t_1   evaporator, °C
    3 t_2   condenser, °C
    4..10   running integrals of the node heat flows, J (see ACC_* below)

Integrating the flow integrals as extra ODE states keeps the energy
bookkeeping consistent with the temperatures to round-off, since a Runge-Kutta
step preserves linear invariants exactly.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

KELVIN = 273.15

# parameter vector layout
P_CW, P_CR, P_C1, P_C2 = 0, 1, 2, 3
P_UA, P_HM, P_H1, P_H2 = 4, 5, 6, 7
P_A, P_LR, P_GAMMA, P_WFRIC, P_FHM = 8, 9, 10, 11, 12
N_P = 13

Y_TW, Y_TA, Y_T1, Y_T2 = 0, 1, 2, 3
ACC_QW = 4  # heat injected into the water
ACC_LEAK = 5  # U_a (T_amb - T_a), wall leak into the room
ACC_HM = 6  # H_m (T_a - T_w), room -> water
ACC_H1 = 7  # H_1 (T_a - T_1), room -> evaporator
ACC_QC = 8  # compressor heat lift, evaporator -> condenser
ACC_W = 9  # compressor electrical work
ACC_COND = 10  # H_2 (T_amb - T_2), ambient -> condenser
N_Y = 11

EV_ERROR = -1
EV_HORIZON = 0
EV_T_MINUS = 1
EV_T_PLUS = 2


@njit(cache=True)
def cooling_power_k(t1_k, a_comp, l_over_r):
    return a_comp * math.exp(-l_over_r / t1_k) / t1_k


@njit(cache=True)
def compressor_power_k(q_c, t1_k, t2_k, gamma, w_fric):
    return gamma * q_c * (t2_k - t1_k) / t1_k + w_fric


@njit(cache=True)
def rhs(y, on, q_w, t_amb, p, out):
    tw = y[Y_TW]
    ta = y[Y_TA]
    t1 = y[Y_T1]
    t2 = y[Y_T2]
    qc = 0.0
    w = 0.0
    if on:
        t1k = t1 + KELVIN
        qc = cooling_power_k(t1k, p[P_A], p[P_LR])
        w = compressor_power_k(qc, t1k, t2 + KELVIN, p[P_GAMMA], p[P_WFRIC])
    leak = p[P_UA] * (t_amb - ta)
    hm = p[P_HM] * (ta - tw)
    h1 = p[P_H1] * (ta - t1)
    cond = p[P_H2] * (t_amb - t2)
    out[Y_TW] = (hm + q_w) / p[P_CW]
    out[Y_TA] = (leak - hm - h1) / p[P_CR]
    out[Y_T1] = (h1 - qc) / p[P_C1]
    out[Y_T2] = (cond + qc + w) / p[P_C2]
    out[ACC_QW] = q_w
    out[ACC_LEAK] = leak
    out[ACC_HM] = hm
    out[ACC_H1] = h1
    out[ACC_QC] = qc
    out[ACC_W] = w
    out[ACC_COND] = cond


@njit(cache=True)
def rk4_step(y, on, q_w, t_amb, p, h, out, work):
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    tmp = work[4]
    n = y.shape[0]
    rhs(y, on, q_w, t_amb, p, k1)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    rhs(tmp, on, q_w, t_amb, p, k2)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    rhs(tmp, on, q_w, t_amb, p, k3)
    for i in range(n):
        tmp[i] = y[i] + h * k3[i]
    rhs(tmp, on, q_w, t_amb, p, k4)
    for i in range(n):
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def therm(y, f_hm):
    return (1.0 - f_hm) * y[Y_TA] + f_hm * y[Y_TW]


@njit(cache=True)
def _crossed(y, f_hm, threshold, direction):
    t = therm(y, f_hm)
    if direction < 0:
        return t <= threshold
    return t >= threshold


@njit(cache=True)
def _finite(y):
    for i in range(4):
        if not math.isfinite(y[i]):
            return False
    return True


@njit(cache=True)
def integrate(y, on, q_w, t_amb, p, threshold, direction, horizon, dt, tol):
    """Advance ``y`` in place for up to ``horizon`` seconds.

    ``direction`` is -1 to stop when the thermostat temperature falls to
    ``threshold``, +1 to stop when it rises to it, 0 for no event detection.
    On an event the returned state sits on the crossed side of the threshold,
    no more than ``tol`` seconds past the true crossing.

    Returns ``(elapsed, event_code)``.
    """
    n = y.shape[0]
    work = np.empty((5, n))
    y_new = np.empty(n)
    f_hm = p[P_FHM]
    if direction != 0 and _crossed(y, f_hm, threshold, direction):
        return 0.0, (EV_T_MINUS if direction < 0 else EV_T_PLUS)
    elapsed = 0.0
    n_full = int(horizon / dt)
    rest = horizon - n_full * dt
    n_steps = n_full + (1 if rest > 1e-12 else 0)
    for k in range(n_steps):
        h = dt if k < n_full else rest
        rk4_step(y, on, q_w, t_amb, p, h, y_new, work)
        if not _finite(y_new):
            return elapsed, EV_ERROR
        if direction != 0 and _crossed(y_new, f_hm, threshold, direction):
            lo = 0.0
            hi = h
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                rk4_step(y, on, q_w, t_amb, p, mid, y_new, work)
                if _crossed(y_new, f_hm, threshold, direction):
                    hi = mid
                else:
                    lo = mid
            rk4_step(y, on, q_w, t_amb, p, hi, y_new, work)
            y[:] = y_new
            return elapsed + hi, (EV_T_MINUS if direction < 0 else EV_T_PLUS)
        y[:] = y_new
        elapsed += h
    return horizon, EV_HORIZON
