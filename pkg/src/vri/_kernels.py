"""Compiled inner loops: RK4 stepping, event localisation, LD quadrature.

All kernels are pure functions of their arguments and release the GIL, so
callers may fan nodes/trajectories out over threads without changing
results.
"""

import math

import numpy as np
from numba import njit

# termination codes shared with dynamics.py
TIME_LIMIT = 0
EVENT = 1
LEFT_DOMAIN = 2
NAN_STATE = 3
CROSSING_LIMIT = 4

EVENT_Y_LINE = 0
EVENT_X_SECTION = 1

BISECT_TOL = 1e-10


@njit(cache=True, inline="always")
def rhs(x, y, px, py, c, mx, my):
    return (
        px / mx,
        py / my,
        8.0 * x * (1.0 - x) + y * y * (2.0 - y * y) - c * y,
        y * (4.0 * x * (1.0 - y * y) - 1.0) - c * x,
    )


@njit(cache=True, inline="always")
def potential(x, y, c):
    return 8.0 / 3.0 * x**3 - 4.0 * x**2 + 0.5 * y**2 + x * (y**4 - 2.0 * y**2) + c * x * y


@njit(cache=True, inline="always")
def energy(x, y, px, py, c, mx, my):
    return px * px / (2.0 * mx) + py * py / (2.0 * my) + potential(x, y, c)


@njit(cache=True, inline="always")
def rk4(x, y, px, py, c, mx, my, h):
    a0, a1, a2, a3 = rhs(x, y, px, py, c, mx, my)
    hh = 0.5 * h
    b0, b1, b2, b3 = rhs(x + hh * a0, y + hh * a1, px + hh * a2, py + hh * a3, c, mx, my)
    c0, c1, c2, c3 = rhs(x + hh * b0, y + hh * b1, px + hh * b2, py + hh * b3, c, mx, my)
    d0, d1, d2, d3 = rhs(x + h * c0, y + h * c1, px + h * c2, py + h * c3, c, mx, my)
    s = h / 6.0
    return (
        x + s * (a0 + 2.0 * b0 + 2.0 * c0 + d0),
        y + s * (a1 + 2.0 * b1 + 2.0 * c1 + d1),
        px + s * (a2 + 2.0 * b2 + 2.0 * c2 + d2),
        py + s * (a3 + 2.0 * b3 + 2.0 * c3 + d3),
    )


@njit(cache=True, inline="always")
def _event_value(kind, thr, x, y):
    if kind == EVENT_Y_LINE:
        return y - thr
    return x - thr


@njit(cache=True, inline="always")
def _crossed(direction, g0, g1):
    if direction > 0:
        return g0 < 0.0 and g1 >= 0.0
    if direction < 0:
        return g0 > 0.0 and g1 <= 0.0
    return (g0 < 0.0 and g1 >= 0.0) or (g0 > 0.0 and g1 <= 0.0)


@njit(cache=True)
def _locate(x, y, px, py, c, mx, my, h, kind, thr, direction):
    """Bisect the sub-step length at which the event function changes sign."""
    lo = 0.0
    hi = h
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        sx, sy, spx, spy = rk4(x, y, px, py, c, mx, my, mid)
        if _crossed(direction, _event_value(kind, thr, x, y), _event_value(kind, thr, sx, sy)):
            hi = mid
        else:
            lo = mid
    return hi


@njit(cache=True, nogil=True)
def run_trajectory(
    state0,
    c,
    mx,
    my,
    h,
    t_max,
    ev_kind,
    ev_thr,
    ev_dir,
    ev_psign,
    ev_terminal,
    energy_tol,
    record_every,
    max_crossings,
    escape,
):
    """Integrate with fixed-step RK4 until a terminal event, escape, or t_max.

    Returns (status, event_index, t_end, samples, n_samples, crossings,
    n_crossings, max_energy_error, first_violation_time).  ``samples`` rows
    are (t, x, y, px, py); ``crossings`` rows are (event, t, x, y, px, py).
    """
    n_steps = int(math.ceil(t_max / h - 1e-9))
    if n_steps < 1:
        n_steps = 1
    if record_every > 0:
        cap = n_steps // record_every + 3
    else:
        cap = 3
    samples = np.empty((cap, 5))
    crossings = np.empty((max(max_crossings, 1), 6))
    n_cross = 0
    n_ev = ev_kind.shape[0]

    x, y, px, py = state0[0], state0[1], state0[2], state0[3]
    e0 = energy(x, y, px, py, c, mx, my)
    max_de = 0.0
    t_bad = -1.0
    samples[0, 0] = 0.0
    samples[0, 1] = x
    samples[0, 2] = y
    samples[0, 3] = px
    samples[0, 4] = py
    ns = 1
    status = TIME_LIMIT
    ev_hit = -1
    t = 0.0

    for i in range(n_steps):
        t0 = i * h
        hs = h if i < n_steps - 1 else t_max - t0
        nx, ny, npx, npy = rk4(x, y, px, py, c, mx, my, hs)
        t = t0 + hs
        if not (math.isfinite(nx) and math.isfinite(ny) and math.isfinite(npx) and math.isfinite(npy)):
            status = NAN_STATE
            break

        # earliest event inside this step
        best = -1
        best_s = hs + 1.0
        for k in range(n_ev):
            g0 = _event_value(ev_kind[k], ev_thr[k], x, y)
            g1 = _event_value(ev_kind[k], ev_thr[k], nx, ny)
            if _crossed(ev_dir[k], g0, g1):
                s = _locate(x, y, px, py, c, mx, my, hs, ev_kind[k], ev_thr[k], ev_dir[k])
                ex, ey, epx, epy = rk4(x, y, px, py, c, mx, my, s)
                if ev_psign[k] != 0 and epx * ev_psign[k] <= 0.0:
                    continue
                if ev_terminal[k]:
                    if s < best_s:
                        best = k
                        best_s = s
                elif n_cross < max_crossings:
                    crossings[n_cross, 0] = k
                    crossings[n_cross, 1] = t0 + s
                    crossings[n_cross, 2] = ex
                    crossings[n_cross, 3] = ey
                    crossings[n_cross, 4] = epx
                    crossings[n_cross, 5] = epy
                    n_cross += 1

        if best >= 0:
            nx, ny, npx, npy = rk4(x, y, px, py, c, mx, my, best_s)
            t = t0 + best_s
            status = EVENT
            ev_hit = best

        de = abs(energy(nx, ny, npx, npy, c, mx, my) - e0)
        if de > max_de:
            max_de = de
        if de > energy_tol and t_bad < 0.0:
            t_bad = t

        x, y, px, py = nx, ny, npx, npy
        last = status != TIME_LIMIT or i == n_steps - 1
        if abs(x) > escape or abs(y) > escape:
            if status == TIME_LIMIT:
                status = LEFT_DOMAIN
            last = True
        if max_crossings > 0 and n_cross >= max_crossings and status == TIME_LIMIT:
            status = CROSSING_LIMIT
            last = True
        if last or (record_every > 0 and (i + 1) % record_every == 0):
            samples[ns, 0] = t
            samples[ns, 1] = x
            samples[ns, 2] = y
            samples[ns, 3] = px
            samples[ns, 4] = py
            ns += 1
        if last:
            break

    return status, ev_hit, t, samples, ns, crossings, n_cross, max_de, t_bad


@njit(cache=True, inline="always")
def _ld_integrand(v0, v1, v2, v3, p):
    if p == 0.5:
        return math.sqrt(abs(v0)) + math.sqrt(abs(v1)) + math.sqrt(abs(v2)) + math.sqrt(abs(v3))
    return abs(v0) ** p + abs(v1) ** p + abs(v2) ** p + abs(v3) ** p


@njit(cache=True, inline="always")
def _simpson_step(x, y, px, py, k, nx, ny, npx, npy, kn, h, c, mx, my, p):
    # midpoint from the cubic Hermite interpolant of the step
    q = h / 8.0
    mx_ = 0.5 * (x + nx) + q * (k[0] - kn[0])
    my_ = 0.5 * (y + ny) + q * (k[1] - kn[1])
    mpx = 0.5 * (px + npx) + q * (k[2] - kn[2])
    mpy = 0.5 * (py + npy) + q * (k[3] - kn[3])
    km = rhs(mx_, my_, mpx, mpy, c, mx, my)
    g0 = _ld_integrand(k[0], k[1], k[2], k[3], p)
    gm = _ld_integrand(km[0], km[1], km[2], km[3], p)
    g1 = _ld_integrand(kn[0], kn[1], kn[2], kn[3], p)
    return h / 6.0 * (g0 + 4.0 * gm + g1)


@njit(cache=True, nogil=True)
def ld_integral(x, y, px, py, c, mx, my, h, tau, p, escape):
    """Forward p-norm Lagrangian descriptor over [0, tau].

    Returns (value, truncated).  On leaving the box |x|, |y| <= escape the
    exit time is bisected and the integral stops there.
    """
    n_steps = int(math.ceil(tau / h - 1e-9))
    acc = 0.0
    k = rhs(x, y, px, py, c, mx, my)
    for i in range(n_steps):
        hs = h if i < n_steps - 1 else tau - i * h
        nx, ny, npx, npy = rk4(x, y, px, py, c, mx, my, hs)
        if abs(nx) > escape or abs(ny) > escape or not (math.isfinite(nx) and math.isfinite(ny)):
            lo = 0.0
            hi = hs
            while hi - lo > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                sx, sy, spx, spy = rk4(x, y, px, py, c, mx, my, mid)
                if abs(sx) > escape or abs(sy) > escape or not math.isfinite(sx):
                    hi = mid
                else:
                    lo = mid
            nx, ny, npx, npy = rk4(x, y, px, py, c, mx, my, lo)
            kn = rhs(nx, ny, npx, npy, c, mx, my)
            acc += _simpson_step(x, y, px, py, k, nx, ny, npx, npy, kn, lo, c, mx, my, p)
            return acc, True
        kn = rhs(nx, ny, npx, npy, c, mx, my)
        acc += _simpson_step(x, y, px, py, k, nx, ny, npx, npy, kn, hs, c, mx, my, p)
        x, y, px, py = nx, ny, npx, npy
        k = kn
    return acc, False


@njit(cache=True, nogil=True)
def ld_nodes(states, c, mx, my, h, tau, p, escape, out_f, out_b, trunc_f, trunc_b):
    """Forward and backward LD for each row (x, y, px, py) of ``states``."""
    for i in range(states.shape[0]):
        x, y, px, py = states[i, 0], states[i, 1], states[i, 2], states[i, 3]
        out_f[i], trunc_f[i] = ld_integral(x, y, px, py, c, mx, my, h, tau, p, escape)
        # time reversal: negate momenta and integrate forward
        out_b[i], trunc_b[i] = ld_integral(x, y, -px, -py, c, mx, my, h, tau, p, escape)
