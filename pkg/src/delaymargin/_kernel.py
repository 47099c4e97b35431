"""Compiled fixed-step RK4 march for linear delay equations.

Everything time-dependent (forcing, delayed arguments, distributed lower
limits) is precomputed by the caller at the three stage times of every
step: t_n, t_n + dt/2 and t_{n+1}.  The kernel only does history lookups
and linear algebra.

History is stored as left and right limits at grid points so that state
jumps (impulse responses) and derivative jumps (step inputs) are kept
exact at the grid.  States between grid points use cubic Hermite
interpolation, derivatives linear interpolation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SNAP = 1e-7  # fraction of a step within which a lookup time counts as a grid point


@njit(cache=True)
def _cell(q, side):
    # side > 0: right limit at grid points, side < 0: left limit
    if side > 0:
        return int(np.floor(q + SNAP))
    return int(np.ceil(q - SNAP)) - 1


@njit(cache=True)
def _state_at(tau, side, n, dt, t, xs, xl, xr, dl, dr, out):
    """x(tau) into ``out``; tau in the current step interpolates to the stage state xs at time t."""
    m = out.shape[0]
    q = tau / dt
    k = _cell(q, side)
    if k < 0:
        for i in range(m):
            out[i] = 0.0
        return
    if k >= n:
        span = t - n * dt
        if span <= 0.0:
            f = 0.0
        else:
            f = (tau - n * dt) / span
            if f < 0.0:
                f = 0.0
            if f > 1.0:
                f = 1.0
        for i in range(m):
            out[i] = (1.0 - f) * xr[n, i] + f * xs[i]
        return
    th = q - k
    if th < 0.0:
        th = 0.0
    if th > 1.0:
        th = 1.0
    th2 = th * th
    th3 = th2 * th
    h00 = 2.0 * th3 - 3.0 * th2 + 1.0
    h10 = th3 - 2.0 * th2 + th
    h01 = -2.0 * th3 + 3.0 * th2
    h11 = th3 - th2
    for i in range(m):
        out[i] = h00 * xr[k, i] + h10 * dt * dr[k, i] + h01 * xl[k + 1, i] + h11 * dt * dl[k + 1, i]


@njit(cache=True)
def _deriv_at(tau, side, n, dt, dl, dr, out):
    m = out.shape[0]
    q = tau / dt
    k = _cell(q, side)
    if k < 0:
        for i in range(m):
            out[i] = 0.0
        return
    if k >= n:
        for i in range(m):
            out[i] = dr[n, i]
        return
    th = q - k
    if th < 0.0:
        th = 0.0
    if th > 1.0:
        th = 1.0
    for i in range(m):
        out[i] = (1.0 - th) * dr[k, i] + th * dl[k + 1, i]


@njit(cache=True)
def _poly(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@njit(cache=True)
def _distributed(lo, t, n, dt, xs, xl, xr, dl, dr, coeffs, out, tmp_a, tmp_m, tmp_b):
    """int_lo^t h(t - s) x(s) ds: Simpson per history cell, trapezoid on the current partial cell."""
    m = out.shape[0]
    for i in range(m):
        out[i] = 0.0
    if lo < 0.0:
        lo = 0.0
    tn = n * dt
    if lo < tn:
        k0 = int(np.floor(lo / dt))
        if k0 < 0:
            k0 = 0
        for k in range(k0, n):
            a = k * dt
            b = a + dt
            if a < lo:
                a = lo
            if b <= a:
                continue
            c = 0.5 * (a + b)
            _state_at(a, 1, n, dt, t, xs, xl, xr, dl, dr, tmp_a)
            _state_at(c, 1, n, dt, t, xs, xl, xr, dl, dr, tmp_m)
            _state_at(b, -1, n, dt, t, xs, xl, xr, dl, dr, tmp_b)
            wa = _poly(coeffs, t - a)
            wm = _poly(coeffs, t - c)
            wb = _poly(coeffs, t - b)
            w = (b - a) / 6.0
            for i in range(m):
                out[i] += w * (wa * tmp_a[i] + 4.0 * wm * tmp_m[i] + wb * tmp_b[i])
        a = tn
    else:
        a = lo
    if t > a:
        _state_at(a, 1, n, dt, t, xs, xl, xr, dl, dr, tmp_a)
        wa = _poly(coeffs, t - a)
        wb = _poly(coeffs, 0.0)
        w = 0.5 * (t - a)
        for i in range(m):
            out[i] += w * (wa * tmp_a[i] + wb * xs[i])


@njit(cache=True)
def _rhs(n, p, side, t, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
         xl, xr, dl, dr, out, tmp, tmp2, tmp3, tmp4):
    m = xs.shape[0]
    for i in range(m):
        acc = forcing[n, p, i]
        for j in range(m):
            acc += A[i, j] * xs[j]
        out[i] = acc
    for q in range(dmats.shape[0]):
        _state_at(dtau[n, p, q], side, n, dt, t, xs, xl, xr, dl, dr, tmp)
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += dmats[q, i, j] * tmp[j]
            out[i] += acc
    for q in range(nmats.shape[0]):
        _deriv_at(ntau[n, p, q], side, n, dt, dl, dr, tmp)
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += nmats[q, i, j] * tmp[j]
            out[i] -= acc
    if has_dist:
        _distributed(dlo[n, p], t, n, dt, xs, xl, xr, dl, dr, coeffs, tmp, tmp2, tmp3, tmp4)
        for i in range(m):
            out[i] += tmp[i]


@njit(cache=True)
def march(N, dt, A, dmats, dtau, nmats, ntau, nshift, has_dist, coeffs, dlo, forcing, jumps, blowup):
    """Integrate N steps.  Returns (xl, xr, dl, dr, jtot, blowup_index or -1)."""
    m = A.shape[0]
    xl = np.zeros((N + 1, m))
    xr = np.zeros((N + 1, m))
    dl = np.zeros((N + 1, m))
    dr = np.zeros((N + 1, m))
    jtot = np.zeros((N + 1, m))
    k1 = np.zeros(m)
    k2 = np.zeros(m)
    k3 = np.zeros(m)
    k4 = np.zeros(m)
    xs = np.zeros(m)
    tmp = np.zeros(m)
    tmp2 = np.zeros(m)
    tmp3 = np.zeros(m)
    tmp4 = np.zeros(m)
    for i in range(m):
        jtot[0, i] = jumps[0, i]
        xr[0, i] = jumps[0, i]
    status = -1
    for n in range(N):
        t0 = n * dt
        th = t0 + 0.5 * dt
        t1 = (n + 1) * dt
        for i in range(m):
            xs[i] = xr[n, i]
        _rhs(n, 0, 1, t0, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
             xl, xr, dl, dr, k1, tmp, tmp2, tmp3, tmp4)
        for i in range(m):
            dr[n, i] = k1[i]
            xs[i] = xr[n, i] + 0.5 * dt * k1[i]
        _rhs(n, 1, 1, th, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
             xl, xr, dl, dr, k2, tmp, tmp2, tmp3, tmp4)
        for i in range(m):
            xs[i] = xr[n, i] + 0.5 * dt * k2[i]
        _rhs(n, 1, 1, th, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
             xl, xr, dl, dr, k3, tmp, tmp2, tmp3, tmp4)
        for i in range(m):
            xs[i] = xr[n, i] + dt * k3[i]
        _rhs(n, 2, -1, t1, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
             xl, xr, dl, dr, k4, tmp, tmp2, tmp3, tmp4)
        big = 0.0
        for i in range(m):
            xl[n + 1, i] = xr[n, i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            xs[i] = xl[n + 1, i]
            a = abs(xs[i])
            if not (a <= big):
                big = a
        # left derivative at t_{n+1}: history up to and including the new point
        _rhs(n, 2, -1, t1, dt, xs, A, dmats, dtau, nmats, ntau, has_dist, coeffs, dlo, forcing,
             xl, xr, dl, dr, tmp, tmp2, tmp3, tmp4, k4)
        for i in range(m):
            dl[n + 1, i] = tmp[i]
        # state jumps: external ones plus propagation through the neutral terms
        for i in range(m):
            jtot[n + 1, i] = jumps[n + 1, i]
        for q in range(nmats.shape[0]):
            s = nshift[q]
            if s > 0 and n + 1 - s >= 0:
                for i in range(m):
                    acc = 0.0
                    for j in range(m):
                        acc += nmats[q, i, j] * jtot[n + 1 - s, j]
                    jtot[n + 1, i] -= acc
        for i in range(m):
            xr[n + 1, i] = xl[n + 1, i] + jtot[n + 1, i]
        if not (big <= blowup):
            status = n + 1
            break
    if status < 0:
        for i in range(m):
            dr[N, i] = dl[N, i]
    return xl, xr, dl, dr, jtot, status
