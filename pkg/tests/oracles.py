"""Independent reference computations used by the tests.

None of these call into the package's numerical routines: they are closed
forms, series evaluated in extended precision, or scipy quadrature.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate


def scalar_impulse(a: float, b: float, h: float, t, dps: int = 40) -> np.ndarray:
    """Impulse response of x' = a x + b x(t - h) + delta, from 1/(s - a - b e^{-hs}) = sum b^k e^{-khs}/(s-a)^{k+1}."""
    mpmath.mp.dps = dps
    out = []
    for tt in np.atleast_1d(t):
        tt = mpmath.mpf(float(tt))
        acc = mpmath.mpf(0)
        k = 0
        while tt - k * h >= 0:
            r = tt - k * h
            acc += mpmath.mpf(b) ** k * r**k * mpmath.e ** (a * r) / mpmath.factorial(k)
            k += 1
            if h == 0:
                break
        out.append(float(acc))
    return np.array(out)


def scalar_impulse_l1(a: float, b: float, h: float, T: float, points: int = 20001) -> float:
    """int_0^T |g| by the series on a fine grid with Simpson's rule (rough-edged at t = k h, fine for tests)."""
    t = np.linspace(0.0, T, points)
    g = np.abs(scalar_impulse(a, b, h, t, dps=30))
    return float(integrate.simpson(g, x=t))


def scalar_transfer(a: float, b: float, h: float, s):
    s = np.asarray(s, dtype=complex)
    return 1.0 / (s - a - b * np.exp(-h * s))


def scalar_transfer_derivative(a: float, b: float, h: float, s):
    s = np.asarray(s, dtype=complex)
    den = s - a - b * np.exp(-h * s)
    return -(1.0 + b * h * np.exp(-h * s)) / den**2


def half_line_abs_integral(fun, limit: float = 2000.0) -> float:
    """int_0^inf |fun(i w)| dw by adaptive quadrature on [0, limit] plus a 1/w^2 tail estimate."""
    f = lambda w: abs(complex(fun(1j * w)))  # noqa: E731
    edges = np.concatenate([[0.0], np.geomspace(0.01, limit, 200)])
    total = sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:]))
    return total + f(limit) * limit


def grid_sup(fun, omega_max: float = 200.0, points: int = 400_001) -> tuple[float, float]:
    """Dense-grid maximum of |fun(i w)| over [0, omega_max], refined twice around the best sample.

    Always a lower bound on the sup."""
    w = np.linspace(0.0, omega_max, points)
    for _ in range(3):
        vals = np.abs(fun(1j * w))
        k = int(np.argmax(vals))
        step = w[1] - w[0]
        best = (float(vals[k]), float(w[k]))
        w = np.linspace(max(0.0, w[k] - 2 * step), w[k] + 2 * step, 20001)
    return best


def step_response_unit_delay(t) -> np.ndarray:
    """x' = -x(t - 1) + 1 from zero history, by the method of steps on [0, 3]."""
    t = np.asarray(t, dtype=float)
    x1 = t
    x2 = t - (t - 1) ** 2 / 2
    x3 = t - (t - 1) ** 2 / 2 + (t - 2) ** 3 / 6
    return np.where(t <= 1, x1, np.where(t <= 2, x2, x3))


def hayes_stable(a: float, b: float, h: float) -> bool:
    """Exact stability region of x' = a x + b x(t - h), h > 0 (Hayes' criterion)."""
    if a >= 1.0 / h:
        return False
    if b >= -a:
        return False
    if b >= 0:
        return a + b < 0
    # -a > b: need b > -sqrt(a^2 + z^2) with z in (0, pi/h) solving z = a h tan(z) ... written as
    # stability iff b > -sqrt(z1^2 / h^2 + a^2) where z1 is the root of z cot z = a h in (0, pi)
    ah = a * h
    if ah == 0:
        z1 = math.pi / 2
    else:
        from scipy.optimize import brentq

        z1 = brentq(lambda z: z * math.cos(z) - ah * math.sin(z), 1e-12, math.pi - 1e-12)
    return b > -math.sqrt(z1**2 / h**2 + a**2)


def sine_fit_amplitude(t: np.ndarray, x: np.ndarray, omega: float) -> float:
    """Least-squares amplitude of c0 + c1 sin(w t) + c2 cos(w t)."""
    M = np.column_stack([np.ones_like(t), np.sin(omega * t), np.cos(omega * t)])
    coef, *_ = np.linalg.lstsq(M, x, rcond=None)
    return float(math.hypot(coef[1], coef[2]))
