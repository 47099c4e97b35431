"""BIBO (L-infinity) gains: impulse responses, certified L1 norms and the
Hardy-Littlewood frequency-domain bound.

The L-infinity gain of a convolution with g = g_a + sum g_i delta(t - t_i)
is bounded by int |g_a| + sum |g_i|.  For matrix kernels the bound uses
the entrywise L1 matrix L: with Euclidean vector norms,
||y||_inf <= ||L 1||_2 ||u||_inf and also <= (int ||g_a(t)|| dt + sum ||g_i||) ||u||_inf;
the smaller of the two is reported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import freq
from .config import DEFAULT, Settings
from .errors import NoCertificateError, UnstableSystemError
from .model import Controller, DelaySystem, Gain, GainSet, close_loop, controller_gains, norm2
from .simulate import _Plan, _run, default_step


@dataclass
class ImpulseResponse:
    """Sampled impulse response of one channel.

    ``right`` / ``left`` hold the one-sided limits of the absolutely
    continuous part at grid points, ``mid`` its value at cell midpoints,
    ``deltas`` the weights of Dirac masses sitting at grid points.
    """

    channel: str
    dt: float
    right: np.ndarray  # (N+1, n, m)
    left: np.ndarray
    mid: np.ndarray  # (N, n, m)
    deltas: np.ndarray  # (N+1, n, m)
    tail_rate: float = math.nan
    tail_amplitude: float = math.nan
    tail_residual: float = math.nan

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.right.shape[0])

    @property
    def T_end(self) -> float:
        return self.dt * (self.right.shape[0] - 1)

    def tail_integral(self) -> float:
        """Bound on int_T^inf ||g(t)||_F dt from the fitted envelope a e^{-r t}."""
        if self.tail_amplitude == 0:
            return 0.0
        if not self.tail_rate > 0:
            return math.inf
        return self.tail_amplitude * math.exp(-self.tail_rate * self.T_end) / self.tail_rate

    def to_csv(self, path):
        _, n, m = self.right.shape
        header = ["t"] + [f"g_{i + 1}_{j + 1}" for i in range(n) for j in range(m)]
        header += [f"delta_{i + 1}_{j + 1}" for i in range(n) for j in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, tk in enumerate(self.t):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in self.right[k].ravel()]
                           + [repr(float(v)) for v in self.deltas[k].ravel()])


def _excess(tw, vw, i0, rate) -> float:
    line = np.log(vw[i0]) - rate * (tw - tw[i0])
    over = np.clip(np.log(np.maximum(vw, 1e-300)) - line, 0.0, None)
    return float(np.sqrt(np.mean(over**2)))


def fit_tail(t: np.ndarray, values: np.ndarray, window: float) -> tuple[float, float, float]:
    """Fit ||g(t)|| <= a e^{-r t} on the final ``window`` fraction of the horizon.

    Log-linear regression through the local maxima of the norm.  With two
    maxima the line through them is used, with fewer the line through the
    peaks of the two window halves; the residual is then the rms log excess
    of the samples above that line.  Returns (rate, amplitude, residual);
    the amplitude is the smallest a covering every sample in the window, so
    the envelope is conservative there.
    """
    nrm = np.sqrt(np.sum(values.reshape(len(values), -1) ** 2, axis=1))
    start = int(len(t) * (1.0 - window))
    tw, vw = t[start:], nrm[start:]
    vmax = float(vw.max()) if vw.size else 0.0
    if vmax == 0.0:
        return math.inf, 0.0, 0.0
    if vmax < 1e-13 * float(nrm.max()):
        # below roundoff: charge the remaining level over one more window length
        rate = 1.0 / max(tw[-1] - tw[0], 1e-12)
        return rate, vmax * math.exp(rate * tw[-1]), 0.0
    inner = (vw[1:-1] >= vw[:-2]) & (vw[1:-1] >= vw[2:]) & (vw[1:-1] > 0)
    idx = np.nonzero(inner)[0] + 1
    if idx.size >= 3:
        tp, lp = tw[idx], np.log(vw[idx])
        slope, icpt = np.polyfit(tp, lp, 1)
        resid = float(np.sqrt(np.mean((lp - (slope * tp + icpt)) ** 2)))
        rate = -float(slope)
    elif idx.size == 2:
        i1, i2 = idx
        rate = float(np.log(vw[i1] / vw[i2]) / (tw[i2] - tw[i1]))
        resid = _excess(tw, vw, i1, rate)
    else:
        # no oscillation to speak of: compare the peaks of the two window halves
        half = len(vw) // 2
        if half < 1 or vw[half:].max() <= 0:
            return math.nan, math.nan, math.inf
        i1 = int(np.argmax(vw[:half]))
        i2 = half + int(np.argmax(vw[half:]))
        rate = float(np.log(vw[i1] / vw[i2]) / (tw[i2] - tw[i1]))
        resid = _excess(tw, vw, i1, rate)
    if not rate > 0:
        return rate, math.nan, resid
    amp = float(np.max(vw * np.exp(rate * tw)))
    return rate, amp, resid


def _columns(sys: DelaySystem, channel: str, N: int, dt: float):
    """Initial and delayed state jumps that realise a unit impulse in each input column."""
    n = sys.n
    if channel.startswith("w"):
        cols = []
        for i in range(n):
            J = np.zeros((N + 1, n))
            J[0, i] = 1.0
            cols.append(J)
        return cols
    cols = []
    for j in range(sys.p):
        J = np.zeros((N + 1, n))
        J[0] = sys.B[:, j]
        for T, Bk in sys.input_delays:
            k = int(round(T / dt))
            if k <= N:
                J[k] += Bk[:, j]
        cols.append(J)
    return cols


def _simulate_impulse(sys: DelaySystem, channel: str, T_end: float, dt: float, cfg: Settings):
    plan = _Plan.from_system(sys)
    plan.inputs = []  # input delays act through the jump schedule
    N = int(math.ceil(T_end / dt - 1e-9))
    zero = np.zeros((N, 3, sys.n))
    outs = []
    for J in _columns(sys, channel, N, dt):
        xl, xr, dl, dr, jt, status = _run(plan, lambda T3: zero, N, dt, J, cfg, 1e300)
        if status >= 0:
            raise UnstableSystemError("impulse response overflowed")
        outs.append((xl, xr, dl, dr, jt))
    stack = [np.stack([o[i] for o in outs], axis=-1) for i in range(5)]
    xl, xr, dl, dr, jt = stack
    if channel.endswith("dot"):
        right, left = dr, dl
        mid = 1.5 * (xl[1:] - xr[:-1]) / dt - 0.25 * (dr[:-1] + dl[1:])
        deltas = jt
    else:
        right, left = xr, xl
        mid = 0.5 * (xr[:-1] + xl[1:]) + dt / 8.0 * (dr[:-1] - dl[1:])
        deltas = np.zeros_like(jt)
    return right, left, mid, deltas


def _impulse_step(sys: DelaySystem, cfg: Settings) -> float:
    return default_step(_Plan.from_system(sys), 0.0, cfg)


def impulse_response(sys: DelaySystem, channel: str = "w->z", T_end: float | None = None, dt: float | None = None,
                     cfg: Settings = DEFAULT, certificate: freq.StabilityCertificate | None = None,
                     adapt: bool = True) -> ImpulseResponse:
    """Impulse response of a channel by integrating the homogeneous equation.

    The unit impulse enters as a state jump at t = 0 (and at T_k for
    delayed input columns); for neutral systems every jump is propagated
    through the delayed derivative terms.  The derivative channels return
    the derivative samples plus the Dirac masses at the jump times.

    With ``adapt`` the horizon is doubled (up to ``cfg.tail_max_doublings``
    times) until the fitted tail envelope has a log residual below
    ``cfg.tail_residual`` and carries at most ``cfg.tail_fraction`` of the
    L1 mass.
    """
    channel = freq.channel_name(channel)
    cert = certificate or freq.certify_stability(sys, cfg)
    if not cert.stable:
        raise UnstableSystemError(f"impulse response needs a certified stable system (verdict: {cert.verdict})")
    dt = dt if dt is not None else _impulse_step(sys, cfg)
    md = sys.min_positive_point_delay()
    if md is not None and dt >= md / 4:
        from .errors import PreconditionError

        raise PreconditionError(f"step {dt} must be below a quarter of the smallest delay {md}")
    T = T_end if T_end is not None else max(40.0, 20.0 * sys.max_delay())
    doublings = cfg.tail_max_doublings if adapt else 0
    for attempt in range(doublings + 1):
        right, left, mid, deltas = _simulate_impulse(sys, channel, T, dt, cfg)
        t = dt * np.arange(right.shape[0])
        rate, amp, resid = fit_tail(t, right, cfg.tail_window)
        ir = ImpulseResponse(channel, dt, right, left, mid, deltas, rate, amp, resid)
        ok = rate > 0 and resid < cfg.tail_residual
        if ok:
            mass = float(np.sum(np.abs(mid))) * dt + 1e-300
            if ir.tail_integral() <= cfg.tail_fraction * mass:
                return ir
        if attempt < doublings:
            T *= 2.0
    if not adapt:
        return ir
    if not rate > 0:
        raise NoCertificateError(f"impulse response tail does not decay (fitted rate {rate:.3g})")
    raise NoCertificateError(
        f"tail certificate failed after {doublings} doublings (residual {resid:.3g}, "
        f"tail {ir.tail_integral():.3g})")


def _cellwise(ir: ImpulseResponse, f):
    """Simpson and trapezoid integrals of f(g) over the sampled horizon."""
    a, m, b = f(ir.right[:-1]), f(ir.mid), f(ir.left[1:])
    simpson = ir.dt / 6.0 * np.sum(a + 4.0 * m + b, axis=0)
    trap = ir.dt / 2.0 * np.sum(a + b, axis=0)
    return simpson, trap


def l1_matrix(ir: ImpulseResponse) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise L1 norms (absolutely continuous part + tail + Dirac masses) and their error."""
    simpson, trap = _cellwise(ir, np.abs)
    tail = ir.tail_integral()
    L = simpson + tail + np.sum(np.abs(ir.deltas), axis=0)
    err = np.abs(simpson - trap) + tail * min(1.0, 10.0 * ir.tail_residual)
    return L, err


def l1_norm(ir: ImpulseResponse, coarse: ImpulseResponse | None = None) -> Gain:
    """Certified L-infinity gain of the convolution with the impulse response.

    The value is min(||L 1||_2, int ||g||_2 + sum ||g_i||_2) with L the
    entrywise L1 matrix.  The error adds the Simpson/trapezoid gap, the tail
    model residual and, when ``coarse`` (same response at twice the step)
    is given, the discretisation difference.
    """
    L, Lerr = l1_matrix(ir)
    ones = np.ones(L.shape[1])
    by_entries = float(np.linalg.norm(L @ ones))
    by_entries_err = float(np.linalg.norm(Lerr @ ones))

    def spec(G):
        if G.shape[-1] == 1 or G.shape[-2] == 1:
            return np.sqrt(np.sum(G**2, axis=(-2, -1)))
        return np.linalg.norm(G, 2, axis=(-2, -1))

    s_simp, s_trap = _cellwise(ir, spec)
    tail = ir.tail_integral()
    by_norm = float(s_simp) + tail + float(np.sum(spec(ir.deltas)))
    by_norm_err = abs(float(s_simp - s_trap)) + tail * min(1.0, 10.0 * ir.tail_residual)
    if by_entries + by_entries_err <= by_norm + by_norm_err:
        value, err, how = by_entries, by_entries_err, "entrywise"
    else:
        value, err, how = by_norm, by_norm_err, "pointwise-norm"
    detail = {"combination": how, "dt": ir.dt, "T_end": ir.T_end, "tail": tail, "tail_rate": ir.tail_rate,
              "entrywise": L.tolist()}
    if coarse is not None:
        c = l1_norm(coarse)
        detail["coarse_value"] = c.value
        err += abs(c.value - value)
    return Gain(value, err, "impulse-L1", detail)


def certified_l1(sys: DelaySystem, channel: str, cfg: Settings = DEFAULT,
                 certificate: freq.StabilityCertificate | None = None, dt: float | None = None) -> Gain:
    """l1_norm with a coarse run at twice the step for the discretisation error."""
    ir = impulse_response(sys, channel, dt=dt, cfg=cfg, certificate=certificate)
    coarse = impulse_response(sys, channel, T_end=ir.T_end, dt=2 * ir.dt, cfg=cfg, certificate=certificate,
                              adapt=False) if _coarse_ok(sys, 2 * ir.dt) else None
    return l1_norm(ir, coarse)


def _coarse_ok(sys, dt):
    md = sys.min_positive_point_delay()
    return md is None or dt < md / 4


# Hardy-Littlewood -----------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(15)
_GL_X7, _GL_W7 = np.polynomial.legendre.leggauss(7)


def _panel_integrals(f, a: np.ndarray, b: np.ndarray):
    """15- and 7-point Gauss-Legendre on every panel [a_i, b_i] of an entrywise integrand."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x15 = mid[:, None] + half[:, None] * _GL_X[None, :]
    x7 = mid[:, None] + half[:, None] * _GL_X7[None, :]
    v15 = f(x15.ravel()).reshape(x15.shape + (-1,))
    v7 = f(x7.ravel()).reshape(x7.shape + (-1,))
    i15 = half[:, None] * np.einsum("k,pke->pe", _GL_W, v15)
    i7 = half[:, None] * np.einsum("k,pke->pe", _GL_W7, v7)
    return i15, np.abs(i15 - i7)


def axis_integral(f, W: float, cfg: Settings = DEFAULT, panels: int = 400):
    """Entrywise int_0^W f(w) dw by adaptive panel bisection (f returns (len, entries))."""
    edges = np.concatenate([[0.0], np.geomspace(min(1e-3, W / 10), W, panels)])
    a, b = edges[:-1], edges[1:]
    vals, errs = _panel_integrals(f, a, b)
    while True:
        total = vals.sum(axis=0)
        scale = float(np.max(np.abs(total))) + 1e-300
        perr = errs.max(axis=1)
        if perr.sum() <= cfg.hl_rtol * scale or a.size >= cfg.hl_max_panels:
            break
        bad = perr > cfg.hl_rtol * scale / a.size
        if not np.any(bad):
            bad = perr >= np.quantile(perr, 0.9)
        c = 0.5 * (a[bad] + b[bad])
        na = np.concatenate([a[~bad], a[bad], c])
        nb = np.concatenate([b[~bad], c, b[bad]])
        nv, ne = _panel_integrals(f, np.concatenate([a[bad], c]), np.concatenate([c, b[bad]]))
        vals = np.concatenate([vals[~bad], nv])
        errs = np.concatenate([errs[~bad], ne])
        order = np.argsort(na, kind="stable")
        a, b, vals, errs = na[order], nb[order], vals[order], errs[order]
    return vals.sum(axis=0), errs.sum(axis=0), int(a.size)


def hardy_littlewood_bound(sys: DelaySystem, channel: str = "u->v", cfg: Settings = DEFAULT,
                           certificate: freq.StabilityCertificate | None = None) -> Gain:
    """BIBO bound 1/2 int_{-inf}^{inf} |G'(iw)| dw, applied entrywise.

    For real systems |G'(-iw)| = |G'(iw)|, so each entry is int_0^inf.
    The range beyond the sweep limit W is closed with the asymptotic
    estimate |G'(iW)| W; the rigorous bound c1 b0 / (W - c) on that range
    (||G'|| <= c1 b0 / (w - c)^2) sets the error.  Entries are combined as
    ||L 1||_2.

    Raises
    ------
    NoCertificateError
        For neutral systems, derivative channels, or channels with delayed
        inputs: |G'(iw)| then decays like 1/w and is not integrable.
    """
    channel = freq.channel_name(channel)
    if channel.endswith("dot"):
        raise NoCertificateError("derivative channels are not integrable on the imaginary axis")
    if sys.is_neutral:
        raise NoCertificateError("|G'(iw)| is not integrable for neutral systems")
    if channel.startswith("u") and sys.input_delays:
        raise NoCertificateError("|G'(iw)| decays like 1/w when the input is delayed")
    cert = certificate or freq.certify_stability(sys, cfg)
    if not cert.stable:
        raise UnstableSystemError(f"Hardy-Littlewood bound needs a certified stable system (verdict: {cert.verdict})")
    c = sys.state_bound()
    W = max(freq._sweep_limit(sys), 100.0 * (c + 1.0))
    b0 = sys.input_bound() if channel.startswith("u") else 1.0
    c1 = 1.0 + sum(norm2(M) * h for h, M in sys.discrete)
    if sys.distributed is not None:
        d = sys.distributed
        c1 += float(sum(abs(v) * d.D ** (k + 2) / (k + 2) for k, v in enumerate(d.coeffs)))
    m = sys.p if channel.startswith("u") else sys.n

    def f(w):
        G = freq.transfer_derivative(sys, 1j * w, channel, check=False)
        return np.abs(G).reshape(len(w), sys.n * m)

    body, qerr, panels = axis_integral(f, W, cfg)
    edge = f(np.array([W]))[0]
    tail_est = edge * W
    tail_bound = c1 * b0 / (W - c)
    entries = (body + tail_est).reshape(sys.n, m)
    errs = (qerr + np.abs(tail_bound - tail_est)).reshape(sys.n, m)
    ones = np.ones(m)
    value = float(np.linalg.norm(entries @ ones))
    error = float(np.linalg.norm(errs @ ones))
    return Gain(value, error, "hardy-littlewood",
                {"entrywise": entries.tolist(), "omega_max": W, "panels": panels, "tail_bound": tail_bound,
                 "one_sided_half": float(np.linalg.norm(0.5 * entries @ ones))})


# gain sets ------------------------------------------------------------------


def _best(*gains: Gain | None) -> Gain:
    cand = [g for g in gains if g is not None]
    best = min(cand, key=lambda g: g.upper)
    others = {g.method + ("" if i == 0 else f"#{i}"): g.upper for i, g in enumerate(cand) if g is not best}
    if others:
        best = Gain(best.value, best.error, best.method, {**best.detail, "alternatives": others})
    return best


def _try(fn, *args, **kw) -> Gain | None:
    try:
        return fn(*args, **kw)
    except NoCertificateError:
        return None


def linf_gains(sys: DelaySystem, cfg: Settings = DEFAULT,
               certificate: freq.StabilityCertificate | None = None) -> GainSet:
    """Minf, Minfd, Minf_nom, Minf_nomd.

    Minf and Minf_nom take the smaller of the impulse-L1 certificate and the
    Hardy-Littlewood bound where both exist.  The derivative gains take the
    smaller of the direct impulse certificate and the bound from the state
    equation, (input gain + c * state gain) / (1 - sum ||A_-l||) with
    c = ||A|| + sum ||A_j|| + int |h|.
    """
    cert = certificate or freq.certify_stability(sys, cfg)
    if not cert.stable:
        raise UnstableSystemError(f"L-infinity gains need a certified stable system (verdict: {cert.verdict})")
    c = sys.state_bound()
    nu = sys.neutral_norm_sum()
    b0 = sys.input_bound()

    minf = _best(_try(certified_l1, sys, "w->z", cfg, cert), _try(hardy_littlewood_bound, sys, "w->z", cfg, cert))
    minf_nom = _best(_try(certified_l1, sys, "u->v", cfg, cert),
                     _try(hardy_littlewood_bound, sys, "u->v", cfg, cert))
    via_state = Gain((1.0 + c * minf.upper) / (1.0 - nu), 0.0, "closed-form", {"from": "state equation"})
    minfd = _best(_try(certified_l1, sys, "w->zdot", cfg, cert), via_state)
    via_state_nom = Gain((b0 + c * minf_nom.upper) / (1.0 - nu), 0.0, "closed-form", {"from": "state equation"})
    minf_nomd = _best(_try(certified_l1, sys, "u->vdot", cfg, cert), via_state_nom)
    return GainSet(Minf_nom=minf_nom, Minf_nomd=minf_nomd, Minf=minf, Minfd=minfd)


def l2_gains(sys: DelaySystem, cfg: Settings = DEFAULT,
             certificate: freq.StabilityCertificate | None = None) -> GainSet:
    cert = certificate or freq.certify_stability(sys, cfg)
    return GainSet(
        M2_nom=freq.hinf_norm(sys, "u->v", cfg, cert),
        M2_nomd=freq.hinf_norm(sys, "u->vdot", cfg, cert),
        M2=freq.hinf_norm(sys, "w->z", cfg, cert),
        M2d=freq.hinf_norm(sys, "w->zdot", cfg, cert),
    )


def compute_gains(sys: DelaySystem, which=("l2", "linf"), cfg: Settings = DEFAULT,
                  certificate: freq.StabilityCertificate | None = None) -> GainSet:
    cert = certificate or freq.certify_stability(sys, cfg)
    out = GainSet()
    if "l2" in which:
        out = out.merged(l2_gains(sys, cfg, cert))
    if "linf" in which:
        out = out.merged(linf_gains(sys, cfg, cert))
    return out


# closed loop ----------------------------------------------------------------


def _shift(arr: np.ndarray, d: float, dt: float) -> np.ndarray:
    """arr sampled on k*dt, delayed by d (zero before d), linear interpolation off-grid."""
    q = d / dt
    k = int(math.floor(q + 1e-9))
    f = q - k
    out = np.zeros_like(arr)
    if k < arr.shape[0]:
        out[k:] = arr[: arr.shape[0] - k]
    if f > 1e-9:
        out2 = np.zeros_like(arr)
        if k + 1 < arr.shape[0]:
            out2[k + 1:] = arr[: arr.shape[0] - k - 1]
        out = (1 - f) * out + f * out2
    return out


def control_impulse(cl: DelaySystem, ctrl: Controller, cfg: Settings = DEFAULT,
                    certificate: freq.StabilityCertificate | None = None, dt: float | None = None) -> ImpulseResponse:
    """Impulse response of r -> u = (I - K_hat G)^-1: I delta + sum_i K_i g_cl(t - t_i)."""
    g = impulse_response(cl, "u->v", cfg=cfg, certificate=certificate, dt=dt)
    p = cl.p
    right = np.zeros(g.right.shape[:1] + (p, p))
    left = np.zeros_like(right)
    mid = np.zeros(g.mid.shape[:1] + (p, p))
    deltas = np.zeros_like(right)
    deltas[0] = np.eye(p)
    for t, K in ctrl.kernel:
        right += np.einsum("ij,njk->nik", K, _shift(g.right, t, g.dt))
        left += np.einsum("ij,njk->nik", K, _shift(g.left, t, g.dt))
        mid += np.einsum("ij,njk->nik", K, _shift(g.mid, t, g.dt))
    tt = g.dt * np.arange(right.shape[0])
    rate, amp, resid = fit_tail(tt, right, cfg.tail_window)
    return ImpulseResponse("r->u", g.dt, right, left, mid, deltas, rate, amp, resid)


def closed_loop_gains(sys: DelaySystem, ctrl: Controller, which=("l2", "linf"), cfg: Settings = DEFAULT):
    """(closed-loop system, certificate, gains).  The gain set adds M2_u / Minf_u for r -> u."""
    cl = close_loop(sys, ctrl)
    cert = freq.certify_stability(cl, cfg)
    if not cert.stable:
        raise UnstableSystemError(f"controller does not certify the nominal closed loop (verdict: {cert.verdict})")
    gains = compute_gains(cl, which, cfg, cert)
    if ctrl.kernel:
        extra = {}
        if "l2" in which:
            extra["M2_u"] = control_hinf(cl, ctrl, cfg, cert)
        if "linf" in which:
            ir = control_impulse(cl, ctrl, cfg, cert)
            coarse = control_impulse(cl, ctrl, cfg, cert, dt=2 * ir.dt) if _coarse_ok(cl, 2 * ir.dt) else None
            extra["Minf_u"] = l1_norm(ir, coarse)
        gains = gains.merged(GainSet(**extra))
    return cl, cert, gains


def control_hinf(cl: DelaySystem, ctrl: Controller, cfg: Settings = DEFAULT,
                 certificate: freq.StabilityCertificate | None = None) -> Gain:
    """sup_w ||I + K_hat(iw) G_cl(iw)||: the L2 gain of r -> u."""
    p = cl.p
    I = np.eye(p)
    dK = Controller(tuple((t, K) for t, K in ctrl.kernel))

    def khat_d(s):
        out = 0
        for t, K in dK.kernel:
            out = out + (-t * np.exp(-s * t))[..., None, None] * K
        return out

    def T(w):
        s = 1j * w
        return I + ctrl.transform(s) @ freq.transfer(cl, s, "u->v", check=False)

    def dT(w):
        s = 1j * w
        G = freq.transfer(cl, s, "u->v", check=False)
        dG = freq.transfer_derivative(cl, s, "u->v", check=False)
        return khat_d(s) @ G + ctrl.transform(s) @ dG

    W = freq._sweep_limit(cl)
    c, nu = freq._shifted_bounds(cl, 0.0)
    mk, _ = controller_gains(ctrl)
    tail = 1.0 + mk * cl.input_bound() / (W * (1.0 - nu) - c)
    g = freq.sup_on_axis(lambda w: np.linalg.norm(T(w), 2, axis=(-2, -1)),
                         lambda w: np.linalg.norm(dT(w), 2, axis=(-2, -1)), W, tail, cfg)
    return Gain(g.value, g.error, "frequency-sweep", {**g.detail, "map": "r->u"})
