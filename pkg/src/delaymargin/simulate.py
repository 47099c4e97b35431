"""Time-domain integration with time-varying delays, and an empirical
gain / falsification harness.

The integrator is a fixed-step RK4 with dense history (see ``_kernel``).
Zero history is assumed.  For neutral systems the delayed derivative is
read from stored samples, which keeps the scheme explicit as long as every
neutral delay exceeds one step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .config import DEFAULT, Settings
from .errors import HypothesisHViolation, PreconditionError
from .model import (
    Constant,
    Controller,
    DelayRealization,
    DelaySystem,
    PerturbationBounds,
    PiecewiseLinear,
    Sinusoid,
    norm2,
)

# input signals --------------------------------------------------------------


def _direction(direction, p):
    d = np.ones(p) if direction is None else np.asarray(direction, dtype=float).reshape(-1)
    if d.shape != (p,):
        raise PreconditionError(f"input direction has {d.size} entries, the system has {p} inputs")
    nd = np.linalg.norm(d)
    if nd == 0:
        raise PreconditionError("input direction must be nonzero")
    return d / nd


@dataclass(frozen=True)
class ZeroInput:
    def __call__(self, t, p: int):
        return np.zeros(np.shape(t) + (p,))

    amplitude = 0.0


@dataclass(frozen=True)
class Step:
    amplitude: float = 1.0
    start: float = 0.0
    direction: tuple | None = None

    def __call__(self, t, p: int):
        t = np.asarray(t, dtype=float)
        on = (t >= max(self.start, 0.0)).astype(float)
        return self.amplitude * on[..., None] * _direction(self.direction, p)


@dataclass(frozen=True)
class SineInput:
    amplitude: float
    omega: float
    phase: float = 0.0
    direction: tuple | None = None

    def __call__(self, t, p: int):
        t = np.asarray(t, dtype=float)
        v = np.where(t >= 0, np.sin(self.omega * t + self.phase), 0.0)
        return self.amplitude * v[..., None] * _direction(self.direction, p)


@dataclass(frozen=True)
class SineSweep:
    """Linear chirp from omega_lo to omega_hi over [0, duration], held at omega_hi afterwards."""

    amplitude: float
    omega_lo: float
    omega_hi: float
    duration: float
    direction: tuple | None = None

    def __call__(self, t, p: int):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.duration)
        k = (self.omega_hi - self.omega_lo) / self.duration
        phase = self.omega_lo * tc + 0.5 * k * tc**2 + self.omega_hi * (t - tc)
        v = np.where(t >= 0, np.sin(phase), 0.0)
        return self.amplitude * v[..., None] * _direction(self.direction, p)


@dataclass(frozen=True)
class RandomSwitching:
    """Piecewise-constant input of Euclidean norm ``amplitude``; a new random direction every ``dwell``."""

    amplitude: float
    dwell: float
    seed: int = 0

    def __call__(self, t, p: int):
        t = np.asarray(t, dtype=float)
        idx = np.floor(np.maximum(t, 0.0) / self.dwell).astype(np.int64)
        count = int(idx.max()) + 1 if idx.size else 1
        rng = np.random.default_rng(self.seed)
        dirs = rng.standard_normal((count, p))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        out = self.amplitude * dirs[idx]
        out[t < 0] = 0.0
        return out


@dataclass(frozen=True)
class SampledSignal:
    """Linear interpolation through samples (times, values[k, p]); zero before 0, held after the last sample."""

    times: tuple
    values: tuple

    def __call__(self, t, p: int):
        tt = np.asarray(self.times, dtype=float)
        vv = np.asarray(self.values, dtype=float).reshape(len(tt), -1)
        if vv.shape[1] != p:
            raise PreconditionError(f"sampled signal has {vv.shape[1]} channels, the system has {p}")
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, tt, vv[:, j]) for j in range(p)], axis=-1)
        out[t < 0] = 0.0
        return out


@dataclass(frozen=True)
class Gated:
    """``signal`` switched off from ``stop`` on."""

    signal: object
    stop: float

    def __call__(self, t, p: int):
        t = np.asarray(t, dtype=float)
        return self.signal(t, p) * (t < self.stop)[..., None]


InputSignal = ZeroInput | Step | SineInput | SineSweep | RandomSwitching | SampledSignal


# time series ---------------------------------------------------------------


@dataclass
class TimeSeries:
    dt: float
    x: np.ndarray
    dx: np.ndarray
    u: np.ndarray
    diverged: bool = False
    blowup_time: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (len(self.x) == len(self.dx) == len(self.u)):
            raise ValueError("state, derivative and input samples must have equal lengths")

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(len(self.x))

    def linf(self) -> float:
        return float(np.max(np.linalg.norm(self.x, axis=1))) if self.diverged is False else math.inf

    def l2(self) -> float:
        if self.diverged:
            return math.inf
        sq = np.sum(self.x**2, axis=1)
        return float(math.sqrt(self.dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))

    def growth_ratio(self) -> float:
        """Peak state norm over the last quarter of the run divided by that over the quarter before."""
        if self.diverged:
            return math.inf
        nx = np.linalg.norm(self.x, axis=1)
        q = len(nx) // 4
        if q < 2:
            return 1.0
        prev = float(nx[-2 * q:-q].max())
        last = float(nx[-q:].max())
        return last / prev if prev > 0 else (math.inf if last > 0 else 1.0)

    def input_linf(self) -> float:
        return float(np.max(np.linalg.norm(self.u, axis=1))) if len(self.u) else 0.0

    def input_l2(self) -> float:
        sq = np.sum(self.u**2, axis=1)
        return float(math.sqrt(max(self.dt * (sq.sum() - 0.5 * (sq[0] + sq[-1])), 0.0)))

    def to_csv(self, path):
        n, p = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"dx_{i + 1}" for i in range(n)]
        header += [f"u_{j + 1}" for j in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, tk in enumerate(self.t):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in self.x[k]]
                           + [repr(float(v)) for v in self.dx[k]] + [repr(float(v)) for v in self.u[k]])


# preparation ---------------------------------------------------------------


@dataclass(frozen=True)
class _Shifted:
    base: object
    offset: float

    def __call__(self, t):
        return self.base(t) + self.offset

    def range(self, T_end):
        lo, hi = self.base.range(T_end)
        return lo + self.offset, hi + self.offset


@dataclass
class _Plan:
    """Term lists with trajectories attached; the integrator's view of a system."""

    A: np.ndarray
    B: np.ndarray
    discrete: list = field(default_factory=list)  # (trajectory, matrix)
    neutral: list = field(default_factory=list)
    distributed: tuple | None = None  # (trajectory, coeffs)
    inputs: list = field(default_factory=list)  # (trajectory, matrix)

    @classmethod
    def from_system(cls, sys: DelaySystem, delays: DelayRealization | None = None) -> "_Plan":
        delays = delays or DelayRealization.nominal(sys)
        delays.check(sys)
        return cls(
            np.array(sys.A),
            np.array(sys.B),
            [(tr, np.array(M)) for tr, (_, M) in zip(delays.discrete, sys.discrete)],
            [(tr, np.array(M)) for tr, (_, M) in zip(delays.neutral, sys.neutral)],
            (delays.distributed, sys.distributed.coeffs) if sys.distributed is not None else None,
            [(tr, np.array(M)) for tr, (_, M) in zip(delays.inputs, sys.input_delays)],
        )

    def with_controller(self, ctrl: Controller) -> "_Plan":
        """Feedback u = K * x + r applied explicitly, keeping every delay trajectory separate."""
        plan = _Plan(self.A.copy(), self.B, list(self.discrete), list(self.neutral), self.distributed,
                     list(self.inputs))
        for t, K in ctrl.kernel:
            if t == 0:
                plan.A = plan.A + self.B @ K
            else:
                plan.discrete.append((Constant(t), self.B @ K))
            for tr, Bk in self.inputs:
                plan.discrete.append((_Shifted(tr, t), Bk @ K))
        return plan

    def min_lag(self, T_end: float, kinds=("discrete", "neutral", "inputs")) -> float:
        lows = []
        for kind in kinds:
            for tr, _ in getattr(self, kind):
                lo, _ = tr.range(T_end)
                if not (isinstance(tr, Constant) and tr.value == 0):
                    lows.append(lo)
        return min(lows, default=math.inf)

    def max_lag(self, T_end: float) -> float:
        his = [tr.range(T_end)[1] for kind in ("discrete", "neutral", "inputs") for tr, _ in getattr(self, kind)]
        if self.distributed is not None:
            his.append(self.distributed[0].range(T_end)[1])
        return max(his, default=0.0)

    def dynamics_scale(self) -> float:
        c = norm2(self.A) + sum(norm2(M) for _, M in self.discrete)
        if self.distributed is not None:
            L = self.distributed[0].range(0.0)[1]
            c += sum(abs(v) * L ** (k + 1) / (k + 1) for k, v in enumerate(self.distributed[1]))
        nu = sum(norm2(M) for _, M in self.neutral)
        return c / max(1.0 - nu, 1e-3)


def default_step(plan: _Plan, T_end: float, cfg: Settings = DEFAULT) -> float:
    """Largest step dividing the smallest lag with at least ``impulse_dt_per_delay`` steps per lag."""
    lo = plan.min_lag(T_end)
    target_dyn = cfg.impulse_dt_dynamics / (1.0 + plan.dynamics_scale())
    if not math.isfinite(lo) or lo <= 0:
        return min(cfg.impulse_dt_delay_free, target_dyn)
    target = min(lo / cfg.impulse_dt_per_delay, target_dyn)
    return lo / math.ceil(lo / target)


def _run(plan: _Plan, forcing_fn, N: int, dt: float, jumps: np.ndarray | None, cfg: Settings,
         scale: float = 1.0):
    n = plan.A.shape[0]
    T3 = dt * (np.arange(N)[:, None] + np.array([0.0, 0.5, 1.0])[None, :])
    A = plan.A.copy()
    dm, dt_ = [], []
    for tr, M in plan.discrete:
        if isinstance(tr, Constant) and tr.value == 0:
            A = A + M
            continue
        dm.append(M)
        dt_.append(T3 - tr(T3))
    nm, nt, ns = [], [], []
    for tr, M in plan.neutral:
        nm.append(M)
        nt.append(T3 - tr(T3))
        ns.append(int(round(tr.value / dt)) if isinstance(tr, Constant) else -1)
    dmats = np.array(dm, dtype=float).reshape(len(dm), n, n)
    dtau = np.ascontiguousarray(np.stack(dt_, axis=-1) if dt_ else np.zeros((N, 3, 0)))
    nmats = np.array(nm, dtype=float).reshape(len(nm), n, n)
    ntau = np.ascontiguousarray(np.stack(nt, axis=-1) if nt else np.zeros((N, 3, 0)))
    nshift = np.array(ns, dtype=np.int64)
    if plan.distributed is not None:
        tr, coeffs = plan.distributed
        dlo = np.ascontiguousarray(T3 - tr(T3))
        coeffs = np.array(coeffs, dtype=float)
        has_dist = True
    else:
        dlo = np.zeros((N, 3))
        coeffs = np.zeros(1)
        has_dist = False
    # first stage takes right limits, last stage left limits: a forcing jump on a grid point
    # then belongs to the step it starts, not the one it ends
    nudge = 1e-9 * dt * np.array([1.0, 0.0, -1.0])
    forcing = np.ascontiguousarray(forcing_fn(T3 + nudge))
    if jumps is None:
        jumps = np.zeros((N + 1, n))
    return _kernel.march(N, dt, np.ascontiguousarray(A), dmats, dtau, nmats, ntau, nshift, has_dist, coeffs,
                         dlo, forcing, np.ascontiguousarray(jumps), cfg.blowup * scale)


def _check_plan(plan: _Plan, dt: float, T_end: float):
    if not (dt > 0 and math.isfinite(dt)):
        raise PreconditionError(f"step must be positive and finite, got {dt}")
    if not (T_end > 0 and math.isfinite(T_end)):
        raise PreconditionError(f"horizon must be positive and finite, got {T_end}")
    if plan.neutral:
        nu = sum(norm2(M) for _, M in plan.neutral)
        if nu >= 1:
            raise HypothesisHViolation(f"sum ||A_-l|| = {nu:.6g} >= 1")
        if plan.min_lag(T_end, ("neutral",)) <= dt:
            raise PreconditionError("every neutral delay must exceed the step")
    lo = plan.min_lag(T_end)
    if math.isfinite(lo):
        if lo < 0:
            raise PreconditionError("delay trajectories must be nonnegative")
        # nonzero nominal delays that dip to the grid scale make the interpolation meaningless
        for kind in ("discrete", "neutral", "inputs"):
            for tr, _ in getattr(plan, kind):
                tlo, _ = tr.range(T_end)
                nominal_zero = isinstance(tr, Constant) and tr.value == 0
                if not nominal_zero and 0 < tlo and dt >= tlo / 4:
                    raise PreconditionError(f"step {dt} must be below a quarter of the smallest delay {tlo}")


def _forcing(plan: _Plan, signal, p):
    def fn(T3):
        F = signal(T3, p) @ plan.B.T
        for tr, Bk in plan.inputs:
            F = F + signal(T3 - tr(T3), p) @ Bk.T
        return F

    return fn


def _simulate_plan(plan: _Plan, signal, T_end: float, dt: float | None, cfg: Settings) -> TimeSeries:
    dt = dt if dt is not None else default_step(plan, T_end, cfg)
    _check_plan(plan, dt, T_end)
    N = int(math.ceil(T_end / dt - 1e-9))
    p = plan.B.shape[1]
    tgrid = dt * np.arange(N + 1)
    u = signal(tgrid, p)
    amp = float(np.max(np.linalg.norm(u, axis=1))) if N >= 0 else 0.0
    xl, xr, dl, dr, _, status = _run(plan, _forcing(plan, signal, p), N, dt, None, cfg, max(1.0, amp))
    if status >= 0:
        k = status
        return TimeSeries(dt, xr[: k + 1], dr[: k + 1], u[: k + 1], True, k * dt)
    return TimeSeries(dt, xr, dr, u)


def integrate(sys: DelaySystem, delays: DelayRealization | None = None, input=None, T_end: float = 10.0,
              dt: float | None = None, cfg: Settings = DEFAULT) -> TimeSeries:
    """Simulate the variable-delay system from zero history.

    Parameters
    ----------
    sys : DelaySystem
        Nominal matrices; the delays themselves come from ``delays``.
    delays : DelayRealization, optional
        One trajectory per delay term.  Defaults to the nominal constants.
    input : InputSignal, optional
        Defaults to zero input.
    T_end, dt : float
        Horizon and fixed step.  ``dt`` must be below a quarter of the
        smallest positive delay; the default divides the smallest delay.

    Returns
    -------
    TimeSeries
        Divergence (state norm above ``cfg.blowup`` times the input size)
        stops the march and is flagged with its time.
    """
    plan = _Plan.from_system(sys, delays)
    return _simulate_plan(plan, input or ZeroInput(), T_end, dt, cfg)


def integrate_closed_loop(sys: DelaySystem, ctrl: Controller, delays: DelayRealization | None = None, input=None,
                          T_end: float = 10.0, dt: float | None = None, cfg: Settings = DEFAULT) -> TimeSeries:
    """Simulate u = K * x + r with the feedback applied term by term (``input`` is r)."""
    plan = _Plan.from_system(sys, delays).with_controller(ctrl)
    return _simulate_plan(plan, input or ZeroInput(), T_end, dt, cfg)


# empirical gains -----------------------------------------------------------


def unit_input_family(p: int = 1, seed: int = 0, omegas: Sequence[float] = (0.3, 1.0, 3.0)) -> list:
    fam = [Step(1.0), Step(-1.0), RandomSwitching(1.0, 1.0, seed), RandomSwitching(1.0, 3.0, seed + 1)]
    fam += [SineInput(1.0, w) for w in omegas]
    return fam


def _run_any(sys, delays, signal, T_end, dt, cfg, ctrl):
    if ctrl is None:
        return integrate(sys, delays, signal, T_end, dt, cfg)
    return integrate_closed_loop(sys, ctrl, delays, signal, T_end, dt, cfg)


def empirical_linf_gain(sys: DelaySystem, delays: DelayRealization | None = None, inputs=None,
                        T_end: float = 50.0, dt: float | None = None, cfg: Settings = DEFAULT,
                        ctrl: Controller | None = None) -> float:
    """max over the family of ||x||_inf / ||u||_inf (a lower bound on the L-inf gain); inf on divergence."""
    inputs = inputs if inputs is not None else unit_input_family(sys.p)
    best = 0.0
    for sig in inputs:
        ts = _run_any(sys, delays, sig, T_end, dt, cfg, ctrl)
        if ts.diverged:
            return math.inf
        ul = ts.input_linf()
        if ul > 0:
            best = max(best, ts.linf() / ul)
    return best


def empirical_l2_gain(sys: DelaySystem, delays: DelayRealization | None = None, T_end: float = 100.0,
                      dt: float | None = None, omegas: Sequence[float] | None = None, seed: int = 0,
                      inputs=None, cfg: Settings = DEFAULT, ctrl: Controller | None = None) -> float:
    """max over sinusoids and band-limited random inputs of ||x||_2 / ||u||_2 on [0, T_end]; inf on divergence.

    ``omegas`` should contain the H-infinity peak frequency; by default a
    small logarithmic set is used.
    """
    if inputs is None:
        rng = np.random.default_rng(seed)
        omegas = list(omegas) if omegas is not None else [0.1, 0.5, 1.0, 2.0]
        inputs = [SineInput(1.0, w) for w in omegas]
        t = np.linspace(0.0, T_end, 2001)
        for _ in range(2):
            ws = rng.uniform(0.0, max(omegas) * 2 + 0.1, 8)
            ph = rng.uniform(0, 2 * np.pi, 8)
            vals = np.sum(np.sin(np.outer(t, ws) + ph), axis=1) / 8
            inputs.append(SampledSignal(tuple(t), tuple(np.repeat(vals[:, None], sys.p, axis=1).tolist())))
    best = 0.0
    for sig in inputs:
        ts = _run_any(sys, delays, sig, T_end, dt, cfg, ctrl)
        if ts.diverged:
            return math.inf
        ul = ts.input_l2()
        if ul > 0:
            best = max(best, ts.l2() / ul)
    return best


# falsification -------------------------------------------------------------


def _random_trajectory(lo: float, hi: float, rng, T_end: float):
    if hi <= lo:
        return Constant(lo)
    if rng.random() < 0.5:
        w = float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
        return Sinusoid(0.5 * (lo + hi), 0.5 * (hi - lo), w, float(rng.uniform(0, 2 * np.pi)))
    times = [0.0]
    while times[-1] < T_end:
        times.append(times[-1] + float(rng.uniform(0.2, 5.0)))
    vals = rng.uniform(lo, hi, len(times))
    return PiecewiseLinear(tuple(times), tuple(float(v) for v in vals))


def random_realization(sys: DelaySystem, pert: PerturbationBounds, rng, T_end: float) -> DelayRealization:
    bands = pert.bands(sys)

    def draw(group):
        return tuple(_random_trajectory(max(lo, 0.0), hi, rng, T_end) for lo, hi in bands[group])

    dist = None
    if sys.distributed is not None:
        lo, hi = bands["distributed"][0]
        dist = _random_trajectory(max(lo, 1e-12), hi, rng, T_end)
    return DelayRealization(draw("neutral"), draw("discrete"), dist, draw("input"))


def _describe(tr) -> dict:
    if isinstance(tr, Constant):
        return {"kind": "constant", "value": tr.value}
    if isinstance(tr, Sinusoid):
        return {"kind": "sinusoid", "center": tr.center, "amplitude": tr.amplitude, "omega": tr.omega,
                "phase": tr.phase}
    return {"kind": "piecewise_linear", "times": list(tr.times), "values": list(tr.values)}


def _random_input(rng, p: int, T_end: float):
    kind = rng.integers(3)
    if kind == 0:
        return Step(1.0, direction=tuple(rng.standard_normal(p)))
    if kind == 1:
        return RandomSwitching(1.0, float(rng.uniform(0.5, 5.0)), int(rng.integers(2**31)))
    return SineInput(1.0, float(np.exp(rng.uniform(np.log(0.05), np.log(5.0)))), float(rng.uniform(0, 2 * np.pi)),
                     tuple(rng.standard_normal(p)))


@dataclass
class FalsificationSummary:
    trials: int
    scaling: float
    seed: int
    divergences: list
    max_linf_ratio: float
    max_l2_ratio: float
    T_end: float

    @property
    def counterexamples(self) -> int:
        return len(self.divergences)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "scaling": self.scaling,
            "seed": self.seed,
            "T_end": self.T_end,
            "counterexamples": self.counterexamples,
            "divergences": self.divergences,
            "max_linf_ratio": self.max_linf_ratio,
            "max_l2_ratio": self.max_l2_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def falsify_margin(report, sys: DelaySystem, pert: PerturbationBounds, trials: int = 50, seed: int = 0,
                   scaling: float | None = None, T_end: float = 60.0, dt: float | None = None,
                   ctrl: Controller | None = None, cfg: Settings = DEFAULT) -> FalsificationSummary:
    """Simulate random admissible delay trajectories at scaling min(alpha*, 1).

    Trial i uses seed ``seed + i``.  Its input is switched off at T_end / 2,
    so the last two quarters are free response.  A trial diverges if it
    blows up or if that free response grows by more than
    ``cfg.growth_limit`` from the third quarter to the fourth.  Any
    divergence is recorded as a counterexample.
    """
    if scaling is None:
        a = report.alpha_star if report is not None else 0.0
        scaling = min(a, 1.0) if math.isfinite(a) else 1.0
    pert = pert.for_system(sys).scaled(scaling)
    divergences = []
    max_inf = 0.0
    max_l2 = 0.0
    for i in range(trials):
        rng = np.random.default_rng(seed + i)
        real = random_realization(sys, pert, rng, T_end)
        base = _random_input(rng, sys.p, T_end)
        ts = _run_any(sys, real, Gated(base, 0.5 * T_end), T_end, dt, cfg, ctrl)
        growth = ts.growth_ratio()
        if ts.diverged or growth > cfg.growth_limit:
            divergences.append({
                "trial": i,
                "seed": seed + i,
                "kind": "blowup" if ts.diverged else "growth",
                "blowup_time": ts.blowup_time,
                "growth_ratio": growth,
                "input": type(base).__name__,
                "delays": {
                    "neutral": [_describe(t) for t in real.neutral],
                    "discrete": [_describe(t) for t in real.discrete],
                    "input": [_describe(t) for t in real.inputs],
                    "distributed": _describe(real.distributed) if real.distributed is not None else None,
                },
            })
            continue
        ui, u2 = ts.input_linf(), ts.input_l2()
        if ui > 0:
            max_inf = max(max_inf, ts.linf() / ui)
        if u2 > 0:
            max_l2 = max(max_l2, ts.l2() / u2)
    return FalsificationSummary(trials, scaling, seed, divergences, max_inf, max_l2, T_end)
