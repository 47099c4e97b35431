"""Domain types: nominal delay systems, delay perturbations and realizations,
controllers and gain containers.

The nominal system is

    x'(t) + sum_l A_-l x'(t - H_l) = A x(t) + sum_j A_j x(t - h_j)
                                     + int_0^D h(theta) x(t - theta) dtheta
                                     + B u(t) + sum_k B_k u(t - T_k)

with zero history.  Matrix norms are spectral norms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import SchemaError

MAX_KERNEL_DEGREE = 16


def norm2(M) -> float:
    """Spectral norm (largest singular value)."""
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _frozen(M, shape=None, what="matrix") -> np.ndarray:
    arr = np.array(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise SchemaError(f"{what} must be a 2-D array, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise SchemaError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{what} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _delay_key(d: float) -> float:
    return float(f"{d:.12g}")


@dataclass(frozen=True, eq=False)
class Distributed:
    """Polynomial kernel h(theta) = sum_k coeffs[k] theta**k on [0, D]."""

    D: float
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if not (self.D > 0 and math.isfinite(self.D)):
            raise SchemaError(f"distributed length D must be finite and > 0, got {self.D}")
        c = tuple(float(x) for x in self.coeffs)
        if len(c) == 0:
            c = (0.0,)
        if len(c) - 1 > MAX_KERNEL_DEGREE:
            raise SchemaError(f"kernel degree {len(c) - 1} exceeds cap {MAX_KERNEL_DEGREE}")
        if not all(math.isfinite(x) for x in c):
            raise SchemaError("kernel coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __eq__(self, other):
        return isinstance(other, Distributed) and self.D == other.D and self.coeffs == other.coeffs

    def __call__(self, theta):
        return P.polyval(theta, self.coeffs)

    def _real_roots(self, c, lo: float, hi: float) -> list[float]:
        c = P.polytrim(np.asarray(c, dtype=float), 1e-14 * max(np.abs(c).max(), 1e-300))
        if len(c) < 2:
            return []
        return [r.real for r in P.polyroots(c) if abs(r.imag) < 1e-12 and lo < r.real < hi]

    def sup_abs(self, lo: float, hi: float) -> float:
        """max |h| over [lo, hi] (endpoints and interior critical points)."""
        cand = [lo, hi]
        if len(self.coeffs) > 2:
            cand += self._real_roots(P.polyder(self.coeffs), lo, hi)
        return float(max(abs(self(t)) for t in cand))

    def abs_integral(self, hi: float | None = None) -> float:
        """int_0^hi |h|, split at the real roots of h."""
        hi = self.D if hi is None else hi
        pts = [0.0, hi]
        pts += self._real_roots(self.coeffs, 0.0, hi)
        pts.sort()
        anti = P.polyint(self.coeffs)
        return float(sum(abs(P.polyval(b, anti) - P.polyval(a, anti)) for a, b in zip(pts, pts[1:])))


Term = tuple[float, np.ndarray]


def _terms(items, shape, what, allow_zero) -> tuple[Term, ...]:
    out = []
    seen = set()
    for i, item in enumerate(items or ()):
        try:
            d, M = item
        except (TypeError, ValueError):
            raise SchemaError(f"{what}[{i}] must be a (delay, matrix) pair") from None
        d = float(d)
        if not math.isfinite(d) or d < 0 or (d == 0 and not allow_zero):
            raise SchemaError(f"{what}[{i}] delay {d} is not admissible")
        key = _delay_key(d)
        if key in seen:
            raise SchemaError(f"{what}[{i}] repeats delay {d}")
        seen.add(key)
        out.append((d, _frozen(M, shape, f"{what}[{i}] matrix")))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DelaySystem:
    """Nominal fixed-delay system.  Immutable; arrays are read-only."""

    A: np.ndarray
    B: np.ndarray
    neutral: tuple[Term, ...] = ()
    discrete: tuple[Term, ...] = ()
    distributed: Distributed | None = None
    input_delays: tuple[Term, ...] = ()

    def __post_init__(self):
        A = _frozen(self.A, what="A")
        n = A.shape[0]
        if A.shape != (n, n) or n < 1:
            raise SchemaError(f"A must be square, got shape {A.shape}")
        B = _frozen(self.B, what="B")
        if B.shape[0] != n or B.shape[1] < 1:
            raise SchemaError(f"B has shape {B.shape}, expected ({n}, p)")
        p = B.shape[1]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "neutral", _terms(self.neutral, (n, n), "neutral", False))
        object.__setattr__(self, "discrete", _terms(self.discrete, (n, n), "discrete", True))
        object.__setattr__(self, "input_delays", _terms(self.input_delays, (n, p), "input_delays", False))
        if self.distributed is not None and not isinstance(self.distributed, Distributed):
            D, coeffs = self.distributed
            object.__setattr__(self, "distributed", Distributed(float(D), tuple(coeffs)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def is_neutral(self) -> bool:
        return any(np.any(M != 0) for _, M in self.neutral)

    def neutral_norm_sum(self) -> float:
        return sum(norm2(M) for _, M in self.neutral)

    def delays(self) -> list[float]:
        ds = [d for d, _ in self.neutral] + [d for d, _ in self.discrete] + [d for d, _ in self.input_delays]
        if self.distributed is not None:
            ds.append(self.distributed.D)
        return ds

    def max_delay(self) -> float:
        return max(self.delays(), default=0.0)

    def min_positive_point_delay(self) -> float | None:
        ds = [d for d, _ in self.neutral] + [d for d, _ in self.discrete] + [d for d, _ in self.input_delays]
        ds = [d for d in ds if d > 0]
        return min(ds) if ds else None

    def state_bound(self) -> float:
        """||A|| + sum ||A_j|| + int_0^D |h|, the bound on the non-derivative part of Delta(s)/s."""
        c = norm2(self.A) + sum(norm2(M) for _, M in self.discrete)
        if self.distributed is not None:
            c += self.distributed.abs_integral()
        return c

    def input_bound(self) -> float:
        return norm2(self.B) + sum(norm2(M) for _, M in self.input_delays)

    def with_input(self, B, input_delays=()) -> "DelaySystem":
        return DelaySystem(self.A, B, self.neutral, self.discrete, self.distributed, input_delays)

    def state_channel(self) -> "DelaySystem":
        """The same dynamics driven through the identity (the w -> z system)."""
        return self.with_input(np.eye(self.n))

    def __eq__(self, other):
        if not isinstance(other, DelaySystem):
            return NotImplemented

        def same_terms(a, b):
            return len(a) == len(b) and all(d1 == d2 and np.array_equal(M1, M2) for (d1, M1), (d2, M2) in zip(a, b))

        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and same_terms(self.neutral, other.neutral)
            and same_terms(self.discrete, other.discrete)
            and same_terms(self.input_delays, other.input_delays)
            and self.distributed == other.distributed
        )

    __hash__ = None


@dataclass(frozen=True)
class PerturbationBounds:
    """Radii of admissible delay variation.

    With ``one_sided`` the admissible band is [nominal, nominal + radius]
    instead of [nominal - radius, nominal + radius].  The theorems only use
    the radius, so both shapes are covered by the same conditions.
    """

    eta: tuple[float, ...] = ()
    mu: tuple[float, ...] = ()
    eps: float = 0.0
    nu: tuple[float, ...] = ()
    one_sided: bool = False

    def __post_init__(self):
        for name in ("eta", "mu", "nu"):
            vals = tuple(float(v) for v in getattr(self, name))
            if any(not math.isfinite(v) or v < 0 for v in vals):
                raise SchemaError(f"perturbation radii {name} must be finite and >= 0")
            object.__setattr__(self, name, vals)
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise SchemaError("perturbation radius eps must be finite and >= 0")
        object.__setattr__(self, "eps", float(self.eps))

    @classmethod
    def zero(cls, sys: DelaySystem) -> "PerturbationBounds":
        return cls((0.0,) * len(sys.neutral), (0.0,) * len(sys.discrete), 0.0, (0.0,) * len(sys.input_delays))

    def for_system(self, sys: DelaySystem) -> "PerturbationBounds":
        """Pad missing radii with zeros; reject lists that are too long."""

        def pad(vals, k, name):
            if len(vals) > k:
                raise SchemaError(f"perturbation {name} has {len(vals)} radii but the system has {k} delays")
            return tuple(vals) + (0.0,) * (k - len(vals))

        eps = self.eps if sys.distributed is not None else 0.0
        if self.eps > 0 and sys.distributed is None:
            raise SchemaError("perturbation eps > 0 but the system has no distributed term")
        return PerturbationBounds(
            pad(self.eta, len(sys.neutral), "eta"),
            pad(self.mu, len(sys.discrete), "mu"),
            eps,
            pad(self.nu, len(sys.input_delays), "nu"),
            self.one_sided,
        )

    def scaled(self, alpha: float) -> "PerturbationBounds":
        return PerturbationBounds(
            tuple(alpha * v for v in self.eta),
            tuple(alpha * v for v in self.mu),
            alpha * self.eps,
            tuple(alpha * v for v in self.nu),
            self.one_sided,
        )

    def bands(self, sys: DelaySystem) -> dict[str, list[tuple[float, float]]]:
        """Admissible [lo, hi] for every delay of ``sys``."""
        pert = self.for_system(sys)

        def band(nom, r):
            return (nom, nom + r) if self.one_sided else (nom - r, nom + r)

        out = {
            "neutral": [band(d, r) for (d, _), r in zip(sys.neutral, pert.eta)],
            "discrete": [band(d, r) for (d, _), r in zip(sys.discrete, pert.mu)],
            "input": [band(d, r) for (d, _), r in zip(sys.input_delays, pert.nu)],
            "distributed": [],
        }
        if sys.distributed is not None:
            out["distributed"] = [band(sys.distributed.D, pert.eps)]
        return out

    def scaling_cap(self, sys: DelaySystem) -> float:
        """Largest alpha keeping every lower band edge nonnegative."""
        if self.one_sided:
            return math.inf
        pert = self.for_system(sys)
        cap = math.inf
        pairs = list(zip([d for d, _ in sys.neutral], pert.eta))
        pairs += list(zip([d for d, _ in sys.discrete], pert.mu))
        pairs += list(zip([d for d, _ in sys.input_delays], pert.nu))
        if sys.distributed is not None:
            pairs.append((sys.distributed.D, pert.eps))
        for nom, r in pairs:
            if r > 0:
                cap = min(cap, nom / r)
        return cap


# delay trajectories -------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value)) if np.ndim(t) else float(self.value)

    def range(self, T_end: float) -> tuple[float, float]:
        return self.value, self.value


@dataclass(frozen=True)
class Sinusoid:
    center: float
    amplitude: float
    omega: float
    phase: float = 0.0

    def __call__(self, t):
        return self.center + self.amplitude * np.sin(self.omega * np.asarray(t, dtype=float) + self.phase)

    def range(self, T_end: float) -> tuple[float, float]:
        a = abs(self.amplitude)
        return self.center - a, self.center + a


@dataclass(frozen=True)
class PiecewiseLinear:
    """Linear interpolation through (times, values); held constant outside."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        v = tuple(float(x) for x in self.values)
        if len(t) != len(v) or len(t) < 1:
            raise SchemaError("piecewise-linear trajectory needs matching, nonempty times/values")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise SchemaError("piecewise-linear sample times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def range(self, T_end: float) -> tuple[float, float]:
        return min(self.values), max(self.values)


Trajectory = Constant | Sinusoid | PiecewiseLinear


@dataclass(frozen=True)
class DelayRealization:
    """One trajectory per delay of a system (same ordering as the system's term lists)."""

    neutral: tuple[Trajectory, ...] = ()
    discrete: tuple[Trajectory, ...] = ()
    distributed: Trajectory | None = None
    inputs: tuple[Trajectory, ...] = ()

    @classmethod
    def nominal(cls, sys: DelaySystem) -> "DelayRealization":
        return cls(
            tuple(Constant(d) for d, _ in sys.neutral),
            tuple(Constant(d) for d, _ in sys.discrete),
            Constant(sys.distributed.D) if sys.distributed is not None else None,
            tuple(Constant(d) for d, _ in sys.input_delays),
        )

    @property
    def is_constant(self) -> bool:
        trajs = list(self.neutral) + list(self.discrete) + list(self.inputs)
        if self.distributed is not None:
            trajs.append(self.distributed)
        return all(isinstance(tr, Constant) for tr in trajs)

    def check(self, sys: DelaySystem, pert: PerturbationBounds | None = None, T_end: float = math.inf, tol=1e-12):
        """Raise SchemaError unless the realization matches ``sys`` and stays inside the bands."""
        if len(self.neutral) != len(sys.neutral) or len(self.discrete) != len(sys.discrete):
            raise SchemaError("delay realization does not match the system's delay terms")
        if len(self.inputs) != len(sys.input_delays):
            raise SchemaError("delay realization does not match the system's input delays")
        if (self.distributed is None) != (sys.distributed is None):
            raise SchemaError("delay realization does not match the system's distributed term")
        groups = {
            "neutral": (self.neutral, [d for d, _ in sys.neutral]),
            "discrete": (self.discrete, [d for d, _ in sys.discrete]),
            "input": (self.inputs, [d for d, _ in sys.input_delays]),
            "distributed": (
                (self.distributed,) if self.distributed is not None else (),
                [sys.distributed.D] if sys.distributed is not None else [],
            ),
        }
        bands = pert.bands(sys) if pert is not None else None
        for name, (trajs, noms) in groups.items():
            for i, (tr, nom) in enumerate(zip(trajs, noms)):
                lo, hi = tr.range(T_end)
                if lo < 0 or (nom > 0 and lo <= 0):
                    raise SchemaError(f"{name}[{i}] delay trajectory reaches {lo}, must stay positive")
                if bands is not None:
                    blo, bhi = bands[name][i]
                    if lo < blo - tol or hi > bhi + tol:
                        raise SchemaError(f"{name}[{i}] delay trajectory [{lo}, {hi}] leaves band [{blo}, {bhi}]")


# controllers ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Controller:
    """Convolution kernel sum_i K_i delta(t - t_i); u = K * x + r."""

    kernel: tuple[Term, ...] = ()

    def __post_init__(self):
        out = []
        seen = set()
        for i, (t, K) in enumerate(self.kernel):
            t = float(t)
            if not math.isfinite(t) or t < 0:
                raise SchemaError(f"controller[{i}] delay {t} must be finite and >= 0")
            if _delay_key(t) in seen:
                raise SchemaError(f"controller[{i}] repeats delay {t}")
            seen.add(_delay_key(t))
            out.append((t, _frozen(K, what=f"controller[{i}] matrix")))
        shapes = {K.shape for _, K in out}
        if len(shapes) > 1:
            raise SchemaError(f"controller matrices have inconsistent shapes {sorted(shapes)}")
        object.__setattr__(self, "kernel", tuple(out))

    @classmethod
    def static(cls, K) -> "Controller":
        return cls(((0.0, K),))

    def transform(self, s):
        """K_hat(s) = sum_i K_i exp(-s t_i), broadcast over an array of s."""
        s = np.asarray(s, dtype=complex)
        if not self.kernel:
            raise ValueError("empty controller has no shape")
        out = 0
        for t, K in self.kernel:
            out = out + np.exp(-s * t)[..., None, None] * K
        return out


def controller_gains(ctrl: Controller, points: int = 20001) -> tuple[float, float]:
    """Return (Minf_K, M2_K).

    Minf_K = sum ||K_i|| is exact for delta-sum kernels.  M2_K is the sup
    over the imaginary axis of ||sum K_i e^{-i w t_i}||, found by a dense
    sweep over one period of the kernel followed by local refinement.
    """
    if not ctrl.kernel:
        return 0.0, 0.0
    minf = sum(norm2(K) for _, K in ctrl.kernel)
    ts = [t for t, _ in ctrl.kernel if t > 0]
    if not ts:
        return minf, minf

    def f(w):
        return norm2(ctrl.transform(1j * np.array(w))[()])

    from fractions import Fraction

    base = min(ts)
    ratios = [Fraction(t / base).limit_denominator(64) for t in ts]
    if all(abs(float(r) * base - t) <= 1e-9 * t for r, t in zip(ratios, ts)):
        den = math.lcm(*(r.denominator for r in ratios))
        W = 2 * math.pi * den / base  # one full period of the kernel transform
    else:
        W = 200 * 2 * math.pi / base
    w = np.linspace(0.0, W, points)
    vals = np.linalg.norm(ctrl.transform(1j * w), 2, axis=(-2, -1))
    from scipy.optimize import minimize_scalar

    best = float(vals.max())
    dw = w[1] - w[0]
    for i in np.argsort(vals)[-5:]:
        res = minimize_scalar(lambda x: -f(x), bounds=(max(0.0, w[i] - dw), w[i] + dw), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -res.fun)
    return minf, min(best, minf)


# gains ---------------------------------------------------------------------

METHODS = ("frequency-sweep", "impulse-L1", "hardy-littlewood", "closed-form")


@dataclass(frozen=True)
class Gain:
    """A gain bound: ``value + error`` is an upper bound on the true gain."""

    value: float
    error: float = 0.0
    method: str = "closed-form"
    detail: dict = field(default_factory=dict, compare=False)

    @property
    def upper(self) -> float:
        return self.value + self.error

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "method": self.method, "upper": self.upper,
                **({"detail": self.detail} if self.detail else {})}


GAIN_FIELDS = ("M2_nom", "M2_nomd", "Minf_nom", "Minf_nomd", "M2", "M2d", "Minf", "Minfd", "M2_u", "Minf_u")


@dataclass(frozen=True)
class GainSet:
    """Nominal gains.  ``*_nom*`` are u -> v / u -> v'; the others w -> z / w -> z'.

    ``M2_u`` / ``Minf_u`` are only filled for closed loops: the r -> u map
    (I - K_hat G)^-1.
    """

    M2_nom: Gain | None = None
    M2_nomd: Gain | None = None
    Minf_nom: Gain | None = None
    Minf_nomd: Gain | None = None
    M2: Gain | None = None
    M2d: Gain | None = None
    Minf: Gain | None = None
    Minfd: Gain | None = None
    M2_u: Gain | None = None
    Minf_u: Gain | None = None

    def require(self, *names: str) -> list[Gain]:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"gain set is missing {missing}")
        return [getattr(self, n) for n in names]

    def merged(self, other: "GainSet") -> "GainSet":
        kw = {n: getattr(other, n) if getattr(other, n) is not None else getattr(self, n) for n in GAIN_FIELDS}
        return GainSet(**kw)

    def to_dict(self) -> dict:
        return {n: getattr(self, n).to_dict() for n in GAIN_FIELDS if getattr(self, n) is not None}


# validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]
    neutral_norm_sum: float
    lower_bounds: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "neutral_norm_sum": self.neutral_norm_sum,
            "lower_bounds": self.lower_bounds,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


def validate(sys: DelaySystem, pert: PerturbationBounds | None = None) -> ValidationReport:
    """Check Hypothesis (H) and nonnegativity of every lower delay bound.

    Structural problems (radius lists longer than the delay lists,
    mismatched shapes) raise; everything else is reported.
    """
    pert = (pert or PerturbationBounds()).for_system(sys)
    s = sys.neutral_norm_sum()
    checks = [Check("hypothesis_H", (not sys.neutral) or s < 1.0, f"sum ||A_-l|| = {s:.6g}")]
    bands = pert.bands(sys)
    lower = {k: [lo for lo, _ in v] for k, v in bands.items()}
    for group, los in lower.items():
        for i, lo in enumerate(los):
            checks.append(Check(f"{group}[{i}]_lower_bound", lo >= 0, f"lower delay bound = {lo:.6g}"))
    if sys.distributed is not None:
        deg = len(sys.distributed.coeffs) - 1
        checks.append(Check("kernel_degree", deg <= MAX_KERNEL_DEGREE, f"degree {deg}"))
    return ValidationReport(tuple(checks), s, lower)


def kernel_sup(sys: DelaySystem, eps: float = 0.0) -> float:
    """||h||_inf over [0, D + eps]; 0 without a distributed term."""
    if sys.distributed is None:
        return 0.0
    return sys.distributed.sup_abs(0.0, sys.distributed.D + eps)


def _merge(terms: Iterable[Term]) -> tuple[Term, ...]:
    acc: dict[float, np.ndarray] = {}
    order: list[float] = []
    for d, M in terms:
        key = _delay_key(d)
        if key in acc:
            acc[key] = acc[key] + M
        else:
            acc[key] = np.array(M, dtype=float)
            order.append(key)
    return tuple((k, acc[k]) for k in order)


def close_loop(sys: DelaySystem, ctrl: Controller) -> DelaySystem:
    """Absorb u = K * x + r into the state equation.

    B K_i x(t - t_i) and B_k K_i x(t - T_k - t_i) become state terms
    (t_i = 0 products from B join A).  B and B_k stay as the r channels.
    Exactly-zero products are dropped so a zero controller returns ``sys``.
    """
    if not ctrl.kernel:
        return sys
    for t, K in ctrl.kernel:
        if K.shape != (sys.p, sys.n):
            raise SchemaError(f"controller matrix shape {K.shape} does not match (p, n) = {(sys.p, sys.n)}")
    A = np.array(sys.A, dtype=float)
    new = []
    for t, K in ctrl.kernel:
        BK = sys.B @ K
        if np.any(BK != 0):
            if t == 0:
                A = A + BK
            else:
                new.append((t, BK))
        for T, Bk in sys.input_delays:
            BkK = Bk @ K
            if np.any(BkK != 0):
                new.append((T + t, BkK))
    if not new and np.array_equal(A, sys.A):
        return sys
    discrete = _merge(list(sys.discrete) + new)
    return DelaySystem(A, sys.B, sys.neutral, discrete, sys.distributed, sys.input_delays)
