"""Small-gain robustness conditions for time-varying delays and the largest
uniform scaling of the delay radii for which each condition holds.

Every condition is recorded as a named quantity that must be < 1, so a
report's verdict can be recomputed from the report alone.  Gains enter as
upper bounds (value + error).  The conditions are sufficient only: a
failed check reads "not certified", never "unstable".

Two bounds on the delay-difference terms depend on the band shape.  For
x(t - tau(t)) - x(t - h) with tau in [h, h + mu] the L2 norm is at most
mu ||x'||_2; for tau in [h - mu, h + mu] the admissible window is twice as
wide and the bound becomes sqrt(2) mu ||x'||_2.  The L-inf bound is
mu ||x'||_inf in both cases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

from . import freq
from .config import DEFAULT, Settings
from .errors import HypothesisHViolation, PreconditionError, UnsupportedError
from .model import Controller, DelaySystem, GainSet, PerturbationBounds, controller_gains, kernel_sup, norm2

THEOREMS = ("thm31_bibo", "thm31_hinf", "thm32_neutral_bibo", "thm41_bibo", "thm41_hinf", "prop42_neutral_stab")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class MarginReport:
    theorem: str
    conditions: dict  # name -> value that must be < 1
    quantities: dict
    alpha_star: float
    variants: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v < 1.0 for v in self.conditions.values())

    @property
    def verdict(self) -> str:
        return "certified" if self.passed else "not certified"

    def recheck(self) -> bool:
        """Recompute the verdict from the recorded condition values."""
        return all(float(v) < 1.0 for v in self.conditions.values()) == self.passed

    def to_dict(self) -> dict:
        return _jsonable({
            "theorem": self.theorem,
            "verdict": self.verdict,
            "conditions": self.conditions,
            "quantities": self.quantities,
            "alpha_star": self.alpha_star,
            "variants": self.variants,
            "provenance": self.provenance,
            "notes": self.notes,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# shared pieces ---------------------------------------------------------------


def _radii_sums(sys: DelaySystem, pert: PerturbationBounds) -> dict:
    pert = pert.for_system(sys)
    return {
        "sum_mu_Aj": sum(m * norm2(M) for m, (_, M) in zip(pert.mu, sys.discrete)),
        "sum_nu_Bk": sum(v * norm2(M) for v, (_, M) in zip(pert.nu, sys.input_delays)),
        "eps_h": pert.eps * kernel_sup(sys, pert.eps),
        "sum_neutral": sys.neutral_norm_sum(),
        "input_delay_variation": any(v > 0 and norm2(M) > 0 for v, (_, M) in zip(pert.nu, sys.input_delays)),
        "sum_Bk_varying": sum(norm2(M) for v, (_, M) in zip(pert.nu, sys.input_delays) if v > 0),
    }


def _uppers(gains: GainSet, *names: str) -> dict:
    return {n: g.upper for n, g in zip(names, gains.require(*names))}


def _provenance(gains: GainSet, *names: str) -> dict:
    return {n: getattr(gains, n).to_dict() for n in names if getattr(gains, n) is not None}


def _band_factor(pert: PerturbationBounds) -> float:
    return 1.0 if pert.one_sided else math.sqrt(2.0)


def _coupled(gain_z: float, eps_h: float, load: float, gain_d: float, M: float) -> float:
    """gain_z * eps_h * (1 + load * gain_d / (1 - M)): the distributed-horizon feedback through x."""
    if eps_h == 0:
        return 0.0
    if M >= 1:
        return math.inf
    return gain_z * eps_h * (1.0 + load * gain_d / (1.0 - M))


def _require_retarded(sys: DelaySystem, theorem: str):
    if sys.is_neutral:
        raise PreconditionError(f"{theorem} applies to retarded systems only (the system has neutral terms)")


def _require_H(sys: DelaySystem):
    if sys.neutral_norm_sum() >= 1.0:
        raise HypothesisHViolation(f"sum ||A_-l|| = {sys.neutral_norm_sum():.6g} >= 1")


# evaluators: (sys, scaled pert, context) -> (conditions, quantities, variants) ----


def _eval_thm31_bibo(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    g = ctx["gains"]
    M = g["Minfd"] * r["sum_mu_Aj"]
    Mt = _coupled(g["Minf"], r["eps_h"], r["sum_mu_Aj"], g["Minfd"], M)
    q = {"M": M, "M_tilde": Mt, **r}
    if "Minf_nom" in ctx["all_gains"] and "Minf_nomd" in ctx["all_gains"] and M < 1 and Mt < 1:
        a = ctx["all_gains"]
        twoB = 2.0 * r["sum_Bk_varying"]
        q["linf_gain_bound"] = (a["Minf_nom"] + g["Minf"] * (r["sum_mu_Aj"] / (1 - M) * (a["Minf_nomd"]
                                + g["Minfd"] * twoB) + twoB)) / (1 - Mt)
    return {"M": M, "M_tilde": Mt}, q, {"statement": {"M": M, "M_tilde": Mt}}


def _eval_thm31_hinf(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    g = ctx["gains"]
    f = _band_factor(pert)
    Mp = g["M2d"] * f * r["sum_mu_Aj"]
    Mt = _coupled(g["M2"], f * r["eps_h"], f * r["sum_mu_Aj"], g["M2d"], Mp)
    lit_M = g["M2d"] * r["sum_mu_Aj"]
    lit_t = g["M2"] * r["eps_h"] * (r["sum_mu_Aj"] / (1 - lit_M) + 1) if lit_M < 1 else math.inf
    q = {"M_prime": Mp, "M_tilde": Mt, "band_factor": f, **r,
         "requires_udot_in_L2": r["input_delay_variation"]}
    return {"M_prime": Mp, "M_tilde": Mt}, q, {"statement": {"M_prime": lit_M, "M_tilde": lit_t}}


def _eval_thm32(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    g = ctx["gains"]
    load = r["sum_mu_Aj"] + 2.0 * r["sum_neutral"]
    M2p = g["Minfd"] * load
    Mt = _coupled(g["Minf"], r["eps_h"], load, g["Minfd"], M2p)
    q = {"M_double_prime": M2p, "M_tilde_double_prime": Mt, **r}
    return {"M_double_prime": M2p, "M_tilde_double_prime": Mt}, q, {"statement": {"M_double_prime": M2p}}


def _eval_thm41_bibo(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    g = ctx["gains"]
    mk = ctx["Minf_K"]
    load = r["sum_mu_Aj"] + r["sum_nu_Bk"] * mk
    M = g["Minfd"] * load
    Mt = _coupled(g["Minf"], r["eps_h"], load, g["Minfd"], M)
    q = {"M_cl": M, "M_tilde_cl": Mt, "Minf_K": mk, "load": load, **r}
    variants = {}
    stmt = load + r["eps_h"]
    for name in ("Minf_u", "Minf_nom"):
        if name in ctx["all_gains"]:
            variants[f"statement[{name}]"] = {"M_cl": ctx["all_gains"][name] * stmt}
    return {"M_cl": M, "M_tilde_cl": Mt}, q, variants


def _eval_thm41_hinf(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    a = ctx["all_gains"]
    m2k = ctx["M2_K"]
    f = _band_factor(pert)
    load = f * (r["sum_mu_Aj"] + r["sum_nu_Bk"] * m2k)
    m2cl = a.get("M2_u", 1.0)
    M = m2cl * load
    Mt = _coupled(a["M2"], f * r["eps_h"], load, a["M2d"], a["M2d"] * load) if r["eps_h"] > 0 else 0.0
    q = {"M_cl": M, "M_tilde_cl": Mt, "M2_cl": m2cl, "M2_K": m2k, "load": load, "band_factor": f, **r,
         "requires_rdot_in_L2": r["input_delay_variation"]}
    variants = {"proof[M2d]": {"M_cl": a["M2d"] * load}}
    return {"M_cl": M, "M_tilde_cl": Mt}, q, variants


def _eval_prop42(sys, pert, ctx):
    r = _radii_sums(sys, pert)
    g = ctx["gains"]
    mk = ctx["Minf_K"]
    load = r["sum_mu_Aj"] + r["sum_nu_Bk"] * mk + 2.0 * r["sum_neutral"]
    M = g["Minfd"] * load
    Mt = _coupled(g["Minf"], r["eps_h"], load, g["Minfd"], M)
    literal = g["Minfd"] * (r["sum_mu_Aj"] + r["sum_nu_Bk"] * mk + 2.0 + r["sum_neutral"])
    q = {"M_cl": M, "M_tilde_cl": Mt, "Minf_K": mk, "load": load, **r}
    return {"M_cl": M, "M_tilde_cl": Mt}, q, {"statement[2 + sum]": {"M_cl": literal}}


_EVALUATORS: dict[str, tuple[Callable, tuple[str, ...]]] = {
    "thm31_bibo": (_eval_thm31_bibo, ("Minf", "Minfd")),
    "thm31_hinf": (_eval_thm31_hinf, ("M2", "M2d")),
    "thm32_neutral_bibo": (_eval_thm32, ("Minf", "Minfd")),
    "thm41_bibo": (_eval_thm41_bibo, ("Minf", "Minfd")),
    "thm41_hinf": (_eval_thm41_hinf, ("M2", "M2d")),
    "prop42_neutral_stab": (_eval_prop42, ("Minf", "Minfd")),
}


def _context(theorem: str, gains: GainSet, ctrl: Controller | None) -> dict:
    _, needed = _EVALUATORS[theorem]
    ctx = {"gains": _uppers(gains, *needed),
           "all_gains": {n: g.upper for n, g in vars(gains).items() if g is not None}}
    if theorem.startswith(("thm41", "prop42")):
        mk, m2k = controller_gains(ctrl) if ctrl is not None else (0.0, 0.0)
        ctx["Minf_K"], ctx["M2_K"] = mk, m2k
    return ctx


def _bisect(holds: Callable[[float], bool], cap: float, cfg: Settings) -> float:
    if not holds(0.0):
        return 0.0
    if math.isfinite(cap):
        if holds(cap):
            return cap
        lo, hi = 0.0, cap
    else:
        lo, hi = 0.0, 1.0
        while holds(hi):
            lo = hi
            hi *= 2.0
            if hi > cfg.scaling_ceiling:
                return math.inf
    while hi - lo > cfg.bisection_rtol * max(hi, 1e-300) * 0.5:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def max_scaling(theorem: str, sys: DelaySystem, pert: PerturbationBounds, gains: GainSet,
                ctrl: Controller | None = None, cfg: Settings = DEFAULT) -> float:
    """Largest alpha such that the condition holds with every radius multiplied by alpha.

    Bisection to relative tolerance ``cfg.bisection_rtol`` on the
    conservative side; capped where a lower band edge would become negative
    (no cap for one-sided bands).  Returns 0 if the condition fails at
    alpha = 0 and inf if it holds up to ``cfg.scaling_ceiling``.
    """
    evaluate, _ = _EVALUATORS[theorem]
    ctx = _context(theorem, gains, ctrl)
    pert = pert.for_system(sys)

    def holds(a):
        conds, _, _ = evaluate(sys, pert.scaled(a), ctx)
        return all(v < 1.0 for v in conds.values())

    return _bisect(holds, pert.scaling_cap(sys), cfg)


def _report(theorem, sys, pert, gains, ctrl, cfg, notes, gains_used) -> MarginReport:
    evaluate, _ = _EVALUATORS[theorem]
    pert = pert.for_system(sys)
    ctx = _context(theorem, gains, ctrl)
    conds, quantities, variants = evaluate(sys, pert, ctx)
    variants = {k: {"conditions": v, "verdict": "certified" if all(x < 1 for x in v.values()) else "not certified"}
                for k, v in variants.items()}
    if "Minf_K" in ctx:
        quantities = {**quantities, "Minf_K": ctx["Minf_K"], "M2_K": ctx["M2_K"]}
    alpha = max_scaling(theorem, sys, pert, gains, ctrl, cfg)
    return MarginReport(theorem, conds, quantities, alpha, variants, _provenance(gains, *gains_used), notes)


# public theorem checks --------------------------------------------------------


def thm31_bibo(sys: DelaySystem, pert: PerturbationBounds, gains: GainSet, cfg: Settings = DEFAULT) -> MarginReport:
    """BIBO robustness of a retarded system.

    Conditions: M = Minfd sum mu_j ||A_j|| < 1 and
    M~ = Minf eps ||h|| (1 + sum mu_j ||A_j|| Minfd / (1 - M)) < 1.
    When Minf_nom and Minf_nomd are available the explicit L-inf gain of
    the perturbed system is reported as ``linf_gain_bound``.
    """
    _require_retarded(sys, "thm31_bibo")
    return _report("thm31_bibo", sys, pert, gains, None, cfg, [],
                   ("Minf", "Minfd", "Minf_nom", "Minf_nomd"))


def thm31_hinf(sys: DelaySystem, pert: PerturbationBounds, gains: GainSet, cfg: Settings = DEFAULT) -> MarginReport:
    """L2 robustness of a retarded system.

    Conditions: M' = M2d b sum mu_j ||A_j|| < 1 and
    M2 b eps ||h|| (1 + b sum mu_j ||A_j|| M2d / (1 - M')) < 1, with band
    factor b = 1 for one-sided and sqrt(2) for two-sided delay bands.  The
    ``statement`` variant records the form without M2d and b.
    """
    _require_retarded(sys, "thm31_hinf")
    r = _radii_sums(sys, pert)
    notes = []
    if r["input_delay_variation"]:
        notes.append("input delays vary: the certified L2 gain is from (u, u') to x and needs u' in L2")
    return _report("thm31_hinf", sys, pert, gains, None, cfg, notes, ("M2", "M2d", "M2_nom", "M2_nomd"))


def thm32_neutral_bibo(sys: DelaySystem, pert: PerturbationBounds, gains: GainSet,
                       cfg: Settings = DEFAULT) -> MarginReport:
    """BIBO robustness of a neutral system.

    M'' = Minfd (sum mu_j ||A_j|| + 2 sum ||A_-l||) < 1, and, for eps > 0,
    Minf eps ||h|| (1 + (sum mu_j ||A_j|| + 2 sum ||A_-l||) Minfd / (1 - M'')) < 1.
    The neutral radii eta do not enter: the derivative difference is bounded by 2 ||x'||.
    """
    _require_H(sys)
    notes = [] if sys.is_neutral else ["no neutral terms: reduces to the retarded BIBO condition"]
    return _report("thm32_neutral_bibo", sys, pert, gains, None, cfg, notes, ("Minf", "Minfd"))


def thm41_bibo(sys: DelaySystem, pert: PerturbationBounds, ctrl: Controller, gains_cl: GainSet,
               cfg: Settings = DEFAULT) -> MarginReport:
    """BIBO stabilisation of a retarded system by a delta-sum controller.

    Uses the closed-loop w -> z' gain: Minfd_cl (sum mu_j ||A_j|| +
    sum nu_k ||B_k|| Minf_K) < 1, plus the distributed-horizon coupling when
    eps > 0.  Variants with the r -> u and r -> x gains in place of
    Minfd_cl are recorded.
    """
    _require_retarded(sys, "thm41_bibo")
    return _report("thm41_bibo", sys, pert, gains_cl, ctrl, cfg, [],
                   ("Minf", "Minfd", "Minf_nom", "Minf_nomd", "Minf_u"))


def thm41_hinf(sys: DelaySystem, pert: PerturbationBounds, ctrl: Controller, gains_cl: GainSet,
               cfg: Settings = DEFAULT) -> MarginReport:
    """L2 stabilisation of a retarded system by a delta-sum controller.

    M2_cl (sum mu_j ||A_j|| + sum nu_k ||B_k|| M2_K) < 1 with M2_cl the L2
    gain of r -> u = (I - K_hat G)^-1 (1 when the controller is empty).
    The variant with the closed-loop w -> z' gain is recorded.
    """
    _require_retarded(sys, "thm41_hinf")
    r = _radii_sums(sys, pert)
    notes = []
    if r["input_delay_variation"]:
        notes.append("input delays vary: the bound needs r' in L2")
    return _report("thm41_hinf", sys, pert, gains_cl, ctrl, cfg, notes, ("M2", "M2d", "M2_u"))


def prop42_neutral_stab(sys: DelaySystem, pert: PerturbationBounds, ctrl: Controller, gains_cl: GainSet,
                        cfg: Settings = DEFAULT) -> MarginReport:
    """BIBO stabilisation of a neutral system.

    Minfd_cl (sum mu_j ||A_j|| + sum nu_k ||B_k|| Minf_K + 2 sum ||A_-l||) < 1
    (plus the eps coupling).  The variant reading the neutral load as
    2 + sum ||A_-l|| is recorded.
    """
    _require_H(sys)
    notes = [] if sys.is_neutral else ["no neutral terms: reduces to the retarded stabilisation condition"]
    return _report("prop42_neutral_stab", sys, pert, gains_cl, ctrl, cfg, notes,
                   ("Minf", "Minfd", "Minf_u"))


@dataclass(frozen=True)
class ChainCheck:
    finite_poles: bool
    min_modulus: float
    abscissa: float
    base_delay: float
    moduli: tuple

    def to_dict(self) -> dict:
        return _jsonable({"finite_poles": self.finite_poles, "min_modulus": self.min_modulus,
                          "abscissa": self.abscissa, "base_delay": self.base_delay, "moduli": list(self.moduli)})


def prop43_check(sys: DelaySystem) -> ChainCheck:
    """Chains of neutral roots: finitely many roots right of a = -log(min |z|) / H iff min |z| > 1.

    z ranges over the roots of det(I + sum A_-l z^{k_l}) with H_l = k_l H.
    """
    cb = freq.commensurate_base(sys)
    if cb is None:
        raise UnsupportedError("neutral delays are not commensurate (or there are none)")
    H, _ = cb
    mod = freq.chain_location(sys)
    mn = float(mod[0]) if mod.size else math.inf
    a = -math.log(mn) / H if math.isfinite(mn) else -math.inf
    return ChainCheck(mn > 1.0, mn, a, H, tuple(float(m) for m in mod))


def check(theorem: str, sys: DelaySystem, pert: PerturbationBounds, gains: GainSet,
          ctrl: Controller | None = None, cfg: Settings = DEFAULT) -> MarginReport:
    """Dispatch by theorem id."""
    if theorem in ("thm31_bibo", "thm31_hinf", "thm32_neutral_bibo"):
        return {"thm31_bibo": thm31_bibo, "thm31_hinf": thm31_hinf,
                "thm32_neutral_bibo": thm32_neutral_bibo}[theorem](sys, pert, gains, cfg)
    if theorem in ("thm41_bibo", "thm41_hinf", "prop42_neutral_stab"):
        if ctrl is None:
            raise PreconditionError(f"{theorem} needs a controller")
        return {"thm41_bibo": thm41_bibo, "thm41_hinf": thm41_hinf,
                "prop42_neutral_stab": prop42_neutral_stab}[theorem](sys, pert, ctrl, gains, cfg)
    raise PreconditionError(f"unknown theorem id {theorem!r}; expected one of {THEOREMS + ('prop43',)}")
