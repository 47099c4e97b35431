"""The scalar benchmark x'(t) + x(t - h) = u(t) and its stabilised h = 2 variant.

``reproduce`` regenerates the margin table for h in {0, 0.5, 1, 1.5}
(delays ranging over [h, h + mu]) and for the loop closed by u = -x + r
at h = 2, next to the published reference values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import bibo, freq, margins
from .config import DEFAULT, Settings
from .model import Controller, DelaySystem, PerturbationBounds

H_VALUES = (0.0, 0.5, 1.0, 1.5)
REFERENCE = {
    "hinf_margin": (1.0, 0.63, 0.32, 0.03),
    "bibo_bound": (1.0, 1.01, 2.96, 39.1),
    "bibo_margin": (0.5, 0.50, 0.25, 0.025),
    "closed_loop_hinf_norm": 1.54,
    "closed_loop_bibo_bound": 3.89,
    "closed_loop_hinf_margin": 0.65,
    "closed_loop_bibo_margin": 0.26,
}
TOLERANCE = {
    "hinf_margin": ("abs", 0.02),
    "bibo_bound": ("rel", 0.05),
    "bibo_bound_h0": ("abs", 1e-3),
    "bibo_margin": ("abs", 0.01),
    "closed_loop_hinf_norm": ("abs", 0.02),
    "closed_loop_bibo_bound": ("rel", 0.05),
    "closed_loop_hinf_margin": ("abs", 0.02),
    "closed_loop_bibo_margin": ("abs", 0.01),
}


def delay_system(h: float) -> DelaySystem:
    """x'(t) = -x(t - h) + u(t); h = 0 gives x' = -x + u."""
    if h == 0:
        return DelaySystem([[-1.0]], [[1.0]])
    return DelaySystem([[0.0]], [[1.0]], discrete=[(h, [[-1.0]])])


def unit_band(sys: DelaySystem) -> PerturbationBounds:
    """Radius template 1 on every state delay, one-sided: tau(t) in [h, h + alpha]."""
    return PerturbationBounds(mu=(1.0,) * len(sys.discrete), one_sided=True).for_system(sys)


def band_h0() -> tuple[DelaySystem, PerturbationBounds]:
    """For h = 0 the perturbed term x(t - tau) has nominal delay 0 with matrix -1."""
    sys = DelaySystem([[0.0]], [[1.0]], discrete=[(0.0, [[-1.0]])])
    return sys, PerturbationBounds(mu=(1.0,), one_sided=True)


def perturbed_form(h: float) -> tuple[DelaySystem, PerturbationBounds]:
    if h == 0:
        return band_h0()
    sys = delay_system(h)
    return sys, unit_band(sys)


CONTROLLER = Controller.static([[-1.0]])


def closed_loop_plant() -> DelaySystem:
    return delay_system(2.0)


def printed_closed_loop(s):
    """(s + e^{-2s}) / (s + 1 + e^{-2s})."""
    e = np.exp(-2.0 * np.asarray(s, dtype=complex))
    return (s + e) / (s + 1.0 + e)


def _cell(key, value, ref, tol_key=None):
    kind, tol = TOLERANCE[tol_key or key]
    dev = value - ref
    ok = abs(dev) <= (tol * abs(ref) if kind == "rel" else tol)
    return {"computed": value, "reference": ref, "deviation": dev, "tolerance": f"{kind} {tol:g}", "within": ok}


@dataclass
class ReproductionTable:
    rows: list
    closed_loop: dict
    timings: dict

    def to_dict(self) -> dict:
        return margins._jsonable({"rows": self.rows, "closed_loop": self.closed_loop, "timings": self.timings})

    def render(self) -> str:
        out = []
        head = f"{'h':>5} | {'quantity':<18} | {'computed':>10} | {'reference':>10} | {'deviation':>10} | ok"
        out.append(head)
        out.append("-" * len(head))
        for row in self.rows:
            for name in ("hinf_margin", "bibo_bound", "bibo_margin"):
                c = row[name]
                out.append(f"{row['h']:>5g} | {name:<18} | {c['computed']:>10.4f} | {c['reference']:>10.4f} | "
                           f"{c['deviation']:>+10.4f} | {'yes' if c['within'] else 'NO'}")
        for name in ("closed_loop_hinf_norm", "closed_loop_bibo_bound", "closed_loop_hinf_margin",
                     "closed_loop_bibo_margin"):
            c = self.closed_loop[name]
            out.append(f"{'2':>5} | {name.replace('closed_loop_', 'cl_'):<18} | {c['computed']:>10.4f} | "
                       f"{c['reference']:>10.4f} | {c['deviation']:>+10.4f} | {'yes' if c['within'] else 'NO'}")
        return "\n".join(out)


def open_loop_row(h: float, cfg: Settings = DEFAULT) -> dict:
    sys = delay_system(h)
    cert = freq.certify_stability(sys, cfg)
    g = bibo.compute_gains(sys, cfg=cfg, certificate=cert)
    psys, pert = perturbed_form(h)
    hinf = margins.max_scaling("thm31_hinf", psys, pert, g, cfg=cfg)
    bibo_alpha = margins.max_scaling("thm31_bibo", psys, pert, g, cfg=cfg)
    i = H_VALUES.index(h)
    hl = bibo._try(bibo.hardy_littlewood_bound, sys, "u->v", cfg, cert)
    l1 = bibo.certified_l1(sys, "u->v", cfg, cert)
    if h == 0:
        bound = _cell("bibo_bound", l1.value, REFERENCE["bibo_bound"][i], "bibo_bound_h0")
        bound["method"] = "impulse-L1"
    else:
        bound = _cell("bibo_bound", hl.value, REFERENCE["bibo_bound"][i])
        bound["method"] = "hardy-littlewood"
    return {
        "h": h,
        "hinf_margin": _cell("hinf_margin", hinf, REFERENCE["hinf_margin"][i]),
        "bibo_bound": bound,
        "bibo_margin": _cell("bibo_margin", bibo_alpha, REFERENCE["bibo_margin"][i]),
        "M2d": g.M2d.to_dict(),
        "Minfd": g.Minfd.to_dict(),
        "impulse_l1": l1.to_dict(),
        "hardy_littlewood": hl.to_dict() if hl is not None else None,
        "hardy_littlewood_one_sided_half": hl.detail["one_sided_half"] if hl is not None else None,
    }


def closed_loop_row(cfg: Settings = DEFAULT) -> dict:
    plant = closed_loop_plant()
    cl, cert, g = bibo.closed_loop_gains(plant, CONTROLLER, cfg=cfg)
    pert = unit_band(plant)
    hinf = margins.thm41_hinf(plant, pert, CONTROLLER, g, cfg)
    bibo_rep = margins.thm41_bibo(plant, pert, CONTROLLER, g, cfg)
    # the printed formula evaluated directly
    wsys = cl  # its r -> u map equals the printed formula
    W = freq._sweep_limit(wsys)

    def f(w):
        return np.abs(printed_closed_loop(1j * w)).reshape(-1)

    def df(w):
        s = 1j * w
        e = np.exp(-2 * s)
        num, den = s + e, s + 1 + e
        d = ((1 - 2 * e) * den - num * (1 - 2 * e)) / den**2
        return np.abs(d).reshape(-1)

    direct = freq.sup_on_axis(f, df, W, 1.0 + 1.0 / (W - 2.0), cfg)
    return {
        "closed_loop_hinf_norm": {**_cell("closed_loop_hinf_norm", direct.value, REFERENCE["closed_loop_hinf_norm"]),
                                  "pipeline_r_to_u": g.M2_u.value, "pipeline_r_to_x": g.M2_nom.value},
        "closed_loop_bibo_bound": {**_cell("closed_loop_bibo_bound", g.Minfd.upper,
                                           REFERENCE["closed_loop_bibo_bound"]),
                                   "quantity": "closed-loop w -> z' gain (used by the margin)",
                                   "printed_map_r_to_u": g.Minf_u.upper},
        "closed_loop_hinf_margin": _cell("closed_loop_hinf_margin", hinf.alpha_star,
                                         REFERENCE["closed_loop_hinf_margin"]),
        "closed_loop_bibo_margin": _cell("closed_loop_bibo_margin", bibo_rep.alpha_star,
                                         REFERENCE["closed_loop_bibo_margin"]),
        "reports": {"thm41_hinf": hinf.to_dict(), "thm41_bibo": bibo_rep.to_dict()},
    }


def reproduce(cfg: Settings = DEFAULT) -> ReproductionTable:
    timings = {}
    rows = []
    for h in H_VALUES:
        t0 = time.perf_counter()
        rows.append(open_loop_row(h, cfg))
        timings[f"h={h:g}"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cl = closed_loop_row(cfg)
    timings["closed_loop"] = time.perf_counter() - t0
    return ReproductionTable(rows, cl, timings)
