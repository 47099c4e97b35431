"""Random delay trajectories inside (and beyond) each certified margin.

For every benchmark system and condition the margin alpha* is scaled by
each factor in --factors and --trials random admissible trajectories are
simulated.  Factors below 1 should give no divergences; factors well above
1 show how conservative the certificate is.

    python3 scripts/falsification_campaign.py --trials 50 --factors 0.9 2 4
"""

import argparse
import json
import time
from pathlib import Path

from delaymargin import bibo, margins, simulate
from delaymargin import example as ex


def open_loop_cases():
    for h in ex.H_VALUES:
        g = bibo.compute_gains(ex.delay_system(h))
        sys, pert = ex.perturbed_form(h)
        for th in ("thm31_hinf", "thm31_bibo"):
            yield f"h={h:g}", th, sys, pert, None, margins.max_scaling(th, sys, pert, g)


def closed_loop_cases():
    plant = ex.closed_loop_plant()
    _, _, g = bibo.closed_loop_gains(plant, ex.CONTROLLER)
    pert = ex.unit_band(plant)
    for th in ("thm41_hinf", "thm41_bibo"):
        rep = margins.check(th, plant, pert, g, ex.CONTROLLER)
        yield "closed loop h=2", th, plant, pert, ex.CONTROLLER, rep.alpha_star


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--factors", type=float, nargs="+", default=[0.9, 2.0, 4.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--T", type=float, default=60.0)
    ap.add_argument("--skip-h0", action="store_true", help="h = 0 needs very small steps and dominates runtime")
    ap.add_argument("--out", default="results/falsification.json")
    args = ap.parse_args()

    rows = []
    print(f"{'system':<16} {'condition':<11} {'alpha*':>8} {'factor':>6} {'diverged':>9} {'max gain':>9} {'time':>6}")
    for name, th, sys, pert, ctrl, alpha in [*open_loop_cases(), *closed_loop_cases()]:
        if args.skip_h0 and name == "h=0":
            continue
        for f in args.factors:
            t0 = time.perf_counter()
            s = simulate.falsify_margin(None, sys, pert, trials=args.trials, seed=args.seed,
                                        scaling=f * alpha, T_end=args.T, ctrl=ctrl)
            dt = time.perf_counter() - t0
            print(f"{name:<16} {th:<11} {alpha:>8.4f} {f:>6g} {s.counterexamples:>5}/{args.trials:<3} "
                  f"{s.max_linf_ratio:>9.3f} {dt:>5.1f}s")
            rows.append({"system": name, "condition": th, "alpha_star": alpha, "factor": f, **s.to_dict()})

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2, sort_keys=True, default=str))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
