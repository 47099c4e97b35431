"""Command-line entry point: ``delaymargin {analyze,margin,simulate,reproduce}``.

Exit codes: 0 success (whatever the verdicts), 2 invalid input or
inapplicable theorem, 3 inconclusive stability certificate, 4 numerical
failure.  Verdicts are data in the JSON output, never exit codes.
"""

from __future__ import annotations

import os

# thread caps must be in place before numpy / numba load their pools
_threads = os.environ.get("DELAYMARGIN_THREADS")
if _threads:
    for _var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys as _sys  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, bibo, example, freq, margins, schema, simulate  # noqa: E402
from .config import DEFAULT, Settings  # noqa: E402
from .errors import (  # noqa: E402
    DelayMarginError,
    HypothesisHViolation,
    NoCertificateError,
    PreconditionError,
    SchemaError,
    UnstableSystemError,
    UnsupportedError,
)
from .model import close_loop, validate  # noqa: E402

EXIT_OK, EXIT_INPUT, EXIT_INCONCLUSIVE, EXIT_NUMERIC = 0, 2, 3, 4


class Inconclusive(Exception):
    def __init__(self, payload: dict):
        super().__init__("stability certificate is inconclusive")
        self.payload = payload


# output ---------------------------------------------------------------------


def write_atomic(path: str | Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json(doc) -> str:
    return json.dumps(margins._jsonable(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def emit(doc, out: str | None):
    text = to_json(doc)
    if out:
        write_atomic(out, text)
    else:
        _sys.stdout.write(text)


def render_margin(rep: margins.MarginReport) -> str:
    lines = [f"{rep.theorem}: {rep.verdict}   alpha* = {rep.alpha_star:.6g}"]
    for name, v in rep.conditions.items():
        lines.append(f"  {name:<28} {v:>12.6g}  {'< 1' if v < 1 else '>= 1'}")
    for variant, body in rep.variants.items():
        lines.append(f"  variant {variant}: {body['verdict']}")
        for name, v in body["conditions"].items():
            lines.append(f"    {name:<26} {v:>12.6g}")
    for note in rep.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines) + "\n"


# analysis -------------------------------------------------------------------


@dataclass
class AnalysisReport:
    system_digest: str
    version: str
    validation: dict
    certificate: dict
    gains: dict
    margins: list
    skipped: list
    closed_loop: dict | None = None
    chain_check: dict | None = None
    falsification: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "system_digest": self.system_digest,
            "version": self.version,
            "validation": self.validation,
            "certificate": self.certificate,
            "gains": self.gains,
            "margins": self.margins,
            "skipped": self.skipped,
            "closed_loop": self.closed_loop,
            "chain_check": self.chain_check,
            "falsification": self.falsification,
            "timings": self.timings,
        }


def _which(spec: str) -> tuple:
    parts = {p.strip() for p in spec.split(",") if p.strip()}
    if "all" in parts:
        return ("l2", "linf")
    bad = parts - {"l2", "linf"}
    if bad or not parts:
        raise SchemaError(f"--gains expects l2, linf or all, got {spec!r}")
    return tuple(sorted(parts))


def _theorems_for(sysf: schema.SystemFile, which: tuple) -> list:
    sys = sysf.system
    out = []
    if sysf.controller is None:
        if sys.is_neutral:
            out += ["thm32_neutral_bibo"] if "linf" in which else []
        else:
            out += ["thm31_bibo"] if "linf" in which else []
            out += ["thm31_hinf"] if "l2" in which else []
    else:
        if sys.is_neutral:
            out += ["prop42_neutral_stab"] if "linf" in which else []
        else:
            out += ["thm41_bibo"] if "linf" in which else []
            out += ["thm41_hinf"] if "l2" in which else []
    return out


def analyze(sysf: schema.SystemFile, which=("l2", "linf"), falsify: int = 0, seed: int = 0,
            cfg: Settings = DEFAULT) -> AnalysisReport:
    """validate -> certify -> gains -> every applicable theorem -> optional falsification."""
    sys, pert, ctrl = sysf.system, sysf.perturbation, sysf.controller
    timings = {}
    t0 = time.perf_counter()
    val = validate(sys, pert)
    timings["validate"] = time.perf_counter() - t0
    skipped = []
    rep = AnalysisReport(sysf.digest, __version__, val.to_dict(), {}, {}, [], skipped, timings=timings)
    if not val.passed:
        failed = [c.name for c in val.checks if not c.passed]
        raise PreconditionError(f"validation failed: {', '.join(failed)}")

    chain = None
    if sys.is_neutral and freq.commensurate_base(sys) is not None:
        chain = margins.prop43_check(sys)
        rep.chain_check = chain.to_dict()

    t0 = time.perf_counter()
    target = close_loop(sys, ctrl) if ctrl is not None else sys
    cert = freq.certify_stability(target, cfg)
    timings["certify"] = time.perf_counter() - t0
    rep.certificate = cert.to_dict()
    if cert.verdict == "inconclusive":
        raise Inconclusive(rep.to_dict())
    theorems = _theorems_for(sysf, which)
    if not cert.stable:
        what = "closed loop" if ctrl is not None else "nominal system"
        skipped += [{"theorem": t, "reason": f"{what} is not stable ({cert.reason})"} for t in theorems]
        return rep

    t0 = time.perf_counter()
    if ctrl is not None:
        _, _, gains = bibo.closed_loop_gains(sys, ctrl, which, cfg)
        rep.closed_loop = {"controller": [{"delay": t, "matrix": K.tolist()} for t, K in ctrl.kernel]}
    else:
        gains = bibo.compute_gains(sys, which, cfg, cert)
    timings["gains"] = time.perf_counter() - t0
    rep.gains = gains.to_dict()

    t0 = time.perf_counter()
    reports = []
    for th in theorems:
        try:
            r = margins.check(th, sys, pert, gains, ctrl, cfg)
        except (NoCertificateError, PreconditionError, HypothesisHViolation, UnsupportedError) as exc:
            skipped.append({"theorem": th, "reason": str(exc)})
            continue
        reports.append(r)
        rep.margins.append(r.to_dict())
    timings["margins"] = time.perf_counter() - t0

    if falsify > 0:
        t0 = time.perf_counter()
        for r in reports:
            summary = simulate.falsify_margin(r, sys, pert, trials=falsify, seed=seed, ctrl=ctrl, cfg=cfg)
            rep.falsification.append({"theorem": r.theorem, **summary.to_dict()})
        timings["falsification"] = time.perf_counter() - t0
    return rep


# input signals ----------------------------------------------------------------


def parse_input(spec: str | None):
    """zero | step[:amp[:start]] | sine:amp:omega[:phase] | sweep:amp:lo:hi:duration |
    random:amp:dwell[:seed] | path to a CSV with columns t, u_1..u_p."""
    if not spec or spec == "zero":
        return simulate.ZeroInput()
    head, *rest = spec.split(":")
    try:
        nums = [float(v) for v in rest]
        if head == "step" and len(nums) <= 2:
            return simulate.Step(*nums)
        if head == "sine" and len(nums) in (2, 3):
            return simulate.SineInput(*nums)
        if head == "sweep" and len(nums) == 4:
            return simulate.SineSweep(*nums)
        if head == "random" and len(nums) in (2, 3):
            return simulate.RandomSwitching(nums[0], nums[1], int(nums[2]) if len(nums) == 3 else 0)
    except ValueError:
        raise SchemaError(f"--input: cannot parse {spec!r}") from None
    path = Path(spec)
    if not path.exists():
        raise SchemaError(f"--input: unknown signal {spec!r}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if data.shape[1] < 2:
        raise SchemaError(f"{path}: expected columns t, u_1, ..., u_p")
    return simulate.SampledSignal(tuple(data[:, 0]), tuple(map(tuple, data[:, 1:])))


# commands -------------------------------------------------------------------


def cmd_analyze(args, cfg):
    sysf = schema.load_system(args.system)
    try:
        rep = analyze(sysf, _which(args.gains), args.falsify, args.seed, cfg)
    except Inconclusive as exc:
        emit(exc.payload, args.out)
        raise
    emit(rep.to_dict(), args.out)


def cmd_margin(args, cfg):
    sysf = schema.load_system(args.system)
    sys, pert, ctrl = sysf.system, sysf.perturbation, sysf.controller
    if args.controller:
        ctrl = schema.load_system(args.controller).controller
        if ctrl is None:
            raise SchemaError(f"{args.controller}: no controller found")
    if args.theorem == "prop43":
        emit(margins.prop43_check(sys).to_dict(), args.out)
        return
    if args.theorem not in margins.THEOREMS:
        raise PreconditionError(f"unknown theorem {args.theorem!r}; expected one of {margins.THEOREMS + ('prop43',)}")
    closed = args.theorem in ("thm41_bibo", "thm41_hinf", "prop42_neutral_stab")
    if closed and ctrl is None:
        raise PreconditionError(f"{args.theorem} needs a controller (system file or --controller)")
    if args.theorem in ("thm31_bibo", "thm31_hinf", "thm41_bibo", "thm41_hinf") and sys.is_neutral:
        raise PreconditionError(f"{args.theorem} applies to retarded systems; use thm32_neutral_bibo "
                                "or prop42_neutral_stab for neutral systems")
    if sys.is_neutral and sys.neutral_norm_sum() >= 1:
        raise HypothesisHViolation(f"sum ||A_-l|| = {sys.neutral_norm_sum():.6g} >= 1")
    which = ("l2",) if args.theorem.endswith("hinf") else ("linf",)
    if closed:
        cert = freq.certify_stability(close_loop(sys, ctrl), cfg)
    else:
        cert = freq.certify_stability(sys, cfg)
    if cert.verdict == "inconclusive":
        raise Inconclusive({"theorem": args.theorem, "certificate": cert.to_dict()})
    if not cert.stable:
        emit({"theorem": args.theorem, "certificate": cert.to_dict(), "verdict": "not applicable",
              "reason": f"nominal {'closed loop' if closed else 'system'} is not stable"}, args.out)
        return
    if closed:
        _, _, gains = bibo.closed_loop_gains(sys, ctrl, which, cfg)
    else:
        gains = bibo.compute_gains(sys, which, cfg, cert)
    rep = margins.check(args.theorem, sys, pert, gains, ctrl, cfg)
    if args.format == "text":
        text = render_margin(rep)
        write_atomic(args.out, text) if args.out else _sys.stdout.write(text)
    else:
        emit({**rep.to_dict(), "system_digest": sysf.digest, "version": __version__}, args.out)


def cmd_simulate(args, cfg):
    sysf = schema.load_system(args.system)
    sys = sysf.system
    delays = schema.load_realization(args.delays, sys) if args.delays else None
    signal = parse_input(args.input)
    if args.closed_loop:
        if sysf.controller is None:
            raise PreconditionError("--closed-loop needs a controller in the system file")
        ts = simulate.integrate_closed_loop(sys, sysf.controller, delays, signal, args.T, args.dt, cfg)
    else:
        ts = simulate.integrate(sys, delays, signal, args.T, args.dt, cfg)
    out = Path(args.out)
    tmp = out.with_name(f".{out.name}.tmp")
    ts.to_csv(tmp)
    os.replace(tmp, out)
    summary = {"csv": str(out), "dt": ts.dt, "samples": len(ts.x), "diverged": ts.diverged,
               "blowup_time": ts.blowup_time, "x_linf": ts.linf(), "x_l2": ts.l2()}
    _sys.stdout.write(to_json(summary))


def cmd_reproduce(args, cfg):
    table = example.reproduce(cfg)
    doc = {**table.to_dict(), "version": __version__}
    if args.json:
        write_atomic(args.json, to_json(doc))
    _sys.stdout.write(table.render() + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaymargin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file overriding numerical settings")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="certify, compute gains and evaluate every applicable condition")
    a.add_argument("system")
    a.add_argument("--gains", default="all", help="l2, linf or all (comma separated)")
    a.add_argument("--falsify", type=int, default=0, metavar="TRIALS", help="random delay trials per margin")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(run=cmd_analyze)

    m = sub.add_parser("margin", help="evaluate one condition and its maximal radius scaling")
    m.add_argument("system")
    m.add_argument("--theorem", required=True, help=", ".join(margins.THEOREMS + ("prop43",)))
    m.add_argument("--controller", help="system JSON whose 'controller' field is used")
    m.add_argument("--format", choices=("json", "text"), default="json")
    m.add_argument("--out")
    m.set_defaults(run=cmd_margin)

    s = sub.add_parser("simulate", help="integrate from zero history and write a CSV")
    s.add_argument("system")
    s.add_argument("--delays", help="realization JSON file or inline object")
    s.add_argument("--input", default="zero", help=parse_input.__doc__.replace("\n", " "))
    s.add_argument("--T", type=float, default=10.0)
    s.add_argument("--dt", type=float)
    s.add_argument("--closed-loop", action="store_true", help="apply the controller of the system file")
    s.add_argument("--out", default="trajectory.csv")
    s.set_defaults(run=cmd_simulate)

    r = sub.add_parser("reproduce", help="regenerate the benchmark margin table")
    r.add_argument("--json", help="also write the table as JSON")
    r.set_defaults(run=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = Settings.from_json(args.config) if args.config else DEFAULT
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: --config: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    try:
        args.run(args, cfg)
    except Inconclusive as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INCONCLUSIVE
    except (SchemaError, PreconditionError, HypothesisHViolation, UnsupportedError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except (UnstableSystemError, NoCertificateError, DelayMarginError, FloatingPointError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
