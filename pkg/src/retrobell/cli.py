"""Command line front end: experiments, sweeps, inequality checks and wire demos.

Exit status is 0 on success, 2 on bad arguments and 1 when a check
subcommand (nosignal, translate-check, wire audit) fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .inequalities import bell1964, chsh, correlator_of, local_bound_bruteforce
from .models import (
    AtomLaw,
    RetroModel,
    UniformLaw,
    Variant,
    make_model,
    model_ids,
    nonlocalize,
)
from .signaling import Z_THRESHOLD, lambda_leak, nosignal_scan
from .statistics import run_experiment, sweep
from .wire import Wiring, run_wire_experiment, save_transcript

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_PI_FORM = re.compile(rf"([+-]?)({_NUM})?\*?pi(?:/({_NUM}))?")

RETRO_NOTE = "settings -> lambda -> outcomes; emulates retro-causation, not emission order"


def parse_angle(text: str) -> float:
    """Radians from "0.3", "pi/8", "3*pi/8", "-pi/4" or "2pi/3"."""
    s = text.strip().replace(" ", "").lower()
    m = _PI_FORM.fullmatch(s)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        k = float(m.group(2)) if m.group(2) else 1.0
        den = float(m.group(3)) if m.group(3) else 1.0
        if den == 0:
            raise argparse.ArgumentTypeError(f"malformed angle {text!r}: zero denominator")
        return sign * k * math.pi / den
    try:
        value = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed angle {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"angle must be finite, got {text!r}")
    return value


def parse_grid(text: str) -> list[float]:
    """``start:stop:count`` (inclusive) or a comma-separated list of angles."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid must be start:stop:count, got {text!r}")
        try:
            count = int(parts[2])
        except ValueError:
            raise argparse.ArgumentTypeError(f"grid count must be an integer, got {parts[2]!r}") from None
        if count < 1:
            raise argparse.ArgumentTypeError("grid count must be positive")
        start, stop = parse_angle(parts[0]), parse_angle(parts[1])
        if count == 1:
            return [start]
        return [float(x) for x in np.linspace(start, stop, count)]
    return [parse_angle(p) for p in text.split(",") if p.strip()]


def parse_model(text: str) -> str:
    if text not in model_ids():
        raise argparse.ArgumentTypeError(f"unknown model {text!r}; choose from {', '.join(model_ids())}")
    return text


def parse_seed(text: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return seed


def positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


# --- output ---------------------------------------------------------------


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def _write(args, text: str) -> None:
    if args.output is None:
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)


def emit(args, summary: dict, rows: Optional[list[dict]] = None, rows_key: str = "rows") -> None:
    """CSV writes the table (or the summary as one row); JSON nests both."""
    if args.format == "csv":
        _write(args, _rows_to_csv(rows if rows is not None else [summary]))
    else:
        doc = dict(summary)
        if rows is not None:
            doc[rows_key] = rows
        _write(args, json.dumps(doc, indent=2) + "\n")


# --- subcommands ----------------------------------------------------------


def cmd_list_models(args) -> int:
    rows = []
    for mid in model_ids():
        m = make_model(mid)
        rows.append({"id": mid, "class": type(m).__name__, "reproduces_qm": m.reproduces_qm,
                     "retro_order": m.retro_order})
    emit(args, {"models": len(rows)}, rows, "models")
    return 0


def cmd_simulate(args) -> int:
    model = make_model(args.model)
    res = run_experiment(model, args.a, args.b, args.trials, args.seed,
                         record_hidden=args.record_lambda, workers=args.workers)
    t = res.trials
    rows = []
    for i in range(len(t)):
        row = {"index": int(t.index[i]), "a": float(t.a[i]), "b": float(t.b[i]),
               "A": int(t.A[i]), "B": int(t.B[i])}
        if args.record_lambda:
            row["lambda"] = t.hidden[i].item() if t.hidden is not None else None
        rows.append(row)
    summary = {
        "model": args.model, "a": args.a, "b": args.b, "trials": args.trials, "seed": args.seed,
        "mean_A": res.mean_A.mean, "mean_B": res.mean_B.mean,
        "correlator": res.correlator.mean, "stderr": res.correlator.stderr,
    }
    if model.retro_order:
        summary["simulation_order"] = RETRO_NOTE
    emit(args, summary, rows, "trials")
    return 0


def cmd_sweep(args) -> int:
    model = make_model(args.model)
    try:
        result = sweep(model, args.grid, args.trials, args.seed, workers=args.workers)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    summary = {"model": args.model, "trials": args.trials, "seed": args.seed, "max_abs_z": result.max_abs_z}
    emit(args, summary, result.rows(), "points")
    return 0


def _correlator(args):
    model = make_model(args.model)
    if args.trials is None:
        return correlator_of(model)
    cache = {}

    def estimate(x, y):
        # each distinct pair gets its own stream so the estimates are independent
        if (x, y) not in cache:
            cache[(x, y)] = run_experiment(model, x, y, args.trials, args.seed, stream_id=len(cache)).correlator
        return cache[(x, y)]

    return estimate


def cmd_bell1964(args) -> int:
    r = bell1964(_correlator(args), args.a, args.b, args.c)
    bound = local_bound_bruteforce("bell1964", (args.a, args.b, args.c))
    summary = {"model": args.model, "a": r.a, "b": r.b, "c": r.c, "lhs": r.lhs, "rhs": r.rhs,
               "violated": r.violated, "stderr": r.stderr,
               "local_max_margin": bound.value, "local_witness": list(bound.strategy)}
    emit(args, summary)
    return 0


def cmd_chsh(args) -> int:
    r = chsh(_correlator(args), args.a, args.a2, args.b, args.b2)
    bound = local_bound_bruteforce("chsh", (args.a, args.a2, args.b, args.b2))
    summary = {"model": args.model, "a": r.a, "a2": r.a2, "b": r.b, "b2": r.b2, "S": r.S,
               "stderr": r.stderr, "violated": r.violated,
               "local_max": bound.value, "local_witness": list(bound.strategy)}
    emit(args, summary)
    return 0


def cmd_nosignal(args) -> int:
    model = make_model(args.model)
    scan = nosignal_scan(model, args.fixed_side, args.fixed, args.scan, args.trials, args.seed,
                         reference=args.reference, workers=args.workers)
    passed = scan.passed(args.threshold)
    summary = {"model": args.model, "fixed_side": args.fixed_side, "fixed": args.fixed,
               "trials": args.trials, "seed": args.seed, "max_abs_z": scan.max_abs_z,
               "threshold": args.threshold, "passed": passed}
    emit(args, summary, scan.rows(), "scan")
    return 0 if passed else 1


def cmd_leak(args) -> int:
    retro = RetroModel(Variant.SYMMETRIC)
    summary = {"a0": args.a0, "a1": args.a1, "b": args.b,
               "advantage_lambda": lambda_leak(retro, args.a0, args.a1, args.b, "lambda"),
               "advantage_B": lambda_leak(retro, args.a0, args.a1, args.b, "B")}
    emit(args, summary)
    return 0


def cmd_translate_check(args) -> int:
    retro = RetroModel(Variant.SYMMETRIC)
    translated = nonlocalize(retro)
    values = [k * math.pi / args.points for k in range(args.points)]
    rows = []
    for a in values:
        for b in values:
            rows.append({"a": a, "b": b, "tv": retro.joint(a, b).total_variation(translated.joint(a, b))})
    worst = max(r["tv"] for r in rows)
    passed = worst <= 1e-12
    emit(args, {"points": len(rows), "max_tv": worst, "passed": passed}, rows, "grid")
    return 0 if passed else 1


def _source_law(args):
    if args.wiring == "RETRO":
        return RetroModel(Variant.SYMMETRIC)
    if args.source == "uniform":
        return UniformLaw()
    m = re.fullmatch(r"atoms:(\d+)", args.source)
    if not m or int(m.group(1)) < 1:
        raise argparse.ArgumentTypeError(f"source law must be 'uniform' or 'atoms:K', got {args.source!r}")
    k = int(m.group(1))
    return AtomLaw.build([j * math.pi / k for j in range(k)], [1.0 / k] * k)


def cmd_wire(args) -> int:
    law = _source_law(args)
    run = run_wire_experiment(args.wiring, law, (args.a, args.b), args.trials, args.seed,
                              processes=args.processes, keep_transcript=args.transcript is not None)
    if args.transcript is not None:
        save_transcript(run.transcript, args.transcript)
    t = run.trials
    prod = t.A.astype(np.int64) * t.B
    corr = float(prod.mean()) if len(t) else None
    summary = {"wiring": run.wiring.value, "a": args.a, "b": args.b, "trials": len(t), "seed": args.seed,
               "correlator": corr,
               "stderr": math.sqrt(max(0.0, 1 - corr * corr) / len(t)) if len(t) else None,
               "audit": run.verdict.as_dict()}
    emit(args, summary)
    return 0 if run.verdict.matches else 1


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retrobell", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt="json"):
        sp.add_argument("--format", choices=("csv", "json"), default=fmt)
        sp.add_argument("--output", "-o", default=None, help="file to write (default: stdout)")

    def sampling(sp, trials_default: Optional[int] = 100000, required=False):
        sp.add_argument("--trials", type=positive_int, default=trials_default, required=required)
        sp.add_argument("--seed", type=parse_seed, default=0)

    sp = sub.add_parser("list-models", help="available model ids")
    common(sp)
    sp.set_defaults(func=cmd_list_models)

    sp = sub.add_parser("simulate", help="sample trials at fixed settings")
    sp.add_argument("--model", type=parse_model, required=True)
    sp.add_argument("--a", type=parse_angle, required=True)
    sp.add_argument("--b", type=parse_angle, required=True)
    sampling(sp)
    sp.add_argument("--record-lambda", action="store_true")
    sp.add_argument("--workers", type=positive_int, default=1)
    common(sp, "csv")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="correlator versus separation with exact values and z-scores")
    sp.add_argument("--model", type=parse_model, required=True)
    sp.add_argument("--grid", type=parse_grid, required=True, help="start:stop:count or a,b,c")
    sampling(sp)
    sp.add_argument("--workers", type=positive_int, default=1)
    common(sp, "csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bell1964", help="three-setting inequality (exact unless --trials)")
    sp.add_argument("--model", type=parse_model, required=True)
    for name in ("a", "b", "c"):
        sp.add_argument(f"--{name}", type=parse_angle, required=True)
    sampling(sp, None)
    common(sp)
    sp.set_defaults(func=cmd_bell1964)

    sp = sub.add_parser("chsh", help="four-setting inequality (exact unless --trials)")
    sp.add_argument("--model", type=parse_model, required=True)
    for name in ("a", "a2", "b", "b2"):
        sp.add_argument(f"--{name}", type=parse_angle, required=True)
    sampling(sp, None)
    common(sp)
    sp.set_defaults(func=cmd_chsh)

    sp = sub.add_parser("nosignal", help="marginal scan; exits 1 if max |z| reaches the threshold")
    sp.add_argument("--model", type=parse_model, required=True)
    sp.add_argument("--fixed-side", choices=("A", "B"), default="B")
    sp.add_argument("--fixed", type=parse_angle, default=0.0)
    sp.add_argument("--scan", type=parse_grid, default=[k * math.pi / 8 for k in range(8)])
    sp.add_argument("--reference", type=float, default=None,
                    help="compare with this marginal instead of the pooled mean")
    sp.add_argument("--threshold", type=float, default=Z_THRESHOLD)
    sp.add_argument("--workers", type=positive_int, default=1)
    sampling(sp)
    common(sp)
    sp.set_defaults(func=cmd_nosignal)

    sp = sub.add_parser("leak", help="advantage in guessing the left setting from lambda or from B")
    sp.add_argument("--a0", type=parse_angle, required=True)
    sp.add_argument("--a1", type=parse_angle, required=True)
    sp.add_argument("--b", type=parse_angle, required=True)
    common(sp)
    sp.set_defaults(func=cmd_leak)

    sp = sub.add_parser("translate-check", help="retro model versus its integer-n translation")
    sp.add_argument("--points", type=positive_int, default=5, help="grid points per axis over [0, pi)")
    common(sp)
    sp.set_defaults(func=cmd_translate_check)

    sp = sub.add_parser("wire", help="run trials through source and station endpoints")
    sp.add_argument("--wiring", type=str.upper, choices=[w.value for w in Wiring], required=True)
    sp.add_argument("--source", default="uniform", help="CAUSAL source law: uniform or atoms:K")
    sp.add_argument("--a", type=parse_angle, required=True)
    sp.add_argument("--b", type=parse_angle, required=True)
    sp.add_argument("--processes", action="store_true", help="run each endpoint in its own process")
    sp.add_argument("--transcript", default=None, help="save the NDJSON transcript here")
    sampling(sp, 10000)
    common(sp)
    sp.set_defaults(func=cmd_wire)
    return p


def _check_paths(parser, args) -> None:
    for attr in ("output", "transcript"):
        path = getattr(args, attr, None)
        if path is not None and not Path(path).resolve().parent.is_dir():
            parser.error(f"--{attr}: directory of {path!r} does not exist")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_paths(parser, args)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
