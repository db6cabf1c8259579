"""Command-line interface: ``tvarcp detect | simulate | experiment``.

Exit codes: 0 success, 2 input or argument parse error, 3 configuration
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .harness import ExperimentSpec, default_threads, format_report, get_model, run_experiment
from .likelihood import FitError
from .pipeline import DEFAULT_LEVELS, DetectorConfig, detect
from .refine import RefineError
from .scan import ScanConfigError, dump_scan_tsv, maximal_diffs
from .tvar import SpecError, load_spec, simulate

EXIT_PARSE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

# option name -> (type, default); read from --config files and flags alike
OPTIONS = {
    "h": (int, None),
    "htilde": (int, None),
    "pmax": (int, 4),
    "qmax": (int, 2),
    "alpha": (float, None),
    "bootstrap_b": (int, 1000),
    "seed": (int, 0),
    "radii_mode": (str, "formula"),
    "threads": (int, None),
    "reps": (int, 200),
    "t": (int, None),
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _log(msg: str):
    print(msg, file=sys.stderr)


# -- io --------------------------------------------------------------------------------------

def read_series(path: str) -> np.ndarray:
    """One numeric column; a non-numeric first line is taken as a header."""
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc}") from None
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if lines:
        try:
            float(lines[0])
        except ValueError:
            lines = lines[1:]
    vals = []
    for i, ln in enumerate(lines, start=1):
        try:
            v = float(ln)
        except ValueError:
            raise CliError(EXIT_PARSE, f"line {i}: not a number: {ln!r}") from None
        if not math.isfinite(v):
            raise CliError(EXIT_PARSE, f"line {i}: non-finite value")
        vals.append(v)
    if not vals:
        raise CliError(EXIT_PARSE, "input contains no observations")
    return np.array(vals)


def write_series(x, path: str | None):
    body = "x\n" + "".join(f"{float(v)!r}\n" for v in x)
    _emit(body, path)


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(doc) -> str:
    # floats are written in shortest round-trip form, which reproduces the
    # binary value exactly
    return json.dumps(_clean(doc), indent=2, sort_keys=False, ensure_ascii=False) + "\n"


def _emit(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- configuration ------------------------------------------------------------------------------

def read_config(path: str) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment; ``alpha`` may list levels."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_CONFIG, f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise CliError(EXIT_CONFIG, f"{path}:{n}: unknown key {key!r}")
        typ = OPTIONS[key][0]
        try:
            if key == "alpha":
                out[key] = [float(v) for v in val.replace(",", " ").split()]
            else:
                out[key] = typ(val)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"{path}:{n}: bad value for {key}: {val!r}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config-file values over built-in defaults."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, (_, default) in OPTIONS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in conf:
            out[key] = conf[key]
        else:
            out[key] = default
    out["alpha"] = tuple(out["alpha"]) if out["alpha"] else DEFAULT_LEVELS
    if out["threads"] is None:
        out["threads"] = default_threads()
    return out


def _detector(opts) -> DetectorConfig:
    try:
        return DetectorConfig(h=opts["h"], h_tilde=opts["htilde"], radii_mode=opts["radii_mode"],
                              pmax=opts["pmax"], qmax=opts["qmax"], levels=opts["alpha"],
                              bootstrap_b=opts["bootstrap_b"], seed=opts["seed"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


# -- commands -------------------------------------------------------------------------------------

def cmd_detect(args) -> int:
    opts = resolve(args)
    x = read_series(args.input)
    if opts["radii_mode"] not in ("formula", "table"):
        raise CliError(EXIT_CONFIG, "radii mode must be 'formula' or 'table'")
    config = _detector(opts)
    try:
        result = detect(x, config)
    except (ScanConfigError, SpecError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except (FitError, RefineError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_NUMERIC, f"numerical failure: {exc}") from None
    if args.dump_scan:
        D, D1 = maximal_diffs(x, result.scan)
        dump_scan_tsv(args.dump_scan, D, D1)
    for w in result.warnings:
        _log(f"warning: {w}")
    _log(f"detected {result.m} change-point(s) in {len(x)} observations")
    _emit(dumps(result.to_dict()), args.output)
    return 0


def cmd_simulate(args) -> int:
    opts = resolve(args)
    try:
        if args.spec:
            try:
                text = Path(args.spec).read_text(encoding="utf-8")
            except OSError as exc:
                raise CliError(EXIT_CONFIG, f"cannot read spec {args.spec}: {exc}") from None
            spec = load_spec(text)
            if opts["t"] is not None and opts["t"] != spec.T:
                raise CliError(EXIT_CONFIG, "--t conflicts with the length in the spec file")
            x = simulate(spec, opts["seed"])
        else:
            if args.model is None:
                raise CliError(EXIT_CONFIG, "give --model N or --spec PATH")
            model = get_model(args.model)
            T = opts["t"] or model.T
            if T < 16:
                raise CliError(EXIT_CONFIG, "--t must be at least 16")
            x = model.simulate(opts["seed"], T)
    except SpecError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    write_series(x, args.output)
    return 0


def cmd_experiment(args) -> int:
    opts = resolve(args)
    try:
        get_model(args.model)
        spec = ExperimentSpec(model=args.model, replications=opts["reps"], seed=opts["seed"], T=opts["t"],
                              h=opts["h"], h_tilde=opts["htilde"], radii_mode=opts["radii_mode"],
                              bootstrap_b=opts["bootstrap_b"], levels=opts["alpha"], pmax=opts["pmax"],
                              qmax=opts["qmax"], threads=opts["threads"])
        if spec.bootstrap_b < 100:
            raise ValueError("bootstrap B must be at least 100")
    except (SpecError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    _log(f"running {spec.replications} replication(s) of model {spec.model} on {opts['threads']} worker(s)")
    report = run_experiment(spec, opts["threads"])
    table = format_report(report)
    _emit(dumps(report.to_dict()), args.output)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    elif args.output and args.output != "-":
        Path(args.output).with_suffix(".txt").write_text(table, encoding="utf-8")
    else:
        sys.stderr.write(table)
    return 0


# -- parser -------------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--h", type=int, help="jump window radius (even)")
    p.add_argument("--htilde", type=int, help="kink window radius (even)")
    p.add_argument("--pmax", type=int, help="largest AR order (default 4)")
    p.add_argument("--qmax", type=int, help="largest curve degree (default 2)")
    p.add_argument("--alpha", type=float, action="append",
                   help="confidence level, repeatable (default 0.80, 0.90, 0.95)")
    p.add_argument("--bootstrap-b", dest="bootstrap_b", type=int, help="bootstrap replicates (default 1000)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--radii-mode", dest="radii_mode", choices=("formula", "table"),
                   help="window radii from the rule-of-thumb formula or the calibration table")
    p.add_argument("--threads", type=int, help="worker processes (default: environment or CPU count)")
    p.add_argument("--config", help="key = value file; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvarcp", description="Change-point detection for piecewise tvAR processes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect change-points in a series")
    d.add_argument("input", help="CSV file with one numeric column ('-' for stdin)")
    _common(d)
    d.add_argument("--output", help="JSON result path (default stdout)")
    d.add_argument("--dump-scan", dest="dump_scan", help="write the scan statistics as TSV")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="simulate a series from a model or spec file")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--model", type=int, help="built-in model 1..9")
    g.add_argument("--spec", help="model spec file")
    s.add_argument("--t", type=int, help="series length")
    s.add_argument("--seed", type=int, help="random seed (default 0)")
    s.add_argument("--output", help="CSV path (default stdout)")
    s.add_argument("--config", help="key = value file; flags take precedence")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", help="Monte-Carlo study of a built-in model")
    e.add_argument("--model", type=int, required=True, help="built-in model 1..9")
    e.add_argument("--reps", type=int, help="replications (default 200)")
    e.add_argument("--t", type=int, help="series length (default: the model's)")
    _common(e)
    e.add_argument("--output", help="JSON report path (default stdout)")
    e.add_argument("--table", help="text table path (default: next to --output, else stderr)")
    e.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _log(f"error: {exc}")
        return exc.code
    except (ScanConfigError, SpecError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
