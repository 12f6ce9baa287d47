"""``twinbeam`` command line.

Exit codes: 0 success, 2 configuration or argument error, 3 I/O error
(missing or unreadable file, corrupt dataset), 4 analysis validity error
(including a missing calibration run), 5 malformed JSON/CSV input. On
failure a one-line JSON error record is written to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings

from . import io as tio
from . import pipeline
from .conditioning import ConditioningSpec
from .errors import (ConfigParseError, DatasetFormatError, EmptySelectionError,
                     MissingCalibrationError, ParameterError, ValidityError)
from .model import Kind
from .stats import DEFAULT_BOOTSTRAP

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VALIDITY, EXIT_PARSE = 0, 2, 3, 4, 5


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="overrides the config seed / bootstrap seed")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--quiet", action="store_true", help="no summary on stdout, no warnings")
    common.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP,
                        help="bootstrap resamples for standard errors (>= 100)")

    p = argparse.ArgumentParser(prog="twinbeam", description="Twin-beam photon statistics pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one run and persist it")
    s.add_argument("--kind", choices=[k.value for k in Kind])

    a = sub.add_parser("analyze", parents=[common], help="NRF and Fano factors of persisted runs")
    a.add_argument("datasets", nargs="+")

    c = sub.add_parser("condition", parents=[common], help="heralded Fano factor of channel 1")
    c.add_argument("datasets", nargs="+")
    c.add_argument("--q", type=float, help="condition strength (window half-width SD/q)")
    c.add_argument("--center", choices=("control_mean", "absolute", "offset_in_sd"),
                   default="control_mean")
    c.add_argument("--level", type=float, default=0.0)

    w = sub.add_parser("sweep", parents=[common], help="pump, q or window-center sweep")
    w.add_argument("--mode", choices=("pump", "q", "center"), default="pump")
    w.add_argument("--q-values", type=_floats)
    w.add_argument("--deltas", type=_floats, help="window offsets in control SDs")
    w.add_argument("--q", type=float)

    f = sub.add_parser("fit", parents=[common], help="linear NRF fit of a pump-sweep table")
    f.add_argument("points")
    f.add_argument("--k-ratio", type=float, help="eta1/eta2; default: mean of the k column")

    r = sub.add_parser("report", parents=[common], help="print a report as JSON or CSV")
    r.add_argument("report")
    return p


def _need(args, name):
    if getattr(args, name) is None:
        raise ParameterError(f"--{name}", "is required for this command")
    return getattr(args, name)


def _config(args):
    cfg = tio.load_config(_need(args, "config"))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _run(args):
    seed = 0 if args.seed is None else args.seed
    if args.command == "simulate":
        cfg = _config(args)
        rep = pipeline.cmd_simulate(cfg, _need(args, "out"), kind=args.kind)
        return rep, f"wrote {args.out} ({cfg.n_pulses} pulses)"
    if args.command == "analyze":
        cfg = tio.load_config(args.config) if args.config else None
        rep = pipeline.cmd_analyze(args.datasets, _need(args, "out"), B=args.bootstrap,
                                   seed=seed, cfg=cfg)
        return rep, _summary(rep)
    if args.command == "condition":
        if args.q is not None:
            specs = [ConditioningSpec(args.q, args.center, args.level)]
        elif args.config:
            specs = list(tio.load_config(args.config).conditioning)
        else:
            raise ParameterError("--q", "give --q or a config with a conditioning list")
        rep = pipeline.cmd_condition(args.datasets, specs, _need(args, "out"),
                                     B=args.bootstrap, seed=seed)
        return rep, _summary(rep)
    if args.command == "sweep":
        cfg = _config(args)
        rep = pipeline.cmd_sweep(cfg, _need(args, "out"), mode=args.mode, B=args.bootstrap,
                                 q_values=args.q_values, deltas=args.deltas, q=args.q)
        return rep, f"wrote {args.out} and {pipeline.sibling_report_path(args.out)}"
    if args.command == "fit":
        rep = pipeline.cmd_fit(args.points, _need(args, "out"), k_ratio=args.k_ratio, seed=seed)
        return rep, _summary(rep)
    if args.command == "report":
        text = pipeline.cmd_report(args.report, args.format, args.out)
        if args.out is None:
            sys.stdout.write(text)
        return None, None
    raise ParameterError("command", f"unknown command {args.command!r}")


def _summary(report):
    rows = []
    pipeline.flatten_estimates("", report["results"], rows)
    return "\n".join(f"{name} = {v:.6g} +- {se:.2g}" for name, v, se, _ in rows
                     if v is not None and se is not None and not name.startswith("fit."))


def _classify(exc):
    if isinstance(exc, ConfigParseError):
        return EXIT_PARSE
    if isinstance(exc, ParameterError):
        return EXIT_CONFIG
    if isinstance(exc, (MissingCalibrationError, ValidityError, EmptySelectionError)):
        return EXIT_VALIDITY
    if isinstance(exc, (OSError, DatasetFormatError)):
        return EXIT_IO
    return None


def error_record(exc, code) -> dict:
    rec = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    if isinstance(exc, ParameterError):
        rec["field"] = exc.field
    if isinstance(exc, MissingCalibrationError):
        rec["needed"] = exc.needed
    if isinstance(exc, OSError) and exc.filename is not None:
        rec["path"] = str(exc.filename)
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            _, summary = _run(args)
    except Exception as exc:
        code = _classify(exc)
        if code is None:
            raise
        sys.stderr.write(json.dumps(error_record(exc, code)) + "\n")
        return code
    if summary and not args.quiet:
        print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
