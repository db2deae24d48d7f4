"""``maskdiff`` command line.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 resource guard exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import experiments
from .config import ExperimentConfig, parse_seed
from .errors import ConfigError, MaskDiffError, TooLarge

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # the sub-parser copies default to SUPPRESS so they only override when given
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", metavar="PATH", help="experiment config (JSON)", **kw)
    parser.add_argument("--seed", metavar="U64", help="master seed; overrides MASKDIFF_SEED and the config", **kw)
    parser.add_argument("--out", metavar="PATH", help="output file (default: config output, else stdout)", **kw)
    parser.add_argument("--threads", metavar="N", type=int, help="worker threads for Monte Carlo", **kw)
    parser.add_argument("--format", choices=("csv", "json"), help="output format", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskdiff", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.set_defaults(config=None, seed=None, out=None, threads=1, format=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep-t", help="sampling error against the number of steps T")
    _global_flags(p, suppress=True)
    p.add_argument("--T", dest="T_list", type=_int_list, help="comma-separated T values")

    p = sub.add_parser("sweep-j", help="sampling error against the Potts coupling J")
    _global_flags(p, suppress=True)
    p.add_argument("--J", dest="J_list", type=_float_list, help="comma-separated J values")
    p.add_argument("--T", dest="T", type=int, help="number of steps (default: config schedule)")

    p = sub.add_parser("bounds", help="bound report for the configured instance")
    _global_flags(p, suppress=True)

    p = sub.add_parser("verify", help="exact identity and bound checks on brute-force instances")
    _global_flags(p, suppress=True)
    p.add_argument("--scope", choices=("quick", "full"), default="quick")
    p.add_argument("--tamper-alpha", type=float, default=None, help="fault injection: perturb the predictor labelled optimal")

    p = sub.add_parser("sample", help="one sampler run")
    _global_flags(p, suppress=True)
    p.add_argument("--log", metavar="PATH", help="also write the per-step run log (CSV)")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    return cfg.with_seed_overrides(args.seed)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dict_to_csv(d: dict) -> str:
    flat = {k: v for k, v in d.items() if not isinstance(v, (dict, list))}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(flat))
    w.writerow([experiments._fmt(v) for v in flat.values()])
    return buf.getvalue()


def _run_sweep(args, cfg, rows, fit) -> None:
    out = args.out or cfg.output
    if (args.format or "csv") == "json":
        _emit(experiments.rows_to_json(rows, fit), out)
        return
    _emit(experiments.rows_to_csv(rows), out)
    # keep the CSV a plain table; the fit goes to stderr and a sidecar file
    fit_text = json.dumps(fit, indent=2) + "\n"
    sys.stderr.write(fit_text)
    if out:
        Path(str(out) + ".fit.json").write_text(fit_text)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if args.command == "verify":
        seed = parse_seed(args.seed) if args.seed is not None else _load_config(args).seed
        report = experiments.verify(args.scope, seed, args.tamper_alpha)
        fmt = args.format or "json"
        text = experiments.verify_to_csv(report) if fmt == "csv" else json.dumps(report, indent=2) + "\n"
        _emit(text, args.out)
        return EXIT_OK if report["passed"] else EXIT_VERIFY

    cfg = _load_config(args)
    if args.command == "sweep-t":
        rows, fit = experiments.sweep_T(cfg, args.T_list, args.threads)
        _run_sweep(args, cfg, rows, fit)
    elif args.command == "sweep-j":
        rows, fit = experiments.sweep_J(cfg, args.J_list, args.T, args.threads)
        _run_sweep(args, cfg, rows, fit)
    elif args.command == "bounds":
        report = experiments.bounds_report(cfg, args.threads)
        text = _dict_to_csv(report) if args.format == "csv" else json.dumps(report, indent=2) + "\n"
        _emit(text, args.out or cfg.output)
    elif args.command == "sample":
        res = experiments.sample_run(cfg)
        log_csv = res.pop("log_csv")
        if args.log:
            Path(args.log).write_text(log_csv)
        text = log_csv if args.format == "csv" else json.dumps(res, indent=2) + "\n"
        _emit(text, args.out or cfg.output)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = run(argv)
    except ConfigError as exc:
        print(f"maskdiff: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except TooLarge as exc:
        print(f"maskdiff: resource guard exceeded: {exc}", file=sys.stderr)
        code = EXIT_GUARD
    except MaskDiffError as exc:
        print(f"maskdiff: invalid input: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    sys.exit(code)


if __name__ == "__main__":
    main()
