"""Command line entry point: ``lab <subcommand> [--config FILE] [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import LabError
from .harness import ExperimentConfig, OUT_DIR_ENV, _parse_scalar, load_config, run_experiment


def _key_value(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), _parse_scalar(v)


def _float_list(text: str) -> tuple:
    return tuple(float(t) if "." in t or "e" in t.lower() else int(t) for t in text.split(",") if t)


def build_parser() -> argparse.ArgumentParser:
    from .experiments import REGISTRY

    parser = argparse.ArgumentParser(prog="lab", description="Stochastic Burgers / Cole-Hopf numerical lab.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name, spec in sorted(REGISTRY.items()):
        p = sub.add_parser(name, help=spec.claim, description=spec.claim)
        p.add_argument("--config", help="JSON or key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or ./lab_out)")
        p.add_argument("--dry-run", action="store_true", help="print the claim under test and exit")
        p.add_argument("--K", type=int, help="Fourier cutoff")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--T", type=float, help="time horizon")
        p.add_argument("--replicas", type=int, help="number of replicas")
        p.add_argument("--workers", type=int, help="worker processes for replica blocks")
        p.add_argument("--levels", type=_float_list, help="comma-separated smoothing levels N")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
        p.add_argument("--set", dest="params", type=_key_value, action="append", default=[],
                       metavar="KEY=VALUE", help="experiment-specific parameter (repeatable)")
        if name == "colehopf-test":
            p.add_argument("--L-list", dest="L_levels", type=_float_list, help="smoothing scales L")
            p.add_argument("--K-source", choices=("analytic", "mc"), help="centering constant source")
            p.add_argument("--phi", choices=("sin", "cos", "one_plus_cos", "sin2"), help="test function")
        if name == "sde1d":
            p.add_argument("--potential", choices=("cosine", "zero", "bridge"), help="torus potential B")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.command) if args.config else ExperimentConfig(args.command)
    updates = {k: getattr(args, k) for k in ("seed", "out", "K", "dt", "T", "replicas", "workers", "levels")
               if getattr(args, k, None) is not None}
    if getattr(args, "L_levels", None) is not None:
        updates["L_levels"] = args.L_levels
    params = dict(cfg.params)
    for flag, key in (("K_source", "K_source"), ("phi", "phi"), ("potential", "potential")):
        if getattr(args, flag, None) is not None:
            params[key] = getattr(args, flag)
    params.update(dict(args.params))
    return replace(cfg, **updates, params=params)


def main(argv=None) -> int:
    from .experiments import REGISTRY

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    spec = REGISTRY[args.command]
    if args.dry_run:
        print(f"{args.command}: {spec.claim}")
        print(f"  anchor: {spec.anchor}")
        cfg = config_from_args(args).with_defaults(spec.defaults)
        print(f"  config: {cfg.to_dict()}")
        return 0
    try:
        cfg = config_from_args(args)
        report = run_experiment(cfg, plots=not args.no_plots)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in report.lines():
        print(line)
    out = cfg.output_dir()
    print(f"{'PASS' if report.passed else 'FAIL'}: {args.command} (reports in {out})")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
