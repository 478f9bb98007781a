"""``vargram compare|study|select|estimate --config <path>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, VargramError
from .experiments import run_estimate, run_full_study, run_gramian_compare, run_select

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = ("compare", "study", "select", "estimate")


def build_parser():
    p = argparse.ArgumentParser(prog="vargram", description="Observability Gramians, Lyapunov verdicts, "
                                "sensor selection and state estimation from a config file.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config (YAML or JSON)")
    p.add_argument("--out", default=None, help="output directory (overrides the config's outputs)")
    p.add_argument("--seed", type=int, default=None, help="seed for guess perturbation and noise")
    p.add_argument("--no-empirical", action="store_true", help="skip the empirical Gramian")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _diagnostic(kind, exc):
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    path = getattr(exc, "path", None)
    if path:
        doc["field"] = path
    step = getattr(exc, "step_index", None)
    if step is not None:
        doc["step_index"] = step
    print(json.dumps(doc), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = args.out or cfg.outputs
        if args.command == "compare":
            res = run_gramian_compare(cfg, out, args.no_empirical)
        elif args.command == "study":
            res = run_full_study(cfg, out, args.no_empirical)
            res = {"status": res["status"], "stages_completed": res["stages_completed"]}
        elif args.command == "select":
            res = {"stages": [(s["r"], s["order"]) for s in run_select(cfg, out)["stages"]]}
        else:
            res = run_estimate(cfg, out)
    except ConfigError as exc:
        _diagnostic("config", exc)
        return EXIT_CONFIG
    except VargramError as exc:
        _diagnostic("numerical", exc)
        return EXIT_NUMERICAL
    print(json.dumps(res, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
