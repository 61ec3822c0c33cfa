"""Command line entry point: ``koopnet {bench,transfer,certify,fit,predict}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import config as C
from .benchmarks import ConfigError
from .experiments import (run_benchmark, run_certify, run_fit, run_predict, run_transfer,
                          write_json, write_outputs)
from .predict import trajectory_to_csv
from .systems import Trajectory

log = logging.getLogger("koopnet")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopnet", description="Modular Koopman surrogates of interconnected systems.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("bench", "learner comparison on a benchmark network"),
                        ("transfer", "reuse and partial refit after a topology change"),
                        ("certify", "error-bound certificate of a benchmark network"),
                        ("fit", "fit one learner and save model.json"),
                        ("predict", "roll out a saved model")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file (defaults are used for missing fields)")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        raw = C.load(args.config) if args.config else {}
        cfg = C.resolve(args.command, raw, args.seed)
        if args.print_config:
            json.dump(cfg, sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
            return 0
        cfg.pop("derived_seeds")
        os.makedirs(args.out, exist_ok=True)
        if args.command == "bench":
            res = run_benchmark(cfg, jobs=args.jobs)
            write_outputs(res, args.out, cfg)
        elif args.command == "transfer":
            res = run_transfer(cfg, jobs=args.jobs)
            write_outputs(res, args.out, cfg)
        elif args.command == "certify":
            cert = run_certify(cfg)
            write_json(cert, os.path.join(args.out, "certificate.json"))
            print(f"regime: {cert['regime']}")
        elif args.command == "fit":
            model = run_fit(cfg)
            write_json(model.to_dict(), os.path.join(args.out, "model.json"))
        elif args.command == "predict":
            res, times, states = run_predict(cfg)
            write_outputs(res, args.out, cfg)
            model_dims = _dims_of(cfg)
            trajectory_to_csv(Trajectory(times, states), model_dims, os.path.join(args.out, "trajectory.csv"))
        log.info("wrote outputs to %s", args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _dims_of(cfg) -> tuple:
    from .benchmarks import make_benchmark
    return make_benchmark(cfg["benchmark"]).dims


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
