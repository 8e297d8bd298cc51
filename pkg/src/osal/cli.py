"""Command-line entry point: ``gen``, ``run`` and ``estimate`` subcommands.

Failures exit with status 1 and print one JSON line to stderr:
``{"error": "<ExceptionType>", "message": "..."}``. Set ``OSAL_VERBOSE=1``
(or ``2``) for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io
from .class_estimation import estimate_unknown_classes
from .harness import SyntheticSpec, generate_synthetic, run_experiment, write_benchmark


def _cmd_gen(args) -> dict:
    spec = SyntheticSpec(
        known_classes=args.known,
        unknown_classes=args.unknown,
        dim=args.dim,
        samples_per_class=args.per_class,
        cluster_separation=args.sep,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    bench = generate_synthetic(spec)
    feat, labels = write_benchmark(bench, args.out)
    return {"features": str(feat), "labels": str(labels), "n_samples": bench.features.n_samples}


def _cmd_run(args) -> dict:
    return run_experiment(args.config, args.out)


def _cmd_estimate(args) -> dict:
    features = io.read_features(args.features)
    labels = io.align_labels(features, io.read_labels(args.labels), args.labels)
    # the labeled pool: every pool row; classes >= k become the collapsed unknown label
    rows = np.flatnonzero(labels.splits == "pool") if args.pool_only else np.arange(features.n_samples)
    result = estimate_unknown_classes(
        features.matrix[rows], labels.true_classes[rows], args.k, args.umax, args.seed, restarts=args.restarts
    )
    return {"u_hat": result.u_hat, "score": result.score}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osal", description="Open-set active learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic open-set benchmark")
    gen.add_argument("--out", required=True)
    gen.add_argument("--known", type=int, required=True)
    gen.add_argument("--unknown", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--sep", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--test-fraction", type=float, default=0.5)
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (overrides output_dir in the config)")
    run.set_defaults(func=_cmd_run)

    est = sub.add_parser("estimate", help="estimate the unknown-class count of a labeled set")
    est.add_argument("--features", required=True)
    est.add_argument("--labels", required=True)
    est.add_argument("--k", type=int, required=True)
    est.add_argument("--umax", type=int, required=True)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--restarts", type=int, default=1)
    est.add_argument("--pool-only", action="store_true", help="ignore rows whose split is 'test'")
    est.set_defaults(func=_cmd_estimate)
    return parser


def main(argv=None) -> int:
    verbosity = os.environ.get("OSAL_VERBOSE", "0")
    level = {"1": logging.INFO, "2": logging.DEBUG}.get(verbosity, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
