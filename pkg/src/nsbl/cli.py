"""Command-line pipeline driver.

Verbs: ``generate-data``, ``sample``, ``learn``, ``report``; each takes
``--config <path>``, ``--experiment <id>``, ``--seed <u64>`` and
``--out <dir>``.  Exit codes: 0 success, 2 configuration error,
3 missing/stale artifact, 4 numerical failure.
"""

import argparse
import json
import sys

from . import pipeline
from .exceptions import (
    ChainDiagnosticError,
    ConfigError,
    DivergenceError,
    EvaluationError,
    InvalidInputError,
    MissingArtifactError,
    OptimizationError,
    SingularityError,
)
from .experiments import EXPERIMENT_IDS

_STAGES = {
    "generate-data": pipeline.generate_data,
    "sample": pipeline.sample,
    "learn": pipeline.learn,
    "report": pipeline.report,
}

_NUMERICAL = (SingularityError, DivergenceError, EvaluationError,
              ChainDiagnosticError, OptimizationError, InvalidInputError)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nsbl",
        description=("Evidence-based relevance determination pipeline for "
                     "the aeroelastic limit-cycle case study."),
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in _STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", default=None,
                       help="JSON config path (defaults are used if omitted)")
        p.add_argument("--experiment", default=None, choices=EXPERIMENT_IDS,
                       help="experiment id (required for all but generate-data)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the stage seed from the config")
        p.add_argument("--out", default="out", help="output root directory")
    dump = sub.add_parser("show-config",
                          help="print the resolved configuration and its hash")
    dump.add_argument("--config", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = pipeline.load_config(args.config)
        if args.stage == "show-config":
            print(json.dumps(config, indent=2, sort_keys=True))
            print(f"# config hash: {pipeline.config_hash(config)}",
                  file=sys.stderr)
            return 0
        if args.stage == "generate-data":
            result = pipeline.generate_data(config, args.out, seed=args.seed)
        else:
            if args.experiment is None:
                print(f"error: --experiment is required for {args.stage}",
                      file=sys.stderr)
                return 2
            result = _STAGES[args.stage](config, args.experiment, args.out,
                                         seed=args.seed)
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except MissingArtifactError as err:
        print(f"artifact error: {err}", file=sys.stderr)
        return 3
    except _NUMERICAL as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
