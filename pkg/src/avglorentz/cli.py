"""Command-line entry point for the experiment pipelines.

Exit codes: 0 on success, 1 when a run aborts on an invariant violation
(or the validation suite fails), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys

from .errors import AvgLorentzError, ConfigurationError
from .experiments import EXPERIMENT_KINDS, ScenarioConfig, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="avglorentz",
        description="Averaged-Lorentz dynamics experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=(kind != "validate"),
                       help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the ensemble seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for sweep points")
        p.add_argument("--format", choices=("csv", "json", "both"), default=None,
                       help="override output formats")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            config = ScenarioConfig.from_toml(args.config)
        else:
            config = ScenarioConfig({})
        if config.kind != args.command:
            config = config.with_overrides(experiment__kind=args.command)
        manifest, summary = run_experiment(
            config,
            out_dir=args.out,
            workers=args.workers,
            seed=args.seed,
            formats=args.format,
        )
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except AvgLorentzError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        n_fail = sum(1 for c in summary["checks"] if not c["passed"])
        for c in summary["checks"]:
            status = "pass" if c["passed"] else "FAIL"
            print(f"{status}  {c['name']}: value={c['value']:.3g} tol={c['tol']:.3g}")
        if n_fail:
            print(f"{n_fail} validation check(s) failed", file=sys.stderr)
            return 1
    print(f"done: {len(manifest.files)} file(s), seed={manifest.seed}, "
          f"{manifest.wall_clock_s:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
