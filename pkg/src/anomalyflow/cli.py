"""Command line interface: ``anomalyflow {verify-identities,run,oracle,init}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .experiment import TEMPLATE, ExperimentSpec, load_spec, run_experiment, run_oracle
from .identities import run_identities


def _dims(text):
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got {text!r}")
    if not set(dims) <= {3, 4, 5, 6}:
        raise argparse.ArgumentTypeError("dimensions must lie in {3, 4, 5, 6}")
    return dims


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _spec(args) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec.from_dict(yaml.safe_load(TEMPLATE))
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.out = args.out
    if args.emit_snapshots is not None:
        spec.emit_snapshots = args.emit_snapshots
    if args.dims is not None:
        spec.identities["dims"] = args.dims
    if args.trials is not None:
        spec.identities["trials"] = args.trials
    return spec.validate()


def cmd_verify_identities(seed, dims, trials, out=None, stream=None):
    """Run the identity suite; returns the exit code (0 iff every identity passes)."""
    stream = stream or sys.stdout
    results, seconds = run_identities(seed, tuple(dims), trials)
    for r in results:
        print(r.line(), file=stream)
    failed = [r for r in results if not r.passed]
    skipped = sum(r.skipped for r in results)
    print(f"{len(results) - len(failed) - skipped} passed, {len(failed)} failed, {skipped} skipped"
          f" in {seconds:.1f}s", file=stream)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        report = {"seed": seed, "dims": list(dims), "trials": trials, "seconds": seconds,
                  "results": [r.to_dict() for r in results]}
        (Path(out) / "identities.json").write_text(json.dumps(report, indent=2) + "\n")
    return 1 if failed else 0


def cmd_run(spec: ExperimentSpec, stream=None):
    """Run a flow experiment; mathematical breakdown is reported, not an error."""
    stream = stream or sys.stdout
    summary, _, _ = run_experiment(spec)
    keys = ["status", "t_final", "steps", "speed_ratio", "empirical_rate", "max_principle_drift",
            "final_stationary_residual", "final_M"]
    for k in keys:
        if k in summary:
            print(f"{k}: {summary[k]}", file=stream)
    if "breakdown" in summary:
        print(f"breakdown: {summary['breakdown']}", file=stream)
    if "oracle" in summary:
        print(f"oracle: {summary['oracle']}", file=stream)
    return 0


def cmd_oracle(spec: ExperimentSpec, stream=None):
    stream = stream or sys.stdout
    report, orc = run_oracle(spec)
    for i, r in enumerate(report["history"]):
        print(f"iteration {i}: residual {r:.3e}", file=stream)
    if orc is None:
        print(f"oracle failed: {report['failure']}", file=stream)
        return 1
    print(f"c = {orc.c:.17g}", file=stream)
    return 0


def cmd_init(path=None, stream=None):
    stream = stream or sys.stdout
    if path is None:
        stream.write(TEMPLATE)
        return 0
    p = Path(path)
    if p.exists():
        print(f"refusing to overwrite {p}", file=sys.stderr)
        return 2
    p.write_text(TEMPLATE)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment configuration (YAML)")
    common.add_argument("--seed", type=_seed, help="seed for random metrics and forms")
    common.add_argument("--dims", type=_dims, help="comma separated dimensions for the identity suite")
    common.add_argument("--trials", type=int, help="random trials per identity and dimension")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--emit-snapshots", type=int, metavar="N", help="snapshot every N output rows")
    parser = argparse.ArgumentParser(prog="anomalyflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-identities", parents=[common], help="randomized identity checks")
    sub.add_parser("run", parents=[common], help="integrate a flow experiment")
    sub.add_parser("oracle", parents=[common], help="Newton solve for the Ricci-flat potential")
    sub.add_parser("init", parents=[common], help="write a commented configuration template")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init":
            return cmd_init(args.config)
        spec = _spec(args)
        if args.command == "verify-identities":
            if args.trials is not None and args.trials < 0:
                raise ValueError("trials must be non-negative")
            ids = spec.identities
            return cmd_verify_identities(spec.seed, ids.get("dims", [3, 4, 5]), ids.get("trials", 50), args.out)
        if args.command == "run":
            return cmd_run(spec)
        return cmd_oracle(spec)
    except (OSError, ValueError, yaml.YAMLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
