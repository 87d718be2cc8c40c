"""Command line entry point: ``run``, ``validate`` and ``report`` verbs."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .harness import ScenarioError, load_scenario, run_scenario, verify_manifest


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablemkv", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="execute a scenario and write its report")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--particles", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--no-plots", action="store_true")
    v = sub.add_parser("validate", help="parse and validate a scenario without running it")
    v.add_argument("scenario")
    rep = sub.add_parser("report", help="verify a manifest and print its check summary")
    rep.add_argument("manifest")
    return p


def _summary(checks: dict, phases: dict) -> list[str]:
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in sorted(checks.items())]
    for name, ph in phases.items():
        if ph.get("status") != "ok":
            lines.append(f"phase {name} failed: {ph.get('error')}")
    return lines


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "validate":
            sc = load_scenario(args.scenario)
            print(f"ok: scenario {sc.name!r} (schema {sc.schema_version})")
            return 0
        if args.verb == "run":
            if args.threads < 1:
                raise ScenarioError("--threads must be >= 1")
            m = run_scenario(args.scenario, seed=args.seed, particles=args.particles, out=args.out,
                             threads=args.threads, plots=not args.no_plots)
            print("\n".join(_summary(m.checks, m.phases)))
            print(f"output: {m.output_dir}")
            return 0 if m.all_passed else 1
        data, problems = verify_manifest(args.manifest)
        print("\n".join(_summary(data.get("checks", {}), data.get("phases", {}))))
        for prob in problems:
            print(f"integrity: {prob}")
        print(f"files: {len(data.get('files', {}))}, all_passed: {data.get('all_passed')}")
        return 0 if data.get("all_passed") and not problems else 1
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
