"""Command line entry point.

Subcommands:
  run      --config <path> --out <dir>      execute one scenario
  compare  <dirA> <dirB> --quantity <name> --threshold <x>
  verify   --suite scalar|spinor|fock|all   run the acceptance experiments

Exit codes: 0 success, 2 config error, 3 numerical guard violation,
4 comparison over threshold (and 1 for failed verification suites).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigInvalid, EmreduceError

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_OVER_THRESHOLD = 4


def _cmd_run(args) -> int:
    from .scenario import run_scenario

    try:
        manifest = run_scenario(args.config, args.out)
    except ConfigInvalid as err:
        print(json.dumps(err.to_dict(), sort_keys=True))
        return EXIT_CONFIG
    if manifest["error"] is not None:
        print(json.dumps(manifest["error"], sort_keys=True))
        return EXIT_GUARD
    print(json.dumps({"out": str(args.out), "files": manifest["files"],
                      "summary": manifest["summary"]}, sort_keys=True))
    return EXIT_OK


def _cmd_compare(args) -> int:
    from .scenario import compare_runs

    try:
        report = compare_runs(args.dir_a, args.dir_b, args.quantity, args.threshold)
    except EmreduceError as err:
        print(json.dumps(err.to_dict(), sort_keys=True))
        return EXIT_GUARD
    for row in report["table"]:
        print(f"{row['snapshot']}: rel_diff = {row['rel_diff']:.6e}")
    print(f"max rel_diff = {report['max_rel_diff']:.6e} "
          f"(threshold {args.threshold:g})")
    return EXIT_OK if report["below_threshold"] else EXIT_OVER_THRESHOLD


def _cmd_verify(args) -> int:
    from .verify import run_suite

    try:
        results = run_suite(args.suite)
    except ValueError as err:
        print(str(err))
        return EXIT_CONFIG
    n_fail = sum(0 if r.passed else 1 for r in results)
    total = sum(r.wall_seconds for r in results)
    print(f"\n{len(results) - n_fail}/{len(results)} checks passed "
          f"({total:.0f} s total)")
    return EXIT_OK if n_fail == 0 else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="emreduce",
        description="Matter-free four-potential evolution engines and their "
                    "verification suite.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("--config", required=True, help="TOML scenario file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser("compare", help="compare two run directories")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--quantity", required=True,
                       help="snapshot component label (prefix match, e.g. B)")
    p_cmp.add_argument("--threshold", type=float, required=True)
    p_cmp.set_defaults(fn=_cmd_compare)

    p_ver = sub.add_parser("verify", help="run an acceptance suite")
    p_ver.add_argument("--suite", default="all",
                       choices=["scalar", "spinor", "fock", "all"])
    p_ver.set_defaults(fn=_cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
