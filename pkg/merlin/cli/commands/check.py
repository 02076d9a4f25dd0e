import argparse

from merlin.verification import format_table, run_checks


def register(subparsers) -> None:
    parser = subparsers.add_parser("check", help="Run the verification battery")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    results = run_checks(args.seed)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return 1
    print(f"All {len(results)} checks passed")
    return 0
