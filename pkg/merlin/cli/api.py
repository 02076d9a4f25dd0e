import argparse

from merlin.cli.commands import check, evaluate, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="merlin", description="MERLIN agents on the memory game")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (train, evaluate, check):
        command.register(subparsers)
    return parser
