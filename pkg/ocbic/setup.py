import argparse

from ocbic.commands import compare, evaluate, fit, orthant, simulate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ocbic',
        description='Order-constrained BIC: evidence for inequality-constrained hypotheses.',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in (fit, evaluate, compare, orthant, simulate):
        command.register(subparsers)
    return parser
