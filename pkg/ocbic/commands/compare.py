import argparse
from pathlib import Path

from ocbic.commands import (
    OutputFormat,
    add_engine_arguments,
    add_format_argument,
    emit,
    engine_from_args,
    format_rows,
    parse_floats,
)
from ocbic.core.ocbic import ComparisonTable, Variant, compare, load_compare_spec


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('compare', help='posterior probabilities of a set of competing models')
    parser.add_argument('spec', type=Path, help='JSON or YAML list of models')
    parser.add_argument(
        '--variant',
        type=Variant,
        choices=[Variant.LUI, Variant.UI],
        default=Variant.LUI,
        help='prior of entries that do not set their own variant',
    )
    parser.add_argument('--prior-probs', help='comma-separated prior model probabilities, uniform if omitted')
    add_engine_arguments(parser)
    add_format_argument(parser)
    parser.set_defaults(handler=run)


def render(table: ComparisonTable) -> str:
    rows = [
        (entry.label, entry.variant.value, entry.ocbic, prior, post)
        for entry, prior, post in zip(table.entries, table.prior_model_probs, table.post_model_probs, strict=True)
    ]
    body = format_rows(['label', 'variant', 'ocbic', 'prior_model_prob', 'post_model_prob'], rows)
    return body + ''.join(f'# advisory: {note}\n' for note in table.advisory)


def run(args: argparse.Namespace) -> None:
    entries = load_compare_spec(args.spec)
    prior_probs = parse_floats(args.prior_probs, what='--prior-probs') if args.prior_probs else None
    table = compare(entries, prior_probs, variant=args.variant, engine=engine_from_args(args))
    emit(table.to_json() if args.format == OutputFormat.JSON else render(table))
