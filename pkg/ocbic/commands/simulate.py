import argparse
from pathlib import Path

import pydantic

from ocbic.commands import OutputFormat, add_format_argument, emit, parse_floats
from ocbic.core.errors import ValidationError
from ocbic.core.simulations import Experiment, SimConfig, format_table, run_experiment
from ocbic.util.fs import ensure_parent
from ocbic.util.logger import logger


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('simulate', help='reproduce one of the numerical studies as a table')
    parser.add_argument('experiment', type=Experiment, choices=list(Experiment))
    parser.add_argument('--n-grid', help='comma-separated sample sizes')
    parser.add_argument('--a-grid', help='comma-separated effect sizes')
    parser.add_argument('--replications', type=int, help='data sets per cell (fig3)')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--points', type=int)
    parser.add_argument('--randomizations', type=int)
    parser.add_argument('--oracle-draws', type=int, help='brute-force draws per marginal likelihood (fig4)')
    parser.add_argument('--workers', type=int, help='worker processes (fig3)')
    parser.add_argument('--out', type=Path, help='write the table here instead of stdout')
    add_format_argument(parser)
    parser.set_defaults(handler=run)


def build_config(args: argparse.Namespace) -> SimConfig:
    n_grid = [int(n) for n in parse_floats(args.n_grid, what='--n-grid')] if args.n_grid else None
    a_grid = parse_floats(args.a_grid, what='--a-grid') if args.a_grid else None
    try:
        return SimConfig.for_experiment(
            args.experiment,
            n_grid=n_grid,
            a_grid=a_grid,
            replications=args.replications,
            seed=args.seed,
            points=args.points,
            randomizations=args.randomizations,
            oracle_draws=args.oracle_draws,
            workers=args.workers,
        )
    except pydantic.ValidationError as err:
        msg = f'Invalid simulation settings: {err.errors()[0]["msg"]}'
        raise ValidationError(msg) from err


def run(args: argparse.Namespace) -> None:
    sim = build_config(args)
    table = run_experiment(sim)

    if args.format == OutputFormat.JSON:
        payload = table.to_json(orient='records', double_precision=15) + '\n'
    else:
        payload = format_table(table, sim)

    if args.out is None:
        emit(payload)
        return

    ensure_parent(args.out).write_text(payload, encoding='utf-8')
    logger.info(f'Wrote {len(table)} rows of {sim.experiment} to {args.out}')
