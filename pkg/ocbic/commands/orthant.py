import argparse
from enum import StrEnum

import orjson

from ocbic.commands import (
    OutputFormat,
    add_engine_arguments,
    add_format_argument,
    emit,
    engine_from_args,
    format_record,
    parse_json_array,
)
from ocbic.core.mvn import MvnRegionProblem, region_prob_mc, region_prob_qmc


class Engine(StrEnum):
    QMC = 'qmc'
    MC = 'mc'


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('orthant', help='Pr(z > 0) for a multivariate normal z')
    parser.add_argument('--mean', required=True, help='JSON array, e.g. "[0, 0]"')
    parser.add_argument('--covariance', required=True, help='JSON matrix, e.g. "[[1, 0.5], [0.5, 1]]"')
    parser.add_argument('--method', type=Engine, choices=list(Engine), default=Engine.QMC)
    parser.add_argument('--samples', type=int, help='Monte Carlo sample size (mc only)')
    add_engine_arguments(parser)
    add_format_argument(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> None:
    engine = engine_from_args(args)
    problem = MvnRegionProblem(
        mean=parse_json_array(args.mean, what='--mean'),
        covariance=parse_json_array(args.covariance, what='--covariance'),
    )

    if args.method == Engine.MC:
        result = region_prob_mc(problem, n_samples=args.samples, seed=engine.seed)
    else:
        result = region_prob_qmc(problem, points=engine.points, randomizations=engine.randomizations, seed=engine.seed)

    if args.format == OutputFormat.JSON:
        emit(orjson.dumps(result.model_dump(mode='json'), option=orjson.OPT_INDENT_2))
    else:
        emit(format_record(result.model_dump(mode='json')))
