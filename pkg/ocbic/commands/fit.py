import argparse
from pathlib import Path

import numpy as np

from ocbic.commands import OutputFormat, add_format_argument, emit, format_rows
from ocbic.core.glm import DesignSpec, Family, fit
from ocbic.core.models import FittedModel, load_csv, save_fit
from ocbic.util.logger import logger


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('fit', help='fit a linear or logistic regression and save it as JSON')
    parser.add_argument('csv', type=Path)
    parser.add_argument('--outcome', required=True)
    parser.add_argument('--predictors', required=True, help='comma-separated predictor columns')
    parser.add_argument('--family', type=Family, choices=list(Family), default=Family.GAUSSIAN)
    parser.add_argument('--no-intercept', dest='intercept', action='store_false')
    parser.add_argument('--standardize', action='store_true', help='z-score the predictors before fitting')
    parser.add_argument('--out', type=Path, required=True, help='where to write the fit JSON')
    add_format_argument(parser)
    parser.set_defaults(handler=run)


def render(fitted: FittedModel, fmt: OutputFormat) -> str | bytes:
    if fmt == OutputFormat.JSON:
        return fitted.to_json()

    errors = np.sqrt(np.diag(fitted.sigma))
    header = f'# loglik={fitted.loglik:.10g} n={fitted.n_obs} d={fitted.n_params} bic={fitted.bic:.10g}\n'
    rows = list(zip(fitted.coef_names, fitted.estimates, errors.tolist(), strict=True))
    return header + format_rows(['term', 'estimate', 'std_error'], rows)


def run(args: argparse.Namespace) -> None:
    predictors = tuple(p.strip() for p in args.predictors.split(',') if p.strip())
    data = load_csv(args.csv, args.outcome, predictors)
    spec = DesignSpec(
        outcome=args.outcome,
        predictors=predictors,
        intercept=args.intercept,
        family=args.family,
        standardize=args.standardize,
    )

    fitted = fit(data, spec)
    path = save_fit(fitted, args.out)
    logger.info(f'Saved {spec.family} fit of {data.n_rows} rows to {path}')
    emit(render(fitted, args.format))
