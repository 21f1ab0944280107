import argparse
from pathlib import Path
from typing import Any

from ocbic.commands import (
    OutputFormat,
    add_constraint_arguments,
    add_engine_arguments,
    add_format_argument,
    emit,
    engine_from_args,
    format_record,
)
from ocbic.core.constraints import parse_constraint_sets, parse_constraints
from ocbic.core.errors import ValidationError
from ocbic.core.models import load_fit
from ocbic.core.mvn import RegionProbability
from ocbic.core.ocbic import ConstraintInput, OcBicResult, Variant, evaluate, ocbic_lui_full


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('eval', help='order-constrained BIC of one fitted model')
    parser.add_argument('fit', type=Path, help='fit JSON written by `ocbic fit`')
    add_constraint_arguments(parser)
    parser.add_argument(
        '--fit-term',
        action='store_true',
        help='keep the prior-fit term of the local prior (lui only)',
    )
    parser.add_argument('--null-fit', type=Path, help='refit under the equality null, used with --fit-term')
    add_engine_arguments(parser)
    add_format_argument(parser)
    parser.set_defaults(handler=run)


def _probability(prefix: str, p: RegionProbability | None) -> dict[str, Any]:
    if p is None:
        return {f'{prefix}_prob': None, f'{prefix}_prob_se': None}
    return {f'{prefix}_prob': p.estimate, f'{prefix}_prob_se': p.std_error}


def summarize(result: OcBicResult) -> dict[str, Any]:
    return {
        'label': result.label,
        'variant': result.variant.value,
        'complement': result.complement,
        'ocbic': result.ocbic,
        'bic': result.bic,
        'minus2_loglik': result.minus2_loglik,
        'penalty': result.penalty,
        'log_post_prob': result.log_post_prob,
        **_probability('post', result.post_prob),
        'log_prior_prob': result.log_prior_prob,
        **_probability('prior', result.prior_prob),
        'fit_term': result.fit_term,
        'posterior_constraint_probability': result.posterior_constraint_probability,
        'log_bayes_factor_vs_unconstrained': result.log_bayes_factor,
        'underflow': result.underflow,
    }


def run(args: argparse.Namespace) -> None:
    fitted = load_fit(args.fit)
    engine = engine_from_args(args)
    label = args.fit.stem

    if args.complement and not args.constraints:
        msg = '--complement needs at least one --constraint'
        raise ValidationError(msg)

    sets: ConstraintInput = None
    if args.complement:
        sets = parse_constraint_sets(args.constraints, fitted.coef_names)
    elif args.constraints:
        sets = parse_constraints(args.constraints, fitted.coef_names)

    if args.fit_term:
        if args.variant != Variant.LUI or args.complement or sets is None:
            msg = '--fit-term applies to a lui model with constraints and without --complement'
            raise ValidationError(msg)
        null_fit = load_fit(args.null_fit) if args.null_fit is not None else None
        cs = parse_constraints(args.constraints, fitted.coef_names)
        result = ocbic_lui_full(fitted, cs, null_fit, label=label, engine=engine)
    elif args.null_fit is not None:
        msg = '--null-fit is only used together with --fit-term'
        raise ValidationError(msg)
    else:
        variant = args.variant if sets is not None else Variant.PLAIN
        result = evaluate(fitted, sets, variant, args.complement, label=label, engine=engine)

    if args.format == OutputFormat.JSON:
        emit(result.to_json())
    else:
        emit(format_record(summarize(result)))
