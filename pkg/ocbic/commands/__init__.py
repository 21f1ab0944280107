import argparse
import math
import sys
from collections.abc import Mapping, Sequence
from enum import StrEnum
from typing import Any

import orjson
import pydantic

from ocbic.core.errors import ValidationError
from ocbic.core.ocbic import EngineSettings, Variant


class OutputFormat(StrEnum):
    TSV = 'tsv'
    JSON = 'json'


def add_format_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--format', type=OutputFormat, choices=list(OutputFormat), default=OutputFormat.TSV)


def add_engine_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, help='master seed of every stochastic estimate')
    parser.add_argument('--points', type=int, help='Sobol points per randomization')
    parser.add_argument('--randomizations', type=int, help='independent scramblings of the Sobol sequence')


def add_constraint_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--constraint',
        dest='constraints',
        action='append',
        default=[],
        metavar='EXPR',
        help='order constraint such as "x3 > x2 > x1 > 0"; repeatable',
    )
    parser.add_argument(
        '--complement',
        action='store_true',
        help='evaluate the complement of the union of the --constraint regions',
    )
    parser.add_argument(
        '--variant',
        type=Variant,
        choices=[Variant.LUI, Variant.UI],
        default=Variant.LUI,
        help='prior of the constrained model (default: lui)',
    )


def engine_from_args(args: argparse.Namespace) -> EngineSettings:
    overrides = {name: getattr(args, name) for name in ('seed', 'points', 'randomizations')}
    try:
        return EngineSettings(**{k: v for k, v in overrides.items() if v is not None})
    except pydantic.ValidationError as err:
        error = err.errors()[0]
        msg = f'Invalid engine setting --{error["loc"][0]}: {error["msg"]}'
        raise ValidationError(msg) from err


def parse_floats(text: str, *, what: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as err:
        msg = f'Cannot parse {what} "{text}" as comma-separated numbers'
        raise ValidationError(msg) from err
    if not values or not all(math.isfinite(v) for v in values):
        msg = f'{what} must list finite numbers, got "{text}"'
        raise ValidationError(msg)
    return values


def parse_json_array(text: str, *, what: str) -> Any:  # noqa: ANN401
    try:
        return orjson.loads(text)
    except orjson.JSONDecodeError as err:
        msg = f'{what} is not a JSON array: {err}'
        raise ValidationError(msg) from err


def _cell(value: Any) -> str:  # noqa: ANN401
    if value is None:
        return 'NA'
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f'{value:.10g}'
    return str(value)


def format_record(record: Mapping[str, Any]) -> str:
    return ''.join(f'{key}\t{_cell(value)}\n' for key, value in record.items())


def format_rows(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    lines = ['\t'.join(columns)]
    lines += ['\t'.join(_cell(value) for value in row) for row in rows]
    return '\n'.join(lines) + '\n'


def emit(payload: str | bytes) -> None:
    if isinstance(payload, bytes):
        payload = payload.decode() + '\n'
    sys.stdout.write(payload)
    sys.stdout.flush()
