"""Constraint strings such as ``class > education > income > 0`` and their matrix form.

A string is parsed into a `ConstraintExpr` (chains of groups separated by ``<``/``>``)
and then expanded into the augmented representation ``R theta > r`` over the
coefficients of a fitted model. Several chains may be joined with ``&``.
"""

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Self

import numpy as np
import orjson
import pyparsing as pp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ocbic.core.errors import ConstraintSyntaxError, ValidationError
from ocbic.util.logger import logger


DEDUP_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Term:
    name: str | None = None
    value: float | None = None

    @property
    def is_literal(self) -> bool:
        return self.name is None


@dataclass(frozen=True)
class Group:
    terms: tuple[Term, ...]
    position: int


@dataclass(frozen=True)
class Chain:
    groups: tuple[Group, ...]
    comparators: tuple[str, ...]

    def pairs(self) -> Iterable[tuple[Term, Term]]:
        for left, comparator, right in zip(self.groups, self.comparators, self.groups[1:], strict=False):
            for a in left.terms:
                for b in right.terms:
                    yield (a, b) if comparator == '>' else (b, a)


@dataclass(frozen=True)
class ConstraintExpr:
    text: str
    chains: tuple[Chain, ...]

    @property
    def names(self) -> list[str]:
        seen: dict[str, None] = {}
        for chain in self.chains:
            for group in chain.groups:
                for term in group.terms:
                    if term.name is not None:
                        seen[term.name] = None
        return list(seen)

    def satisfied_by(self, values: Mapping[str, float]) -> bool:
        def resolve(term: Term) -> float:
            return values[term.name] if term.name is not None else float(term.value)  # type: ignore[arg-type]

        return all(resolve(a) > resolve(b) for chain in self.chains for a, b in chain.pairs())


def _build_grammar() -> pp.ParserElement:
    identifier = pp.Regex(r'[A-Za-z_][A-Za-z0-9_.]*').set_name('identifier')
    number = pp.Regex(r'[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?').set_name('number')

    identifier.set_parse_action(lambda t: Term(name=t[0]))
    number.set_parse_action(lambda t: Term(value=float(t[0])))
    term = number | identifier

    def bare_group(loc: int, toks: pp.ParseResults) -> Group:
        return Group(terms=(toks[0],), position=loc)

    def paren_group(s: str, loc: int, toks: pp.ParseResults) -> Group:
        terms = tuple(toks)
        if not terms:
            raise pp.ParseFatalException(s, loc, 'empty group')
        if len(terms) > 1 and any(t.is_literal for t in terms):
            raise pp.ParseFatalException(s, loc, 'numeric literals are only allowed as singleton groups')
        return Group(terms=terms, position=loc)

    plain = term.copy().add_parse_action(bare_group)
    parenthesized = (
        pp.Suppress('(') + pp.Optional(pp.DelimitedList(term)) + pp.Suppress(')')
    ).set_parse_action(paren_group)
    group = (parenthesized | plain).set_name('group')

    comparator = pp.one_of('< >').set_name('comparator')
    chain = pp.Group(group + pp.OneOrMore(comparator + group)).set_name('chain')
    return pp.DelimitedList(chain, delim='&') + pp.StringEnd()


_GRAMMAR = _build_grammar()


def _validate_chain(text: str, chain: Chain) -> None:
    literals = [g for g in chain.groups if g.terms[0].is_literal]
    if len(literals) == len(chain.groups):
        raise ConstraintSyntaxError('chain contains no parameter', text, chain.groups[0].position)
    if len(literals) > 1:
        msg = 'at most one numeric literal per chain (literal-only comparisons are not allowed)'
        raise ConstraintSyntaxError(msg, text, literals[1].position)


def parse_expression(text: str) -> ConstraintExpr:
    try:
        parsed = _GRAMMAR.parse_string(text, parse_all=True)
    except pp.ParseBaseException as err:
        raise ConstraintSyntaxError(f'malformed constraint: {err.msg}', text, err.loc) from err

    chains: list[Chain] = []
    for tokens in parsed:
        groups = tuple(t for t in tokens if isinstance(t, Group))
        comparators = tuple(t for t in tokens if isinstance(t, str))
        chain = Chain(groups=groups, comparators=comparators)
        _validate_chain(text, chain)
        chains.append(chain)

    return ConstraintExpr(text=text, chains=tuple(chains))


class ConstraintSet(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    coeff_matrix: list[list[float]] = Field(alias='R')
    bounds: list[float] = Field(alias='r')
    param_names: list[str] = Field(alias='names')
    source_text: list[str] = Field(default_factory=list, alias='source')

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if not self.coeff_matrix:
            msg = 'A constraint set needs at least one row.'
            raise ValueError(msg)

        if len(self.bounds) != len(self.coeff_matrix):
            msg = f'R has {len(self.coeff_matrix)} rows but r has {len(self.bounds)} entries.'
            raise ValueError(msg)

        width = len(self.param_names)
        for i, row in enumerate(self.coeff_matrix):
            if len(row) != width:
                msg = f'Row {i} of R has {len(row)} columns, expected {width}.'
                raise ValueError(msg)
            if not any(row):
                msg = f'Row {i} of R is all zero.'
                raise ValueError(msg)

        if len(set(self.param_names)) != width:
            msg = 'Parameter names must be unique.'
            raise ValueError(msg)

        if len(_unique_rows(self.R, self.r)) != len(self.bounds):
            msg = 'Constraint rows must be unique.'
            raise ValueError(msg)

        return self

    @property
    def R(self) -> np.ndarray:  # noqa: N802
        return np.asarray(self.coeff_matrix, dtype=float)

    @property
    def r(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)

    @property
    def n_constraints(self) -> int:
        return len(self.bounds)

    def satisfied_by(self, theta: np.ndarray) -> np.ndarray:
        return np.all(np.asarray(theta) @ self.R.T > self.r, axis=-1)

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(by_alias=True), option=orjson.OPT_INDENT_2)

    @classmethod
    def from_json(cls, data: bytes | str) -> Self:
        return cls.model_validate(orjson.loads(data))


def _unique_rows(R: np.ndarray, r: np.ndarray) -> list[int]:
    augmented = np.column_stack([R, r])
    scaled = augmented / np.max(np.abs(augmented), axis=1, keepdims=True)

    kept: list[int] = []
    for i, row in enumerate(scaled):
        if any(np.max(np.abs(row - scaled[j])) <= DEDUP_TOLERANCE for j in kept):
            continue
        kept.append(i)
    return kept


def _expression_rows(expr: ConstraintExpr, columns: Mapping[str, int]) -> list[tuple[np.ndarray, float]]:
    rows: list[tuple[np.ndarray, float]] = []
    for chain in expr.chains:
        for group in chain.groups:
            for term in group.terms:
                if term.name is not None and term.name not in columns:
                    msg = f'unknown parameter "{term.name}"'
                    raise ConstraintSyntaxError(msg, expr.text, group.position)

        for a, b in chain.pairs():
            # a > b  <=>  (coef(a) - coef(b)) theta > lit(b) - lit(a)
            row = np.zeros(len(columns))
            bound = 0.0
            if a.name is not None:
                row[columns[a.name]] += 1.0
            else:
                bound -= float(a.value)  # type: ignore[arg-type]
            if b.name is not None:
                row[columns[b.name]] -= 1.0
            else:
                bound += float(b.value)  # type: ignore[arg-type]
            rows.append((row, bound))
    return rows


def parse_constraints(texts: Sequence[str], coef_names: Sequence[str]) -> ConstraintSet:
    """Parse constraint strings into one `ConstraintSet` whose rows must all hold jointly.

    Columns follow ``coef_names``; parameters that no string mentions get zero columns.
    """
    if not texts:
        msg = 'No constraint strings given.'
        raise ValidationError(msg)
    if len(set(coef_names)) != len(coef_names):
        msg = 'Coefficient names must be unique.'
        raise ValidationError(msg)

    columns = {name: i for i, name in enumerate(coef_names)}
    rows: list[tuple[np.ndarray, float]] = []
    for text in texts:
        rows.extend(_expression_rows(parse_expression(text), columns))

    nonzero = [(row, bound) for row, bound in rows if np.any(row)]
    if len(nonzero) < len(rows):
        logger.warning(f'Dropped {len(rows) - len(nonzero)} degenerate constraint rows {texts=}')
    if not nonzero:
        msg = f'All constraints in {list(texts)} are degenerate.'
        raise ValidationError(msg)

    R = np.array([row for row, _ in nonzero])
    r = np.array([bound for _, bound in nonzero])
    kept = _unique_rows(R, r)
    if len(kept) < len(nonzero):
        logger.debug(f'Removed {len(nonzero) - len(kept)} duplicate constraint rows')

    return ConstraintSet(
        R=R[kept].tolist(),
        r=r[kept].tolist(),
        names=list(coef_names),
        source=list(texts),
    )


def parse_constraint_sets(texts: Sequence[str], coef_names: Sequence[str]) -> list[ConstraintSet]:
    return [parse_constraints([text], coef_names) for text in texts]


def constraint_set_from_dict(data: Mapping[str, Any]) -> ConstraintSet:
    try:
        return ConstraintSet.model_validate(data)
    except ValueError as err:
        msg = f'Invalid constraint set: {err}'
        raise ValidationError(msg) from err
