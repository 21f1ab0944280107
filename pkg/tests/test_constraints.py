import numpy as np
import pytest

from ocbic.core.constraints import (
    ConstraintSet,
    constraint_set_from_dict,
    parse_constraint_sets,
    parse_constraints,
    parse_expression,
)
from ocbic.core.errors import ConstraintSyntaxError, ValidationError


def test_chain_with_nuisance_columns():
    names = ['theta0', 'class', 'education', 'income', 'gender', 'sigma2']
    cs = parse_constraints(['class > education > income > 0'], names)

    assert cs.R.tolist() == [
        [0, 1, -1, 0, 0, 0],
        [0, 0, 1, -1, 0, 0],
        [0, 0, 0, 1, 0, 0],
    ]
    assert cs.r.tolist() == [0, 0, 0]
    assert cs.param_names == names
    assert cs.source_text == ['class > education > income > 0']


def test_group_expands_to_every_pair():
    cs = parse_constraints(['education > (class, income) > 0'], ['class', 'education', 'income'])

    assert cs.R.tolist() == [
        [-1, 1, 0],
        [0, 1, -1],
        [1, 0, 0],
        [0, 0, 1],
    ]
    assert cs.r.tolist() == [0, 0, 0, 0]


def test_duplicate_rows_are_removed():
    cs = parse_constraints(['X1 > 0', 'X1 > 0'], ['X1'])
    assert cs.R.tolist() == [[1]]
    assert cs.r.tolist() == [0]


def test_rescaled_duplicates_are_removed():
    # "a > b" written twice through different chains
    cs = parse_constraints(['a > b', 'b < a & a > b'], ['a', 'b'])
    assert cs.n_constraints == 1


def test_less_than_chain_matches_grid_membership():
    cs = parse_constraints(['0 < X1 < X2'], ['X1', 'X2'])
    assert cs.R.tolist() == [[1, 0], [-1, 1]]
    assert cs.r.tolist() == [0, 0]

    points = np.random.default_rng(3).uniform(-1, 1, size=(1000, 2))
    expected = (points[:, 0] > 0) & (points[:, 0] < points[:, 1])
    np.testing.assert_array_equal(cs.satisfied_by(points), expected)


def test_literal_bounds():
    cs = parse_constraints(['a > 0.5', '-1e-1 < b'], ['a', 'b'])
    assert cs.R.tolist() == [[1, 0], [0, 1]]
    assert cs.r.tolist() == pytest.approx([0.5, -0.1])


@pytest.mark.parametrize(
    'text',
    [
        'c > b > a > 0',
        'a > b < c',
        '(a, b) > c & d > 0',
        'd < (a, c) < b',
        '1 > a > b',
    ],
)
def test_round_trip_membership(text: str):
    names = ['a', 'b', 'c', 'd']
    cs = parse_constraints([text], names)
    expr = parse_expression(text)

    theta = np.random.default_rng(11).normal(size=(10_000, len(names)))
    via_matrix = cs.satisfied_by(theta)
    via_chains = np.array([expr.satisfied_by(dict(zip(names, row, strict=True))) for row in theta])
    np.testing.assert_array_equal(via_matrix, via_chains)


def test_comparator_normalization():
    left = parse_constraints(['a > b'], ['a', 'b'])
    right = parse_constraints(['b < a'], ['a', 'b'])
    np.testing.assert_array_equal(left.R, right.R)
    np.testing.assert_array_equal(left.r, right.r)


def test_column_count_follows_names():
    cs = parse_constraints(['x3 > 0'], ['x1', 'x2', 'x3', 'x4', 'x5'])
    assert cs.R.shape == (1, 5)


def test_dotted_identifiers():
    cs = parse_constraints(['class.educ.income > 0'], ['(Intercept)', 'class.educ.income'])
    assert cs.R.tolist() == [[0, 1]]


def test_parse_constraint_sets_keeps_strings_apart():
    sets = parse_constraint_sets(['a > b > 0', 'b > a > 0'], ['a', 'b'])
    assert [s.n_constraints for s in sets] == [2, 2]
    assert [s.source_text for s in sets] == [['a > b > 0'], ['b > a > 0']]


def test_unknown_identifier():
    with pytest.raises(ConstraintSyntaxError, match='unknown parameter "z"'):
        parse_constraints(['a > z'], ['a', 'b'])


@pytest.mark.parametrize(
    'text',
    [
        '0 < 1',
        'a > ()',
        '(a, 0) > b',
        '0 < a < 1',
        'a >',
        'a > > b',
        'a >= b',
        'a',
    ],
)
def test_malformed_constraints(text: str):
    with pytest.raises(ConstraintSyntaxError) as exc_info:
        parse_constraints([text], ['a', 'b'])
    assert isinstance(exc_info.value.position, int)
    assert 'position' in str(exc_info.value)


def test_degenerate_rows_are_dropped():
    cs = parse_constraints(['a > a', 'a > 0'], ['a'])
    assert cs.R.tolist() == [[1]]


def test_all_degenerate_is_an_error():
    with pytest.raises(ValidationError, match='degenerate'):
        parse_constraints(['a > a'], ['a', 'b'])


def test_no_strings_is_an_error():
    with pytest.raises(ValidationError):
        parse_constraints([], ['a'])


def test_json_shape():
    cs = parse_constraints(['b > a'], ['a', 'b'])
    restored = ConstraintSet.from_json(cs.to_json())

    assert restored == cs
    assert set(constraint_set_from_dict({'R': [[1.0]], 'r': [0.0], 'names': ['a']}).model_dump(by_alias=True)) == {
        'R',
        'r',
        'names',
        'source',
    }


def test_invalid_constraint_dict():
    with pytest.raises(ValidationError, match='all zero'):
        constraint_set_from_dict({'R': [[0.0, 0.0]], 'r': [0.0], 'names': ['a', 'b']})
