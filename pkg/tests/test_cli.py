import math
from pathlib import Path

import numpy as np
import orjson
import pandas as pd
import pytest
import yaml

from ocbic.__main__ import main
from ocbic.core.glm import INTERCEPT
from ocbic.core.models import load_fit, save_fit


ENGINE_ARGS = ['--points', '1024', '--randomizations', '8', '--seed', '3']


def read_record(text: str) -> dict[str, str]:
    return dict(line.split('\t', 1) for line in text.splitlines() if line and not line.startswith('#'))


@pytest.fixture
def regression_csv(tmp_path: Path) -> Path:
    rng = np.random.default_rng(12)
    X = rng.standard_normal((60, 3))
    frame = pd.DataFrame(X, columns=['x1', 'x2', 'x3'])
    frame.insert(0, 'y', X @ np.array([0.1, 0.3, 0.6]) + rng.standard_normal(60))
    frame['flag'] = (frame['y'] > 0).astype(int)
    path = tmp_path / 'data.csv'
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def fit_path(tmp_path: Path, make_fit) -> Path:
    fit = make_fit(
        [INTERCEPT, 'x1', 'x2'],
        [0.05, 0.2, 0.35],
        np.array([[0.01, 0, 0], [0, 0.012, 0.004], [0, 0.004, 0.012]]),
        n=100,
        loglik=-140.0,
        d=4,
    )
    return save_fit(fit, tmp_path / 'fits' / 'mu.json')


def test_fit_linear(regression_csv: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    out = tmp_path / 'out' / 'fit.json'
    code = main(['fit', str(regression_csv), '--outcome', 'y', '--predictors', 'x1, x2,x3', '--out', str(out)])

    assert code == 0
    fitted = load_fit(out)
    assert fitted.coef_names == [INTERCEPT, 'x1', 'x2', 'x3']
    assert fitted.n_params == 5
    assert fitted.n_obs == 60

    stdout = capsys.readouterr().out
    assert stdout.startswith('# loglik=')
    assert 'term\testimate\tstd_error' in stdout
    assert f'bic={fitted.bic:.10g}' in stdout


def test_fit_logistic_json(regression_csv: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    out = tmp_path / 'logit.json'
    args = ['fit', str(regression_csv), '--outcome', 'flag', '--predictors', 'x1,x2', '--out', str(out)]
    code = main([*args, '--family', 'binomial-logit', '--format', 'json'])

    assert code == 0
    payload = orjson.loads(capsys.readouterr().out)
    assert payload['names'] == [INTERCEPT, 'x1', 'x2']
    assert payload['d'] == 3
    assert load_fit(out).n_params == 3


def test_fit_rejects_unknown_family(regression_csv: Path, tmp_path: Path):
    args = ['fit', str(regression_csv), '--outcome', 'y', '--predictors', 'x1', '--out', str(tmp_path / 'f.json')]
    with pytest.raises(SystemExit) as excinfo:
        main([*args, '--family', 'poisson'])
    assert excinfo.value.code == 2


def test_fit_logistic_needs_binary_outcome(regression_csv: Path, tmp_path: Path):
    args = ['fit', str(regression_csv), '--outcome', 'y', '--predictors', 'x1', '--out', str(tmp_path / 'f.json')]
    assert main([*args, '--family', 'binomial-logit']) == 2


def test_fit_missing_column(regression_csv: Path, tmp_path: Path):
    args = ['fit', str(regression_csv), '--outcome', 'y', '--predictors', 'x9', '--out', str(tmp_path / 'f.json')]
    assert main(args) == 2


def test_fit_rejects_infinite_cells(regression_csv: Path, tmp_path: Path):
    frame = pd.read_csv(regression_csv)
    frame['x2'] = frame['x2'].astype(object)
    frame.loc[4, 'x2'] = 'inf'
    frame.to_csv(regression_csv, index=False)

    args = ['fit', str(regression_csv), '--outcome', 'y', '--predictors', 'x1,x2', '--out', str(tmp_path / 'f.json')]
    assert main(args) == 2


def test_eval_plain(fit_path: Path, capsys: pytest.CaptureFixture[str]):
    assert main(['eval', str(fit_path)]) == 0

    record = read_record(capsys.readouterr().out)
    assert record['label'] == 'mu'
    assert record['variant'] == 'plain'
    assert float(record['ocbic']) == pytest.approx(280.0 + 4 * math.log(100), rel=1e-9)
    assert record['post_prob'] == 'NA'
    assert record['underflow'] == 'false'


def test_eval_constrained(fit_path: Path, capsys: pytest.CaptureFixture[str]):
    assert main(['eval', str(fit_path), '--constraint', 'x2 > x1 > 0', *ENGINE_ARGS, '--format', 'json']) == 0

    payload = orjson.loads(capsys.readouterr().out)
    assert payload['variant'] == 'lui'
    assert payload['constraints'] == ['x2 > x1 > 0']
    assert payload['engine']['seed'] == 3
    assembled = (
        payload['minus2_loglik'] + payload['penalty'] - 2 * payload['log_post_prob'] + 2 * payload['log_prior_prob']
    )
    assert payload['ocbic'] == pytest.approx(assembled)


def test_eval_ui_with_fit_term_is_rejected(fit_path: Path):
    args = ['eval', str(fit_path), '--constraint', 'x2 > x1', '--variant', 'ui', '--fit-term']
    assert main(args) == 2
    assert main(['eval', str(fit_path), '--constraint', 'x2 > x1', '--null-fit', str(fit_path)]) == 2


def test_eval_fit_term(fit_path: Path, capsys: pytest.CaptureFixture[str]):
    assert main(['eval', str(fit_path), '--constraint', 'x2 > x1', '--fit-term', *ENGINE_ARGS]) == 0
    assert float(read_record(capsys.readouterr().out)['fit_term']) > 0


def test_eval_complement(fit_path: Path, capsys: pytest.CaptureFixture[str]):
    args = ['eval', str(fit_path), '--constraint', 'x1 > 0 & x2 > 0', '--constraint', 'x1 < 0 & x2 < 0']
    assert main([*args, '--complement', *ENGINE_ARGS]) == 0

    record = read_record(capsys.readouterr().out)
    assert record['complement'] == 'true'
    assert 0 < float(record['post_prob']) < 1


def test_eval_overlapping_complement(fit_path: Path):
    args = ['eval', str(fit_path), '--constraint', 'x1 > -100', '--constraint', 'x2 > -100', '--complement']
    assert main([*args, *ENGINE_ARGS]) == 3


def test_eval_bad_constraint(fit_path: Path):
    assert main(['eval', str(fit_path), '--constraint', 'x2 >> x1']) == 2
    assert main(['eval', str(fit_path), '--constraint', 'x7 > 0']) == 2
    assert main(['eval', str(fit_path), '--complement']) == 2


def test_compare_table_one(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    spec = tmp_path / 'models.yaml'
    bics = [3918.46, 3921.98, 3917.84, 3926.13]
    spec.write_text(yaml.safe_dump([{'label': f'M{i}', 'bic_override': b} for i, b in enumerate(bics, start=1)]))

    assert main(['compare', str(spec)]) == 0

    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split('\t') == ['label', 'variant', 'ocbic', 'prior_model_prob', 'post_model_prob']
    rows = [line.split('\t') for line in lines[1:5]]
    assert [row[0] for row in rows] == ['M1', 'M2', 'M3', 'M4']
    np.testing.assert_allclose([float(row[4]) for row in rows], [0.391, 0.067, 0.533, 0.008], atol=1e-3)
    assert sum(line.startswith('# advisory:') for line in lines) == 3


def test_compare_errors(tmp_path: Path):
    single = tmp_path / 'single.json'
    single.write_bytes(orjson.dumps([{'label': 'M1', 'bic_override': 1.0}]))
    assert main(['compare', str(single)]) == 2

    pair = tmp_path / 'pair.json'
    pair.write_bytes(orjson.dumps([{'label': 'M1', 'bic_override': 1.0}, {'label': 'M2', 'bic_override': 3.0}]))
    assert main(['compare', str(pair), '--prior-probs', '0.5,0.6']) == 2
    assert main(['compare', str(pair), '--prior-probs', 'half,half']) == 2
    assert main(['compare', str(tmp_path / 'missing.json')]) == 2


def test_compare_with_fits(fit_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    spec = tmp_path / 'models.json'
    spec.write_bytes(
        orjson.dumps([
            {'label': 'Mu', 'fit_path': 'fits/mu.json'},
            {'label': 'M1', 'fit_path': 'fits/mu.json', 'constraints': ['x2 > x1 > 0']},
            {'label': 'M2', 'fit_path': 'fits/mu.json', 'constraints': ['x2 > x1 > 0'], 'complement': True},
        ])
    )
    assert main(['compare', str(spec), '--format', 'json', *ENGINE_ARGS]) == 0

    payload = orjson.loads(capsys.readouterr().out)
    assert [entry['label'] for entry in payload['entries']] == ['Mu', 'M1', 'M2']
    assert sum(payload['post_model_probs']) == pytest.approx(1.0)


def test_orthant(capsys: pytest.CaptureFixture[str]):
    args = ['orthant', '--mean', '[0, 0]', '--covariance', '[[1, 0.5], [0.5, 1]]', *ENGINE_ARGS, '--format', 'json']
    assert main(args) == 0

    payload = orjson.loads(capsys.readouterr().out)
    assert abs(payload['estimate'] - 1 / 3) <= 3 * payload['std_error'] + 1e-9
    assert payload['method'] == 'qmc'


def test_orthant_monte_carlo(capsys: pytest.CaptureFixture[str]):
    args = ['orthant', '--mean', '[0]', '--covariance', '[[2]]', '--method', 'mc', '--samples', '20000', '--seed', '1']
    assert main(args) == 0

    record = read_record(capsys.readouterr().out)
    assert record['method'] == 'mc'
    assert float(record['estimate']) == pytest.approx(0.5, abs=0.02)


def test_orthant_errors():
    assert main(['orthant', '--mean', '[0, 0', '--covariance', '[[1]]']) == 2
    assert main(['orthant', '--mean', '[0, 0]', '--covariance', '[[1]]']) == 2
    assert main(['orthant', '--mean', '[0, 0]', '--covariance', '[[1, 2], [2, 1]]']) == 3


def test_negative_seed_is_rejected(fit_path: Path):
    orthant = ['orthant', '--mean', '[0, 0]', '--covariance', '[[1, 0.5], [0.5, 1]]', '--seed', '-1']
    assert main(orthant) == 2
    assert main([*orthant, '--method', 'mc']) == 2
    assert main(['eval', str(fit_path), '--constraint', 'x2 > x1', '--seed', '-1']) == 2
    assert main(['simulate', 'fig2', '--a-grid=0', '--seed', '-1']) == 2


def test_simulate_is_reproducible(tmp_path: Path):
    args = ['simulate', 'fig2', '--a-grid=0,0.5', '--points', '1024', '--randomizations', '8', '--seed', '5']
    first, second = tmp_path / 'a' / 'fig2.tsv', tmp_path / 'b' / 'fig2.tsv'

    assert main([*args, '--out', str(first)]) == 0
    assert main([*args, '--out', str(second)]) == 0

    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().startswith('# ocbic simulate fig2\n# config: ')


def test_simulate_json(capsys: pytest.CaptureFixture[str]):
    args = ['simulate', 'fig2', '--a-grid=-0.5,0.5', '--points', '1024', '--randomizations', '8', '--format', 'json']
    assert main(args) == 0

    rows = orjson.loads(capsys.readouterr().out)
    assert [row['a'] for row in rows] == [-0.5, 0.5]


def test_simulate_rejects_bad_settings():
    assert main(['simulate', 'fig3', '--n-grid', '3']) == 2
    assert main(['simulate', 'fig3', '--a-grid', 'x']) == 2
    with pytest.raises(SystemExit):
        main(['simulate', 'fig9'])
