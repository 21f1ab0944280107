"""Numerical studies of the order-constrained BICs on the two-predictor regression model.

``y = theta_0 + theta_1 x_1 + theta_2 x_2 + e`` with standardized predictors correlated 0.5,
i.e. ``X'X = n [[1, 0, 0], [0, 1, .5], [0, .5, 1]]``. The models are

- ``M_u``: unconstrained,
- ``M_1``: ``x2 > x1 > 0``,
- ``M_2``: the complement of ``M_1``,
- ``M_0``: ``theta_1 = theta_2 = 0`` (intercept-only refit).

`run_fig2` tabulates Bayes factors on a grid of effects ``(a, 2a)``, `run_fig3` estimates
error probabilities of model selection by simulation and `run_fig4` measures the relative
error of the approximate Bayes factors against brute-force marginal likelihoods.
"""

import math
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from enum import StrEnum
from functools import partial
from itertools import repeat
from typing import Any, Self

import numpy as np
import orjson
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import logsumexp
from scipy.stats import norm

from ocbic.core.config import config
from ocbic.core.constraints import ConstraintSet, parse_constraints
from ocbic.core.glm import INTERCEPT, DesignSpec, fit_from_sufficient_statistics, fit_linear, null_variance
from ocbic.core.models import Dataset
from ocbic.core.ocbic import EngineSettings, OcBicResult, Variant, evaluate
from ocbic.core.oracle import GaussianPrior, constrained_mode, marginal_likelihood_bruteforce
from ocbic.core.seeds import derive_seed, generator
from ocbic.util.logger import logger


PREDICTORS = ('x1', 'x2')
CONSTRAINT = 'x2 > x1 > 0'
PREDICTOR_CORRELATION = 0.5
SLOPE_GRAM = np.array([[1.0, PREDICTOR_CORRELATION], [PREDICTOR_CORRELATION, 1.0]])

DEFAULT_N_GRID = (20, 50, 100, 200, 400, 800, 1600)
FIG2_N = 20
FIG2_A_GRID = tuple(float(a) + 0.0 for a in np.round(np.linspace(-1.5, 1.5, 31), 10))
FIG3_A_GRID = (0.0, 0.1, 0.2, 0.4)
FIG3_REPLICATIONS = 1000
FIG3_POINTS = 2**10
FIG3_RANDOMIZATIONS = 8
FIG4_A_GRID = (0.5,)
FIG4_BATCH = 2**15

# unit information of log(sigma^2) is 1/2 per observation
LOG_VARIANCE_PRIOR_VARIANCE = 2.0
HERMITE_NODES = 64


class Experiment(StrEnum):
    FIG2 = 'fig2'
    FIG3 = 'fig3'
    FIG4 = 'fig4'


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment: Experiment
    n_grid: list[int]
    a_grid: list[float]
    replications: int = 1
    seed: int = Field(default_factory=lambda: config.SEED, ge=0)
    points: int = Field(default_factory=lambda: config.QMC_POINTS)
    randomizations: int = Field(default_factory=lambda: config.QMC_RANDOMIZATIONS)
    oracle_draws: int = Field(default_factory=lambda: config.ORACLE_DRAWS)
    oracle_batch: int = FIG4_BATCH
    workers: int = Field(default_factory=lambda: config.SIM_WORKERS)

    @field_validator('n_grid')
    @classmethod
    def validate_n_grid(cls, v: list[int]) -> list[int]:
        if not v:
            msg = 'n_grid must not be empty'
            raise ValueError(msg)
        if min(v) < len(PREDICTORS) + 2:
            msg = f'every n must be at least {len(PREDICTORS) + 2}, got {min(v)}'
            raise ValueError(msg)
        return v

    @field_validator('a_grid')
    @classmethod
    def validate_a_grid(cls, v: list[float]) -> list[float]:
        if not v:
            msg = 'a_grid must not be empty'
            raise ValueError(msg)
        return v

    @field_validator('replications', 'workers', 'oracle_draws', 'oracle_batch')
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            msg = f'Expected a positive integer, got {v}'
            raise ValueError(msg)
        return v

    @classmethod
    def for_experiment(cls, experiment: Experiment | str, **overrides: Any) -> Self:  # noqa: ANN401
        experiment = Experiment(experiment)
        defaults: dict[str, Any] = {
            Experiment.FIG2: {'n_grid': [FIG2_N], 'a_grid': list(FIG2_A_GRID)},
            Experiment.FIG3: {
                'n_grid': list(DEFAULT_N_GRID),
                'a_grid': list(FIG3_A_GRID),
                'replications': FIG3_REPLICATIONS,
                'points': FIG3_POINTS,
                'randomizations': FIG3_RANDOMIZATIONS,
            },
            Experiment.FIG4: {'n_grid': list(DEFAULT_N_GRID), 'a_grid': list(FIG4_A_GRID)},
        }[experiment]
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=experiment, **defaults)

    def engine(self, seed: int | None = None) -> EngineSettings:
        return EngineSettings(
            points=self.points,
            randomizations=self.randomizations,
            seed=self.seed if seed is None else seed,
        )


def _design_gram(n: int) -> np.ndarray:
    gram = np.zeros((3, 3))
    gram[0, 0] = 1.0
    gram[1:, 1:] = SLOPE_GRAM
    return n * gram


def _log_bf_std_error(result: OcBicResult) -> float:
    terms = [p for p in (result.post_prob, result.prior_prob) if p is not None and p.estimate > 0]
    return math.sqrt(sum((p.std_error / p.estimate) ** 2 for p in terms))


def run_fig2(sim: SimConfig) -> pd.DataFrame:
    """Log Bayes factors of M_1 against M_u, M_2 and M_0 for estimates ``(a, 2a)``, sigma^2 = 1."""
    names = [INTERCEPT, *PREDICTORS]
    rows = []
    for n in sim.n_grid:
        gram = _design_gram(n)
        for a in sim.a_grid:
            theta = np.array([0.0, a, 2 * a])
            fit = fit_from_sufficient_statistics(names, theta, gram, 1.0, n)
            null_fit = fit_from_sufficient_statistics(
                [INTERCEPT], theta[:1], gram[:1, :1], null_variance(1.0, theta, gram, n), n
            )
            cs = parse_constraints([CONSTRAINT], names)

            row: dict[str, float] = {'n': n, 'a': a}
            for variant in (Variant.UI, Variant.LUI):
                tag = variant.value.upper()
                m1 = evaluate(fit, cs, variant, label='M1', engine=sim.engine())
                m2 = evaluate(fit, [cs], variant, complement=True, label='M2', engine=sim.engine())
                row[f'logB_{tag}_1u'] = m1.log_bayes_factor
                row[f'logB_{tag}_12'] = -(m1.ocbic - m2.ocbic) / 2
                row[f'logB_{tag}_10'] = -(m1.ocbic - null_fit.bic) / 2
                row[f'se_{tag}_1u'] = _log_bf_std_error(m1)
            rows.append(row)
        logger.info(f'fig2 done for {n=} over {len(sim.a_grid)} effects')

    columns = ['n', 'a'] + [
        f'{kind}_{tag}_{pair}'
        for kind, pairs in (('logB', ('1u', '12', '10')), ('se', ('1u',)))
        for pair in pairs
        for tag in ('UI', 'LUI')
    ]
    return pd.DataFrame(rows, columns=columns)


def simulate_dataset(a: float, n: int, rng: np.random.Generator) -> Dataset:
    X = rng.multivariate_normal(np.zeros(2), SLOPE_GRAM, size=n)
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    y = X @ np.array([a, 2 * a]) + rng.standard_normal(n)
    return Dataset.from_arrays(y, X, PREDICTORS)


def _true_model(a: float) -> str:
    if a == 0:
        return 'M0'
    return 'M1' if a > 0 else 'M2'


def _select(bics: dict[str, float]) -> str:
    return min(bics, key=lambda model: bics[model])


def _fig3_cell(sim: SimConfig, a_index: int, n: int) -> list[dict[str, Any]]:
    a = sim.a_grid[a_index]
    truth = _true_model(a)
    errors = {'bic': 0, Variant.UI.value: 0, Variant.LUI.value: 0}

    for rep in range(sim.replications):
        seed = derive_seed(sim.seed, a_index, n, rep)
        data = simulate_dataset(a, n, generator(seed))
        fit = fit_linear(data, DesignSpec(outcome=data.outcome, predictors=PREDICTORS))
        null_bic = fit_linear(data, DesignSpec(outcome=data.outcome)).bic

        # two models, ordinary BIC
        chosen = _select({'M0': null_bic, 'Mu': fit.bic})
        errors['bic'] += chosen != ('M0' if a == 0 else 'Mu')

        # three models, order-constrained BICs
        cs = parse_constraints([CONSTRAINT], fit.coef_names)
        engine = sim.engine(seed)
        for variant in (Variant.UI, Variant.LUI):
            m1 = evaluate(fit, cs, variant, engine=engine)
            m2 = evaluate(fit, [cs], variant, complement=True, engine=engine)
            chosen = _select({'M0': null_bic, 'M1': m1.ocbic, 'M2': m2.ocbic})
            errors[variant.value] += chosen != truth

    logger.info(f'fig3 cell {a=} {n=} errors={errors}')
    rows = []
    for method, count in errors.items():
        rate = count / sim.replications
        rows.append({
            'true_a': a,
            'n': n,
            'method': method,
            'error_rate': rate,
            'std_error': math.sqrt(rate * (1 - rate) / sim.replications),
            'replications': sim.replications,
        })
    return rows


def run_fig3(sim: SimConfig) -> pd.DataFrame:
    """Error rates of selecting the wrong model; test 1 is M_0 vs M_u, test 2 is M_0 vs M_1 vs M_2."""
    cells = [(a_index, n) for a_index in range(len(sim.a_grid)) for n in sim.n_grid]
    a_indices, ns = [c[0] for c in cells], [c[1] for c in cells]

    if sim.workers > 1:
        with ProcessPoolExecutor(max_workers=sim.workers) as pool:
            results = list(pool.map(_fig3_cell, repeat(sim), a_indices, ns))
    else:
        results = [_fig3_cell(sim, a_index, n) for a_index, n in cells]

    return pd.DataFrame([row for rows in results for row in rows])


def log_variance_marginal_likelihood(  # noqa: PLR0913
    theta: np.ndarray,
    *,
    theta_hat: np.ndarray,
    gram: np.ndarray,
    sigma2: float,
    n: int,
    tau_mean: float,
    tau_variance: float = LOG_VARIANCE_PRIOR_VARIANCE,
) -> np.ndarray:
    """``log int p(D | theta, tau) N(tau; tau_mean, tau_variance) dtau`` for every row of ``theta``.

    ``tau = log sigma^2`` is integrated out by Gauss-Hermite quadrature around the conditional
    mode. ``gram`` is ``X'X / n`` of the slopes and ``sigma2`` the ML error variance.
    """
    theta = np.atleast_2d(theta)
    delta = theta - theta_hat
    spread = sigma2 + np.einsum('ij,jk,ik->i', delta, gram, delta)

    precision = n / 2 + 1 / tau_variance
    scale = 1 / math.sqrt(precision)
    mode = np.log(spread)
    center = mode - (mode - tau_mean) / (tau_variance * precision)

    nodes, weights = np.polynomial.hermite_e.hermegauss(HERMITE_NODES)
    tau = center[:, None] + scale * nodes[None, :]
    log_integrand = (
        -0.5 * n * (math.log(2 * math.pi) + tau)
        - 0.5 * n * spread[:, None] * np.exp(-tau)
        + norm.logpdf(tau, loc=tau_mean, scale=math.sqrt(tau_variance))
    )
    return logsumexp(log_integrand + nodes**2 / 2 + np.log(weights), axis=1) + math.log(scale)


def _variance_only_bic(sigma2: float, n: int) -> float:
    return n * (math.log(2 * math.pi * sigma2) + 1) + math.log(n)


def _oracle(  # noqa: PLR0913
    sim: SimConfig,
    loglik_fn: Callable[[np.ndarray], np.ndarray],
    prior: GaussianPrior,
    cs: ConstraintSet,
    proposal: GaussianPrior,
    seed: int,
    *,
    complement: bool = False,
) -> tuple[float, float]:
    estimate = marginal_likelihood_bruteforce(
        loglik_fn,
        prior,
        cs,
        complement=complement,
        n_draws=sim.oracle_draws,
        seed=seed,
        batch=sim.oracle_batch,
        proposal=proposal,
    )
    return estimate.log_ml, estimate.std_error


def _fig4_row(sim: SimConfig, case: str, a: float, n: int, seed: int) -> dict[str, Any]:
    theta_hat = a * np.array([1.0, 2.0]) * (1 if case == 'supported' else -1)
    sigma2 = 1.0
    fit = fit_from_sufficient_statistics(list(PREDICTORS), theta_hat, n * SLOPE_GRAM, sigma2, n, d=3)
    cs = parse_constraints([CONSTRAINT], fit.coef_names)
    engine = sim.engine(seed)

    loglik_fn = partial(
        log_variance_marginal_likelihood,
        theta_hat=theta_hat,
        gram=SLOPE_GRAM,
        sigma2=sigma2,
        n=n,
        tau_mean=math.log(sigma2),
    )
    # local unit-information prior of the slopes
    prior = GaussianPrior(mean=np.zeros(2), covariance=fit.unit_information_covariance)
    m1 = evaluate(fit, cs, Variant.LUI, engine=engine)
    m1_proposal = GaussianPrior(mean=constrained_mode(fit.theta, fit.sigma, cs), covariance=2 * fit.sigma)
    m1_log_ml, m1_se = _oracle(sim, loglik_fn, prior, cs, m1_proposal, derive_seed(seed, 1))

    if case == 'supported':
        # M_0 against M_1
        null_sigma2 = sigma2 + float(theta_hat @ SLOPE_GRAM @ theta_hat)
        null_log_ml = float(
            log_variance_marginal_likelihood(
                np.zeros((1, 2)),
                theta_hat=theta_hat,
                gram=SLOPE_GRAM,
                sigma2=sigma2,
                n=n,
                tau_mean=math.log(null_sigma2),
            )[0]
        )
        approx = -(m1.ocbic - _variance_only_bic(null_sigma2, n)) / 2
        exact, exact_se = m1_log_ml - null_log_ml, m1_se
    else:
        # M_2 against M_1
        m2 = evaluate(fit, [cs], Variant.LUI, complement=True, engine=engine)
        m2_proposal = GaussianPrior(mean=fit.theta, covariance=2 * fit.sigma)
        m2_log_ml, m2_se = _oracle(sim, loglik_fn, prior, cs, m2_proposal, derive_seed(seed, 2), complement=True)
        approx = -(m2.ocbic - m1.ocbic) / 2
        exact, exact_se = m2_log_ml - m1_log_ml, math.hypot(m1_se, m2_se)

    relative = (exact - approx) / exact
    return {
        'case': case,
        'a': a,
        'n': n,
        'log_bf_exact': exact,
        'log_bf_exact_se': exact_se,
        'log_bf_approx': approx,
        'relative_error': relative,
        'relative_error_se': exact_se * abs(approx) / exact**2,
    }


def run_fig4(sim: SimConfig) -> pd.DataFrame:
    """Relative error of OC-BIC Bayes factors against brute-force ones as n grows.

    ``supported``: estimates ``(a, 2a)``, log B of M_1 against M_0. ``violated``: estimates
    ``(-a, -2a)``, log B of M_2 against M_1. Nuisance log sigma^2 carries its unit-information
    prior; the intercept is orthogonal to the slopes and is held at its estimate.
    """
    rows = []
    for case_index, case in enumerate(('supported', 'violated')):
        for a_index, a in enumerate(sim.a_grid):
            for n in sim.n_grid:
                rows.append(_fig4_row(sim, case, a, n, derive_seed(sim.seed, case_index, a_index, n)))
                logger.info(f'fig4 {case=} {a=} {n=} relative_error={rows[-1]["relative_error"]:.4g}')
    return pd.DataFrame(rows)


RUNNERS: dict[Experiment, Callable[[SimConfig], pd.DataFrame]] = {
    Experiment.FIG2: run_fig2,
    Experiment.FIG3: run_fig3,
    Experiment.FIG4: run_fig4,
}


def run_experiment(sim: SimConfig) -> pd.DataFrame:
    logger.info(f'Running {sim.experiment} with seed={sim.seed}')
    return RUNNERS[sim.experiment](sim)


def format_table(table: pd.DataFrame, sim: SimConfig) -> str:
    header = orjson.dumps(sim.model_dump(mode='json'), option=orjson.OPT_SORT_KEYS).decode()
    body = table.to_csv(sep='\t', index=False, float_format='%.10g', lineterminator='\n')
    return f'# ocbic simulate {sim.experiment}\n# config: {header}\n{body}'
