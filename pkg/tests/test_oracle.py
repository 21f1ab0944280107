import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from ocbic.core.constraints import parse_constraints
from ocbic.core.errors import AcceptanceError, NotPositiveDefiniteError, ValidationError
from ocbic.core.models import FittedModel
from ocbic.core.ocbic import EngineSettings, ocbic_ui
from ocbic.core.oracle import (
    GaussianPrior,
    constrained_mode,
    first_order_logml,
    marginal_likelihood_bruteforce,
    quadrature_logml_1d,
    second_order_logml,
    taylor_diag_1d,
)


THETA_POSITIVE = parse_constraints(['theta > 0'], ['theta'])
THETA_NEGATIVE = parse_constraints(['0 > theta'], ['theta'])


def normal_mean_loglik(y: np.ndarray):
    """Log-likelihood of ``y_i ~ N(theta, 1)`` for a stack of scalar parameters."""
    n, ybar = y.size, float(y.mean())
    spread = float(np.sum((y - ybar) ** 2))

    def loglik(theta: np.ndarray) -> np.ndarray:
        return -0.5 * n * math.log(2 * math.pi) - 0.5 * (spread + n * (theta[:, 0] - ybar) ** 2)

    return loglik


def centred_sample(n: int, mean: float, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal(n)
    return mean + z - z.mean()


def truncated_log_ml(y: np.ndarray, prior_mean: float, prior_var: float) -> float:
    """Exact log marginal likelihood under ``N(prior_mean, prior_var)`` truncated to ``theta > 0``."""
    n, ybar = y.size, float(y.mean())
    post_var = 1 / (n + 1 / prior_var)
    post_mean = post_var * (n * ybar + prior_mean / prior_var)
    spread = float(np.sum((y - ybar) ** 2))

    log_unconstrained = (
        -0.5 * n * math.log(2 * math.pi)
        - 0.5 * spread
        + 0.5 * math.log(2 * math.pi / n)
        + float(norm.logpdf(ybar, prior_mean, math.sqrt(prior_var + 1 / n)))
    )
    return (
        log_unconstrained
        + float(norm.logcdf(post_mean / math.sqrt(post_var)))
        - float(norm.logcdf(prior_mean / math.sqrt(prior_var)))
    )


def test_conjugate_normal_closed_form():
    y = np.array([0.3, -0.4, 1.2, 0.8, 0.1])
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])

    estimate = marginal_likelihood_bruteforce(normal_mean_loglik(y), prior, n_draws=400_000, seed=3)

    exact = float(multivariate_normal(np.zeros(y.size), np.eye(y.size) + np.ones((y.size, y.size))).logpdf(y))
    assert estimate.acceptance_rate == 1.0
    assert estimate.n_accepted == 400_000
    assert abs(estimate.log_ml - exact) <= 4 * estimate.std_error


def test_truncated_normal_closed_form():
    y = centred_sample(20, 0.2, seed=5)
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])

    estimate = marginal_likelihood_bruteforce(normal_mean_loglik(y), prior, THETA_POSITIVE, n_draws=400_000, seed=8)

    assert estimate.acceptance_rate == pytest.approx(0.5, abs=0.01)
    assert abs(estimate.log_ml - truncated_log_ml(y, 0.0, 1.0)) <= 4 * estimate.std_error


def test_symmetric_truncation_keeps_the_marginal_likelihood():
    y = np.array([-1.0, -0.5, 0.5, 1.0])
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])
    loglik = normal_mean_loglik(y)

    full = marginal_likelihood_bruteforce(loglik, prior, n_draws=400_000, seed=11)
    half = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, n_draws=400_000, seed=12)

    assert abs(full.log_ml - half.log_ml) <= 4 * math.hypot(full.std_error, half.std_error)


def test_complement_region_is_the_other_half():
    y = centred_sample(10, 0.4, seed=2)
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])
    loglik = normal_mean_loglik(y)

    outside = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, complement=True, n_draws=50_000, seed=4)
    negative = marginal_likelihood_bruteforce(loglik, prior, THETA_NEGATIVE, n_draws=50_000, seed=4)

    assert outside.log_ml == negative.log_ml
    assert outside.n_accepted == negative.n_accepted


def test_seeded_runs_repeat():
    y = centred_sample(15, 0.1, seed=9)
    prior = GaussianPrior(mean=[0.0], covariance=[[2.0]])
    loglik = normal_mean_loglik(y)

    first = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, n_draws=100_000, seed=21, batch=4096)
    second = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, n_draws=100_000, seed=21, batch=4096)
    other = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, n_draws=100_000, seed=22, batch=4096)

    assert first == second
    assert first.log_ml != other.log_ml
    assert abs(first.log_ml - other.log_ml) <= 4 * math.hypot(first.std_error, other.std_error)


def test_tiny_region_is_rejected():
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])
    region = parse_constraints(['theta > 10'], ['theta'])
    with pytest.raises(AcceptanceError, match='acceptance rate'):
        marginal_likelihood_bruteforce(normal_mean_loglik(np.zeros(3)), prior, region, n_draws=10_000, seed=1)


def test_dimension_limit():
    prior = GaussianPrior(mean=np.zeros(7), covariance=np.eye(7))
    with pytest.raises(ValidationError, match='limited to 6'):
        marginal_likelihood_bruteforce(lambda theta: np.zeros(theta.shape[0]), prior, n_draws=100)


def test_prior_validation():
    with pytest.raises(ValidationError):
        GaussianPrior(mean=[0.0, 0.0], covariance=[[1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        GaussianPrior(mean=[0.0, 0.0], covariance=[[1.0, 2.0], [2.0, 1.0]])

    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])
    with pytest.raises(ValidationError, match='complement'):
        marginal_likelihood_bruteforce(lambda theta: np.zeros(theta.shape[0]), prior, complement=True, n_draws=100)
    with pytest.raises(ValidationError, match='Proposal'):
        marginal_likelihood_bruteforce(
            lambda theta: np.zeros(theta.shape[0]),
            prior,
            proposal=GaussianPrior(mean=[0.0, 0.0], covariance=np.eye(2)),
            n_draws=100,
        )


def test_defensive_importance_agrees_with_rejection():
    n = 400
    y = centred_sample(n, 0.05, seed=13)
    prior = GaussianPrior(mean=[0.0], covariance=[[1.0]])
    proposal = GaussianPrior(mean=[float(y.mean())], covariance=[[2 / n]])
    loglik = normal_mean_loglik(y)
    exact = truncated_log_ml(y, 0.0, 1.0)

    rejection = marginal_likelihood_bruteforce(loglik, prior, THETA_POSITIVE, n_draws=1_000_000, seed=31)
    importance = marginal_likelihood_bruteforce(
        loglik, prior, THETA_POSITIVE, n_draws=1_000_000, seed=32, proposal=proposal
    )

    assert abs(rejection.log_ml - exact) <= 4 * rejection.std_error
    assert abs(importance.log_ml - exact) <= 4 * importance.std_error
    assert importance.std_error < rejection.std_error
    assert importance.n_draws == 1_000_000


def test_constrained_mode():
    cs = parse_constraints(['b > a'], ['a', 'b'])
    np.testing.assert_allclose(constrained_mode([0.0, 1.0], np.eye(2), cs), [0.0, 1.0])
    np.testing.assert_allclose(constrained_mode([1.0, 0.0], np.eye(2), cs), [0.5, 0.5])

    chain = parse_constraints(['b > a & a > 0'], ['a', 'b'])
    np.testing.assert_allclose(constrained_mode([1.0, -1.0], np.eye(2), chain), [0.0, 0.0], atol=1e-12)

    covariance = np.array([[1.0, 0.5], [0.5, 2.0]])
    mode = constrained_mode([1.0, 0.0], covariance, cs)
    assert mode[1] == pytest.approx(mode[0])


def quadratic(mode: float):
    def g(t: float) -> float:
        return -0.5 * (t - mode) ** 2

    def g1(t: float) -> float:
        return -(t - mode)

    return g, g1


def test_taylor_expansions_of_a_quadratic():
    g, g1 = quadratic(-0.5)
    exact = math.log(math.sqrt(2 * math.pi) * norm.cdf(-0.5))

    assert first_order_logml(g, g1) == pytest.approx(g(0.0) - math.log(0.5))
    assert second_order_logml(g, g1, -0.5, lambda _: -1.0) == pytest.approx(exact, abs=1e-12)
    assert second_order_logml(g, g1, -0.5) == pytest.approx(exact, abs=1e-6)
    assert quadrature_logml_1d(g, -0.5) == pytest.approx(exact, abs=1e-9)


def test_taylor_diagnostic_on_the_quadratic_example():
    g, g1 = quadratic(-0.5)
    exact = quadrature_logml_1d(g, -0.5)
    diagnostic = taylor_diag_1d(g, g1, -0.5)

    # a pure quadratic is its own normal expansion
    assert abs(diagnostic.second_order_logml - exact) < 1e-6
    assert diagnostic.first_order_logml > exact


def test_first_order_wins_for_a_sharp_boundary_peak():
    scale, height = 0.2, 5.0

    def g(t: float) -> float:
        return -height * math.sqrt(1 + ((t + 0.5) / scale) ** 2)

    def g1(t: float) -> float:
        u = (t + 0.5) / scale
        return -height * u / (scale * math.sqrt(1 + u**2))

    exact = quadrature_logml_1d(g, -0.5)
    diagnostic = taylor_diag_1d(g, g1, -0.5)

    first_error = abs(diagnostic.first_order_logml - exact)
    second_error = abs(diagnostic.second_order_logml - exact)
    assert first_error < 0.05
    assert second_error > 1
    assert first_error < second_error


def test_taylor_expansions_need_the_right_shape():
    g, g1 = quadratic(1.0)
    with pytest.raises(ValidationError, match='negative slope'):
        first_order_logml(g, g1)
    with pytest.raises(ValidationError, match='not concave'):
        second_order_logml(lambda t: t**2, lambda t: 2 * t, 0.0)


def test_quadrature_with_interior_mode():
    g, _ = quadratic(2.0)
    assert quadrature_logml_1d(g, 2.0) == pytest.approx(math.log(math.sqrt(2 * math.pi) * norm.cdf(2.0)), abs=1e-9)


@pytest.mark.parametrize('seed', [101, 202])
def test_ocbic_tracks_the_marginal_likelihood_as_n_grows(seed: int):
    engine = EngineSettings(points=2**10, randomizations=8, seed=seed)
    discrepancies = []
    for n in (100, 10_000):
        y = centred_sample(n, 3.0, seed=seed + n)
        loglik = normal_mean_loglik(y)
        max_loglik = float(loglik(np.array([[3.0]]))[0])
        fit = FittedModel.from_arrays(['theta'], np.array([3.0]), np.array([[1 / n]]), loglik=max_loglik, n=n, d=1)

        implied = -0.5 * ocbic_ui(fit, THETA_POSITIVE, engine=engine).ocbic
        oracle = marginal_likelihood_bruteforce(
            loglik,
            GaussianPrior(mean=[3.0], covariance=[[1.0]]),
            THETA_POSITIVE,
            n_draws=2_000_000,
            seed=seed,
            proposal=GaussianPrior(mean=[3.0], covariance=[[2 / n]]),
        )
        assert abs(oracle.log_ml - truncated_log_ml(y, 3.0, 1.0)) <= 4 * oracle.std_error
        discrepancies.append(abs(implied - oracle.log_ml))

    assert discrepancies[1] < discrepancies[0]
    assert discrepancies[0] == pytest.approx(0.5 * math.log(101 / 100), abs=2e-3)
