from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import linalg
from scipy.special import expit

from ocbic.core.errors import ConvergenceError, NumericalError, RankDeficiencyError, SeparationError, ValidationError
from ocbic.core.models import Dataset, FittedModel
from ocbic.util.logger import logger


INTERCEPT = '(Intercept)'

RANK_TOLERANCE = 1e-10
ZERO_RSS_TOLERANCE = 1e-20

IRLS_MAX_ITERATIONS = 100
IRLS_MAX_HALVINGS = 20
IRLS_GRADIENT_TOLERANCE = 1e-8
IRLS_STEP_TOLERANCE = 1e-6
SEPARATION_NORM = 1e3
SATURATION_TOLERANCE = 1e-6


class Family(StrEnum):
    GAUSSIAN = 'gaussian'
    BINOMIAL_LOGIT = 'binomial-logit'


@dataclass(frozen=True)
class DesignSpec:
    outcome: str
    predictors: tuple[str, ...] = field(default_factory=tuple)
    intercept: bool = True
    family: Family = Family.GAUSSIAN
    standardize: bool = False

    def __post_init__(self) -> None:
        if not self.predictors and not self.intercept:
            msg = 'A design needs at least one predictor or an intercept.'
            raise ValidationError(msg)
        try:
            object.__setattr__(self, 'family', Family(self.family))
        except ValueError as err:
            msg = f'Unknown family "{self.family}", expected one of {[f.value for f in Family]}'
            raise ValidationError(msg) from err


def _design(data: Dataset, spec: DesignSpec) -> tuple[list[str], np.ndarray, np.ndarray]:
    missing = [c for c in (spec.outcome, *spec.predictors) if c not in data.columns]
    if missing:
        msg = f'Columns {missing} are not part of the dataset'
        raise ValidationError(msg)

    y = data.frame[spec.outcome].to_numpy(dtype=float)
    X = data.frame[list(spec.predictors)].to_numpy(dtype=float).reshape(len(y), len(spec.predictors))

    if spec.standardize and spec.predictors:
        # population SD (divide by n)
        scale = X.std(axis=0)
        constant = [name for name, s in zip(spec.predictors, scale, strict=True) if s == 0]
        if constant:
            msg = f'Cannot standardize constant predictors {constant}'
            raise ValidationError(msg)
        X = (X - X.mean(axis=0)) / scale

    names = list(spec.predictors)
    if spec.intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names.insert(0, INTERCEPT)

    return names, X, y


def _require_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    _, R, pivots = linalg.qr(X, mode='economic', pivoting=True)
    diagonal = np.abs(np.diag(R))
    rank = int(np.sum(diagonal > RANK_TOLERANCE * diagonal[0])) if diagonal.size else 0
    if rank < X.shape[1]:
        offending = sorted(int(i) for i in pivots[rank:])
        msg = f'Design matrix is rank deficient; linearly dependent columns: {[names[i] for i in offending]}'
        raise RankDeficiencyError(msg, offending)


def fit_linear(data: Dataset, spec: DesignSpec) -> FittedModel:
    names, X, y = _design(data, spec)
    n, p = X.shape
    if n <= p:
        msg = f'Need more observations than coefficients, got n={n} for {p} coefficients'
        raise ValidationError(msg)
    _require_full_rank(X, names)

    gram = linalg.cho_factor(X.T @ X)
    theta = linalg.cho_solve(gram, X.T @ y)
    residuals = y - X @ theta
    rss = float(residuals @ residuals)
    if rss <= ZERO_RSS_TOLERANCE * max(float(y @ y), np.finfo(float).tiny):
        msg = 'degenerate zero residual variance: the outcome is an exact linear function of the predictors'
        raise NumericalError(msg)

    # ML variance, not the unbiased one
    sigma2 = rss / n
    loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1)
    sigma = sigma2 * linalg.cho_solve(gram, np.eye(p))

    logger.debug(f'Linear fit {n=} {p=} {sigma2=:.6g} {loglik=:.6f}')
    return FittedModel.from_arrays(names, theta, sigma, loglik=loglik, n=n, d=p + 1)


def _logistic_loglik(X: np.ndarray, y: np.ndarray, theta: np.ndarray) -> float:
    eta = X @ theta
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _is_separated(X: np.ndarray, y: np.ndarray, theta: np.ndarray) -> bool:
    return bool(np.max(np.abs(y - expit(X @ theta))) < SATURATION_TOLERANCE)


def fit_logistic(data: Dataset, spec: DesignSpec) -> FittedModel:
    names, X, y = _design(data, spec)
    n, p = X.shape
    if not np.all((y == 0) | (y == 1)):
        msg = f'Logistic regression needs a 0/1 outcome, column "{spec.outcome}" has other values'
        raise ValidationError(msg)
    if n <= p:
        msg = f'Need more observations than coefficients, got n={n} for {p} coefficients'
        raise ValidationError(msg)
    _require_full_rank(X, names)

    theta = np.zeros(p)
    loglik = _logistic_loglik(X, y, theta)
    for iteration in range(IRLS_MAX_ITERATIONS):
        mu = expit(X @ theta)
        gradient = X.T @ (y - mu)
        information = X.T @ (X * (mu * (1 - mu))[:, None])
        try:
            step = linalg.cho_solve(linalg.cho_factor(information), gradient)
        except linalg.LinAlgError as err:
            if _is_separated(X, y, theta):
                msg = 'complete separation: fitted probabilities are numerically 0 or 1'
                raise SeparationError(msg) from err
            msg = f'information matrix became singular at iteration {iteration}'
            raise ConvergenceError(msg) from err

        if np.max(np.abs(gradient)) <= IRLS_GRADIENT_TOLERANCE and np.max(np.abs(step)) <= IRLS_STEP_TOLERANCE:
            logger.debug(f'IRLS converged after {iteration} iterations {loglik=:.6f}')
            break

        scale = 1.0
        for _ in range(IRLS_MAX_HALVINGS + 1):
            candidate = theta + scale * step
            candidate_loglik = _logistic_loglik(X, y, candidate)
            if candidate_loglik >= loglik:
                break
            scale /= 2
        else:
            msg = f'step halving failed to increase the log-likelihood at iteration {iteration}'
            raise ConvergenceError(msg)

        theta, loglik = candidate, candidate_loglik
        if np.linalg.norm(theta) > SEPARATION_NORM:
            msg = f'complete separation: coefficient norm diverged beyond {SEPARATION_NORM:g}'
            raise SeparationError(msg)
    else:
        if _is_separated(X, y, theta):
            msg = 'complete separation: fitted probabilities are numerically 0 or 1'
            raise SeparationError(msg)
        msg = f'IRLS did not converge within {IRLS_MAX_ITERATIONS} iterations'
        raise ConvergenceError(msg)

    # canonical link: observed and expected information coincide
    sigma = linalg.cho_solve(linalg.cho_factor(information), np.eye(p))
    return FittedModel.from_arrays(names, theta, sigma, loglik=loglik, n=n, d=p)


def fit(data: Dataset, spec: DesignSpec) -> FittedModel:
    if spec.family == Family.GAUSSIAN:
        return fit_linear(data, spec)
    return fit_logistic(data, spec)


def fit_from_sufficient_statistics(  # noqa: PLR0913
    names: Sequence[str],
    theta: np.ndarray,
    xtx: np.ndarray,
    sigma2: float,
    n: int,
    *,
    d: int | None = None,
) -> FittedModel:
    theta = np.asarray(theta, dtype=float)
    sigma = sigma2 * np.linalg.inv(np.asarray(xtx, dtype=float))
    loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1)
    return FittedModel.from_arrays(names, theta, sigma, loglik=loglik, n=n, d=d if d is not None else len(theta) + 1)


def null_variance(sigma2: float, theta: np.ndarray, xtx: np.ndarray, n: int) -> float:
    theta = np.asarray(theta, dtype=float)
    return sigma2 + float(theta @ np.asarray(xtx, dtype=float) @ theta) / n
