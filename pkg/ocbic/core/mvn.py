"""Multivariate normal region probabilities ``Pr(z > 0)`` for ``z ~ N(mu, Omega)``.

Constrained regions ``R theta > r`` are brought into this orthant form by
`reduce_constraints`. The production engine is `region_prob_qmc`, a sequential
conditioning transform integrated with scrambled Sobol points and evaluated in the
log domain; `region_prob_mc` is a plain Monte Carlo counterpart used as an oracle.
"""

import math
import warnings
from dataclasses import dataclass
from enum import StrEnum
from typing import NamedTuple, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.special import log_ndtr, logsumexp, ndtri_exp
from scipy.stats import qmc

from ocbic.core.config import MIN_QMC_POINTS, MIN_QMC_RANDOMIZATIONS, config
from ocbic.core.errors import NotPositiveDefiniteError, RankDeficiencyError, UnderflowWarning, ValidationError
from ocbic.core.seeds import derive_seed, generator
from ocbic.util.logger import logger


MIN_MC_SAMPLES = 1000
MC_BATCH = 2**18
RANK_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-10
UNDERFLOW_OFFSET = 2.0


class Method(StrEnum):
    CLOSED_FORM = 'closed-form'
    QMC = 'qmc'
    MC = 'mc'


@dataclass(frozen=True)
class MvnRegionProblem:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        try:
            mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        except (TypeError, ValueError) as err:
            msg = f'Mean and covariance must be numeric arrays: {err}'
            raise ValidationError(msg) from err

        if mean.ndim != 1 or mean.size == 0:
            msg = 'A region problem needs a non-empty mean vector.'
            raise ValidationError(msg)
        if covariance.shape != (mean.size, mean.size):
            msg = f'Covariance has shape {covariance.shape}, expected {(mean.size, mean.size)}.'
            raise ValidationError(msg)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(covariance))):
            msg = 'Mean and covariance must be finite.'
            raise ValidationError(msg)

        scale = max(float(np.max(np.abs(covariance))), np.finfo(float).tiny)
        if np.max(np.abs(covariance - covariance.T)) / scale > SYMMETRY_TOLERANCE:
            msg = 'Covariance must be symmetric.'
            raise ValidationError(msg)

        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', (covariance + covariance.T) / 2)

    @property
    def m(self) -> int:
        return self.mean.size

    def standardized(self) -> Self:
        variances = np.diag(self.covariance)
        if np.any(variances <= 0):
            msg = f'Covariance has non-positive variances {variances.tolist()}'
            raise NotPositiveDefiniteError(msg)
        scale = np.sqrt(variances)
        return type(self)(mean=self.mean / scale, covariance=self.covariance / np.outer(scale, scale))

    def reflected(self) -> Self:
        return type(self)(mean=-self.mean, covariance=self.covariance)


class RegionProbability(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float = Field(ge=0.0, le=1.0)
    log_estimate: float
    std_error: float = Field(ge=0.0)
    method: Method
    n_samples: int = 0
    seed: int | None = None
    underflow: bool = False

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if not math.isfinite(self.std_error):
            msg = 'std_error must be finite'
            raise ValueError(msg)
        if self.estimate > np.finfo(float).tiny and not math.isclose(
            self.log_estimate, math.log(self.estimate), rel_tol=1e-9, abs_tol=1e-9
        ):
            msg = f'log_estimate {self.log_estimate} is inconsistent with estimate {self.estimate}'
            raise ValueError(msg)
        return self

    @classmethod
    def exact(cls, log_p: float) -> Self:
        return cls(estimate=math.exp(log_p), log_estimate=log_p, std_error=0.0, method=Method.CLOSED_FORM)


def _cholesky(matrix: np.ndarray, jitter_scale: float) -> np.ndarray:
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        pass

    jitter = jitter_scale * float(np.trace(matrix)) / matrix.shape[0]
    logger.warning(f'Covariance is not numerically positive definite, adding {jitter=:.3g} to the diagonal')
    try:
        return linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]), lower=True)
    except linalg.LinAlgError as err:
        msg = 'covariance is not positive definite (Cholesky failed after jitter)'
        raise NotPositiveDefiniteError(msg) from err


def _log_conditioned(mean: np.ndarray, chol: np.ndarray, u: np.ndarray) -> np.ndarray:
    points, m = u.shape[0], mean.size
    w = np.zeros((points, m))
    log_f = np.zeros(points)
    for i in range(m):
        # z_i > 0  <=>  w_i > lower
        lower = -(mean[i] + w[:, :i] @ chol[i, :i]) / chol[i, i]
        log_e = log_ndtr(-lower)
        log_f += log_e
        if i < m - 1:
            alive = np.isfinite(log_e)
            w[:, i] = np.where(alive, -ndtri_exp(np.log(u[:, i]) + np.where(alive, log_e, 0.0)), 0.0)
    return log_f


def _underflow(std_error: float, *, method: Method, n_samples: int, seed: int | None) -> RegionProbability:
    floor = math.log(max(std_error, np.finfo(float).tiny)) - UNDERFLOW_OFFSET
    msg = f'Region probability underflowed to zero, using log floor {floor:.3f}'
    warnings.warn(msg, UnderflowWarning, stacklevel=3)
    return RegionProbability(
        estimate=0.0,
        log_estimate=floor,
        std_error=std_error,
        method=method,
        n_samples=n_samples,
        seed=seed,
        underflow=True,
    )


def region_prob_qmc(
    problem: MvnRegionProblem,
    *,
    points: int | None = None,
    randomizations: int | None = None,
    seed: int | None = None,
    jitter_scale: float | None = None,
) -> RegionProbability:
    points = points if points is not None else config.QMC_POINTS
    randomizations = randomizations if randomizations is not None else config.QMC_RANDOMIZATIONS
    seed = seed if seed is not None else config.SEED
    jitter_scale = jitter_scale if jitter_scale is not None else config.JITTER_SCALE

    if points < MIN_QMC_POINTS:
        msg = f'QMC needs at least {MIN_QMC_POINTS} points, got {points}'
        raise ValidationError(msg)
    if randomizations < MIN_QMC_RANDOMIZATIONS:
        msg = f'QMC needs at least {MIN_QMC_RANDOMIZATIONS} randomizations, got {randomizations}'
        raise ValidationError(msg)

    standard = problem.standardized()
    mean, corr = standard.mean, standard.covariance
    m = standard.m

    if m == 1 or not np.any(corr - np.diag(np.diag(corr))):
        # independent coordinates: product of univariate tails
        log_p = float(np.sum(log_ndtr(mean)))
        if not math.isfinite(log_p):
            return _underflow(0.0, method=Method.CLOSED_FORM, n_samples=0, seed=None)
        return RegionProbability.exact(log_p)

    # least likely coordinates first
    order = np.argsort(log_ndtr(mean), kind='stable')
    mean, corr = mean[order], corr[np.ix_(order, order)]
    chol = _cholesky(corr, jitter_scale)

    log_estimates = np.empty(randomizations)
    for j in range(randomizations):
        sobol = qmc.Sobol(d=m - 1, scramble=True, seed=derive_seed(seed, j))
        u = np.clip(sobol.random(points), np.finfo(float).tiny, 1.0)
        log_estimates[j] = logsumexp(_log_conditioned(mean, chol, u)) - math.log(points)

    log_p = float(logsumexp(log_estimates) - math.log(randomizations))
    n_samples = points * randomizations
    logger.debug(f'QMC region probability {m=} {points=} {randomizations=} {seed=} {log_p=:.6g}')

    if not math.isfinite(log_p):
        return _underflow(0.0, method=Method.QMC, n_samples=n_samples, seed=seed)

    # spread of the randomizations relative to their mean, immune to underflow of p itself
    relative = np.exp(log_estimates - log_p)
    estimate = math.exp(log_p)
    std_error = estimate * float(np.std(relative, ddof=1)) / math.sqrt(randomizations)
    return RegionProbability(
        estimate=min(estimate, 1.0),
        log_estimate=min(log_p, 0.0),
        std_error=std_error,
        method=Method.QMC,
        n_samples=n_samples,
        seed=seed,
    )


def region_prob_mc(
    problem: MvnRegionProblem,
    *,
    n_samples: int | None = None,
    seed: int | None = None,
    jitter_scale: float | None = None,
) -> RegionProbability:
    n_samples = n_samples if n_samples is not None else config.MC_SAMPLES
    seed = seed if seed is not None else config.SEED
    jitter_scale = jitter_scale if jitter_scale is not None else config.JITTER_SCALE

    if n_samples < MIN_MC_SAMPLES:
        msg = f'Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}'
        raise ValidationError(msg)

    chol = _cholesky(problem.covariance, jitter_scale)
    rng = generator(seed)
    hits = 0
    for start in range(0, n_samples, MC_BATCH):
        size = min(MC_BATCH, n_samples - start)
        z = problem.mean + rng.standard_normal((size, problem.m)) @ chol.T
        hits += int(np.count_nonzero(np.all(z > 0, axis=1)))

    p = hits / n_samples
    std_error = math.sqrt(p * (1 - p) / n_samples)
    if hits == 0:
        return _underflow(1.0 / n_samples, method=Method.MC, n_samples=n_samples, seed=seed)

    return RegionProbability(
        estimate=p,
        log_estimate=math.log(p),
        std_error=std_error,
        method=Method.MC,
        n_samples=n_samples,
        seed=seed,
    )


def reduce_constraints(
    R: np.ndarray,
    r: np.ndarray,
    sigma: np.ndarray,
    center: np.ndarray | None = None,
) -> MvnRegionProblem:
    """Orthant form of ``Pr(R theta > r)`` for ``theta ~ N(center, sigma)``.

    Without ``center`` the law is centred on the constraint boundary (mean zero).
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))

    if R.shape[0] != r.size or R.shape[1] != sigma.shape[0]:
        msg = f'Inconsistent shapes R={R.shape} r={r.shape} sigma={sigma.shape}'
        raise ValidationError(msg)

    singular_values = linalg.svd(R, compute_uv=False)
    tolerance = RANK_TOLERANCE * singular_values[0]
    if int(np.sum(singular_values > tolerance)) < R.shape[0]:
        for i in range(1, R.shape[0] + 1):
            if np.linalg.matrix_rank(R[:i], tol=tolerance) < i:
                msg = f'constraint row {i - 1} is linearly dependent on earlier rows; remove redundant constraints'
                raise RankDeficiencyError(msg, [i - 1])

    mean = np.zeros(R.shape[0]) if center is None else R @ np.asarray(center, dtype=float) - r
    return MvnRegionProblem(mean=mean, covariance=R @ sigma @ R.T)


class PriorBaselines(NamedTuple):
    equal_ordering: float
    differenced: float


def prior_probability_baselines(k: int) -> PriorBaselines:
    """Closed-form prior probabilities of a complete ordering of ``k`` exchangeable parameters.

    ``equal_ordering`` is 1/k! (all orderings equally likely a priori); ``differenced``
    is 2^-(k-1), what independent one-sided priors on the k-1 adjacent differences give.
    """
    if k < 1:
        msg = f'k must be positive, got {k}'
        raise ValidationError(msg)
    return PriorBaselines(equal_ordering=1 / math.factorial(k), differenced=2.0 ** -(k - 1))
