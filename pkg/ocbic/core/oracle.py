"""Reference marginal likelihoods computed without the BIC approximations.

`marginal_likelihood_bruteforce` integrates the likelihood against a (truncated) normal
prior by rejection sampling, optionally helped by a defensive importance proposal.
`taylor_diag_1d` compares the two Taylor expansions used for one-sided integrals
``int_0^inf exp(g)`` when the unconstrained mode is outside the region.
"""

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, linalg
from scipy.special import log_ndtr, logsumexp
from scipy.stats import multivariate_normal

from ocbic.core.config import config
from ocbic.core.constraints import ConstraintSet
from ocbic.core.errors import AcceptanceError, NotPositiveDefiniteError, NumericalError, ValidationError
from ocbic.core.seeds import generator
from ocbic.util.logger import logger


MAX_DIMENSION = 6
CURVATURE_STEP = 1e-4
MODE_TOLERANCE = 1e-10

LogLikelihood = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, 'mean', np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, 'covariance', np.atleast_2d(np.asarray(self.covariance, dtype=float)))
        if self.covariance.shape != (self.mean.size, self.mean.size):
            msg = f'Prior covariance has shape {self.covariance.shape}, expected {(self.mean.size,) * 2}'
            raise ValidationError(msg)
        try:
            linalg.cholesky(self.covariance, lower=True)
        except linalg.LinAlgError as err:
            msg = 'prior covariance is not positive definite'
            raise NotPositiveDefiniteError(msg) from err

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        chol = linalg.cholesky(self.covariance, lower=True)
        return self.mean + rng.standard_normal((size, self.mean.size)) @ chol.T

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        return np.atleast_1d(multivariate_normal(self.mean, self.covariance).logpdf(theta))


class MarginalLikelihoodEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    log_ml: float
    std_error: float = Field(ge=0.0)
    n_draws: int
    n_accepted: int
    acceptance_rate: float = Field(gt=0.0, le=1.0)
    seed: int

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if not (math.isfinite(self.log_ml) and math.isfinite(self.std_error)):
            msg = 'log_ml and std_error must be finite'
            raise ValueError(msg)
        return self


def _membership(
    sets: Sequence[ConstraintSet],
    *,
    complement: bool,
) -> Callable[[np.ndarray], np.ndarray]:
    def inside(theta: np.ndarray) -> np.ndarray:
        if not sets:
            return np.ones(theta.shape[0], dtype=bool)
        union = np.any(np.stack([s.satisfied_by(theta) for s in sets]), axis=0)
        return ~union if complement else union

    return inside


def _require_acceptance(n_accepted: int, n_draws: int, min_acceptance: float) -> float:
    acceptance_rate = n_accepted / n_draws
    if n_accepted == 0 or acceptance_rate < min_acceptance:
        msg = (
            f'acceptance rate {acceptance_rate:.2e} is below {min_acceptance:.0e}: the region is too small for '
            'rejection sampling'
        )
        raise AcceptanceError(msg)
    return acceptance_rate


def _finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        msg = 'log-likelihood is not finite on the prior support'
        raise NumericalError(msg)
    return values


def _rejection(  # noqa: PLR0913
    loglik_fn: LogLikelihood,
    prior: GaussianPrior,
    inside: Callable[[np.ndarray], np.ndarray],
    n_draws: int,
    seed: int,
    batch: int,
    min_acceptance: float,
) -> MarginalLikelihoodEstimate:
    chunks: list[np.ndarray] = []
    for index, start in enumerate(range(0, n_draws, batch)):
        theta = prior.draw(min(batch, n_draws - start), generator(seed, index))
        kept = theta[inside(theta)]
        if kept.shape[0]:
            chunks.append(np.asarray(loglik_fn(kept), dtype=float))

    logliks = _finite(np.concatenate(chunks) if chunks else np.empty(0))
    n_accepted = logliks.size
    acceptance_rate = _require_acceptance(n_accepted, n_draws, min_acceptance)

    log_ml = float(logsumexp(logliks) - math.log(n_accepted))
    # delta method: se(log mean w) = sd(w) / (mean(w) sqrt(N))
    weights = np.exp(logliks - logliks.max())
    std_error = 0.0
    if n_accepted > 1:
        std_error = float(np.std(weights, ddof=1) / (weights.mean() * math.sqrt(n_accepted)))

    return MarginalLikelihoodEstimate(
        log_ml=log_ml,
        std_error=std_error,
        n_draws=n_draws,
        n_accepted=n_accepted,
        acceptance_rate=acceptance_rate,
        seed=seed,
    )


def _stratum_moments(log_w: np.ndarray, shift: float) -> tuple[float, float]:
    w = np.exp(log_w - shift)
    return float(w.mean()), float(w.var(ddof=1)) if w.size > 1 else 0.0


def _defensive_importance(  # noqa: PLR0913
    loglik_fn: LogLikelihood,
    prior: GaussianPrior,
    proposal: GaussianPrior,
    inside: Callable[[np.ndarray], np.ndarray],
    n_draws: int,
    seed: int,
    batch: int,
    min_acceptance: float,
) -> MarginalLikelihoodEstimate:
    # half the draws from the prior, half from the proposal; the prior half doubles as the
    # rejection estimate of the prior mass of the region
    half = max(n_draws // 2, 1)
    strata: list[list[np.ndarray]] = [[], []]
    n_prior_inside = 0
    for stratum, source in enumerate((prior, proposal)):
        for index, start in enumerate(range(0, half, batch)):
            theta = source.draw(min(batch, half - start), generator(seed, stratum, index))
            mask = inside(theta)
            if stratum == 0:
                n_prior_inside += int(np.count_nonzero(mask))

            log_w = np.full(theta.shape[0], -np.inf)
            if np.any(mask):
                kept = theta[mask]
                mixture = np.logaddexp(prior.logpdf(kept), proposal.logpdf(kept)) - math.log(2)
                log_w[mask] = _finite(np.asarray(loglik_fn(kept), dtype=float)) + prior.logpdf(kept) - mixture
            strata[stratum].append(log_w)

    prior_mass = _require_acceptance(n_prior_inside, half, min_acceptance)
    log_ws = [np.concatenate(s) for s in strata]
    shift = max(float(np.max(lw)) for lw in log_ws)
    if not math.isfinite(shift):
        msg = 'no draw fell inside the region'
        raise AcceptanceError(msg)

    (mean_p, var_p), (mean_q, var_q) = (_stratum_moments(lw, shift) for lw in log_ws)
    integral = (mean_p + mean_q) / 2
    variance = (var_p + var_q) / (4 * half)
    log_ml = shift + math.log(integral) - math.log(prior_mass)
    relative_variance = variance / integral**2 + (1 - prior_mass) / (prior_mass * half)

    return MarginalLikelihoodEstimate(
        log_ml=log_ml,
        std_error=math.sqrt(relative_variance),
        n_draws=2 * half,
        n_accepted=int(sum(np.count_nonzero(np.isfinite(lw)) for lw in log_ws)),
        acceptance_rate=prior_mass,
        seed=seed,
    )


def marginal_likelihood_bruteforce(  # noqa: PLR0913
    loglik_fn: LogLikelihood,
    prior: GaussianPrior,
    cs: ConstraintSet | Sequence[ConstraintSet] | None = None,
    *,
    complement: bool = False,
    n_draws: int | None = None,
    seed: int | None = None,
    batch: int | None = None,
    min_acceptance: float | None = None,
    proposal: GaussianPrior | None = None,
) -> MarginalLikelihoodEstimate:
    """log of ``int p(D|theta) p(theta) dtheta`` with ``p(theta)`` the prior truncated to the region.

    ``loglik_fn`` maps a stack of parameter rows to their log-likelihoods. Draws come from the
    untruncated prior and are kept when they fall in the region; the mean likelihood over the
    kept draws is the integral because the truncated prior integrates to one.

    With a ``proposal``, half of the draws come from it and are reweighted against the
    equal mixture of prior and proposal (defensive importance sampling); the region's prior
    mass is then estimated from the prior half. Use this when the likelihood is much
    narrower than the prior.
    """
    n_draws = n_draws if n_draws is not None else config.ORACLE_DRAWS
    seed = seed if seed is not None else config.SEED
    batch = batch if batch is not None else config.ORACLE_BATCH
    min_acceptance = min_acceptance if min_acceptance is not None else config.MIN_ACCEPTANCE

    dimension = prior.mean.size
    if dimension > MAX_DIMENSION:
        msg = f'Brute-force integration is limited to {MAX_DIMENSION} dimensions, got {dimension}'
        raise ValidationError(msg)
    if proposal is not None and proposal.mean.size != dimension:
        msg = f'Proposal has dimension {proposal.mean.size}, prior has {dimension}'
        raise ValidationError(msg)

    sets = [] if cs is None else [cs] if isinstance(cs, ConstraintSet) else list(cs)
    if complement and not sets:
        msg = 'A complement region needs at least one constraint set.'
        raise ValidationError(msg)
    inside = _membership(sets, complement=complement)

    if proposal is None:
        estimate = _rejection(loglik_fn, prior, inside, n_draws, seed, batch, min_acceptance)
    else:
        estimate = _defensive_importance(loglik_fn, prior, proposal, inside, n_draws, seed, batch, min_acceptance)

    logger.debug(
        f'Brute-force marginal likelihood {n_draws=} {seed=} importance={proposal is not None} '
        f'log_ml={estimate.log_ml:.6f} std_error={estimate.std_error:.2g} acceptance={estimate.acceptance_rate:.3g}'
    )
    return estimate


def constrained_mode(mean: np.ndarray, covariance: np.ndarray, cs: ConstraintSet) -> np.ndarray:
    """Maximizer of the ``N(mean, covariance)`` density over the closure of ``R theta > r``.

    Enumerates active sets; meant for the handful of constraints a brute-force problem has.
    """
    mean = np.asarray(mean, dtype=float)
    if cs.satisfied_by(mean):
        return mean

    precision = linalg.inv(covariance)
    R, r = cs.R, cs.r
    best, best_distance = None, np.inf
    for size in range(1, R.shape[0] + 1):
        for active in itertools.combinations(range(R.shape[0]), size):
            rows = list(active)
            Ra = R[rows]
            if np.linalg.matrix_rank(Ra) < size:
                continue
            gap = Ra @ mean - r[rows]
            candidate = mean - covariance @ Ra.T @ linalg.solve(Ra @ covariance @ Ra.T, gap)
            if np.all(R @ candidate >= r - MODE_TOLERANCE):
                delta = candidate - mean
                distance = float(delta @ precision @ delta)
                if distance < best_distance:
                    best, best_distance = candidate, distance

    if best is None:
        msg = 'constraint region is empty'
        raise NumericalError(msg)
    return best


class TaylorDiagnostic(NamedTuple):
    second_order_logml: float
    first_order_logml: float


def second_order_logml(
    g: Callable[[float], float],
    g1: Callable[[float], float],
    mode: float,
    g2: Callable[[float], float] | None = None,
) -> float:
    """Normal (second-order) expansion of ``g`` at its unconstrained mode, integrated over ``theta >= 0``."""
    if g2 is not None:
        curvature = -g2(mode)
    else:
        step = CURVATURE_STEP * max(1.0, abs(mode))
        curvature = -(g1(mode + step) - g1(mode - step)) / (2 * step)

    if curvature <= 0:
        msg = f'g is not concave at the mode {mode} (curvature {curvature:.3g})'
        raise ValidationError(msg)

    return g(mode) + 0.5 * math.log(2 * math.pi / curvature) + float(log_ndtr(mode * math.sqrt(curvature)))


def first_order_logml(g: Callable[[float], float], g1: Callable[[float], float]) -> float:
    """Exponential (first-order) expansion of ``g`` at the boundary point 0."""
    slope = g1(0.0)
    if slope >= 0:
        msg = f'first-order expansion needs a negative slope at the boundary, got g\'(0) = {slope:.3g}'
        raise ValidationError(msg)
    return g(0.0) - math.log(-slope)


def taylor_diag_1d(
    g: Callable[[float], float],
    g1: Callable[[float], float],
    mode_unconstrained: float,
    g2: Callable[[float], float] | None = None,
) -> TaylorDiagnostic:
    return TaylorDiagnostic(
        second_order_logml=second_order_logml(g, g1, mode_unconstrained, g2),
        first_order_logml=first_order_logml(g, g1),
    )


def quadrature_logml_1d(g: Callable[[float], float], mode: float) -> float:
    anchor = max(mode, 0.0)
    reference = g(anchor)

    def integrand(t: float) -> float:
        return math.exp(g(t) - reference)

    tail, _ = integrate.quad(integrand, anchor, np.inf, limit=200)
    head, _ = integrate.quad(integrand, 0.0, anchor, limit=200) if anchor > 0 else (0.0, 0.0)
    return reference + math.log(head + tail)
