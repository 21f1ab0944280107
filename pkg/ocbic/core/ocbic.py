"""Order-constrained BICs, Bayes factors and posterior model probabilities.

For a fit of the unconstrained model ``M_u`` and a constraint set ``R theta > r``::

    OC-BIC = -2 loglik + d log n - 2 log Pr(R theta > r | D) + 2 log Pr(R theta > r)

The posterior term uses ``N(theta_hat, Sigma)``. The prior term uses the unit-information
covariance ``n Sigma``, centred at the estimate (``ui``) or on the constraint boundary
(``lui``, local unit-information).
"""

import math
from collections.abc import Sequence
from enum import StrEnum
from pathlib import Path
from typing import Any, Self

import numpy as np
import orjson
import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
from scipy import linalg

from ocbic.core.config import config
from ocbic.core.constraints import ConstraintSet, parse_constraint_sets, parse_constraints
from ocbic.core.errors import NumericalError, OverlapError, ValidationError
from ocbic.core.models import FittedModel, load_fit
from ocbic.core.mvn import RegionProbability, reduce_constraints, region_prob_qmc
from ocbic.core.seeds import derive_seed, generator
from ocbic.util.logger import logger


IDENTITY_TOLERANCE = 1e-9
PROBABILITY_SUM_TOLERANCE = 1e-9
POSTERIOR_SUM_TOLERANCE = 1e-12
BOUNDARY_TOLERANCE = 1e-8
OVERLAP_MIN_FRACTION = 0.001
COMPLEMENT_SIGMAS = 3.0
UNDERFLOW_OFFSET = 2.0

POSTERIOR_STREAM = 0
PRIOR_STREAM = 1
OVERLAP_STREAM = 2


class Variant(StrEnum):
    LUI = 'lui'
    UI = 'ui'
    PLAIN = 'plain'


class EngineSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    points: int = Field(default_factory=lambda: config.QMC_POINTS)
    randomizations: int = Field(default_factory=lambda: config.QMC_RANDOMIZATIONS)
    seed: int = Field(default_factory=lambda: config.SEED, ge=0)
    overlap_draws: int = Field(default_factory=lambda: config.OVERLAP_DRAWS)


class OcBicResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str = ''
    variant: Variant
    ocbic: float
    minus2_loglik: float
    penalty: float
    log_post_prob: float = 0.0
    log_prior_prob: float = 0.0
    post_prob: RegionProbability | None = None
    prior_prob: RegionProbability | None = None
    complement: bool = False
    # (theta_hat - theta_0)' I_E (theta_hat - theta_0), nonzero only for the full local form
    fit_term: float = 0.0
    constraints: list[str] = Field(default_factory=list)
    engine: EngineSettings | None = None

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if not math.isfinite(self.ocbic):
            msg = f'OC-BIC of "{self.label}" is not finite'
            raise ValueError(msg)

        if self.variant == Variant.PLAIN and (self.log_post_prob != 0 or self.log_prior_prob != 0):
            msg = 'a plain BIC carries no constraint probabilities'
            raise ValueError(msg)

        assembled = (
            self.minus2_loglik + self.penalty - 2 * self.log_post_prob + 2 * self.log_prior_prob + self.fit_term
        )
        if not math.isclose(self.ocbic, assembled, rel_tol=IDENTITY_TOLERANCE, abs_tol=IDENTITY_TOLERANCE):
            msg = f'OC-BIC {self.ocbic} does not match its decomposition {assembled}'
            raise ValueError(msg)
        return self

    @property
    def bic(self) -> float:
        return self.minus2_loglik + self.penalty

    @property
    def posterior_constraint_probability(self) -> float:
        return math.exp(self.log_post_prob)

    @property
    def log_bayes_factor(self) -> float:
        return self.log_post_prob - self.log_prior_prob

    @property
    def underflow(self) -> bool:
        return any(p is not None and p.underflow for p in (self.post_prob, self.prior_prob))

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(mode='json'), option=orjson.OPT_INDENT_2)


ConstraintInput = ConstraintSet | Sequence[ConstraintSet] | None


def _as_sets(fit: FittedModel, cs: ConstraintInput, *, complement: bool) -> list[ConstraintSet]:
    if cs is None:
        if complement:
            msg = 'A complement model needs at least one constraint set.'
            raise ValidationError(msg)
        return []

    sets = [cs] if isinstance(cs, ConstraintSet) else list(cs)
    if len(sets) > 1 and not complement:
        msg = 'Several constraint sets only make sense for a complement model; combine them into one set instead.'
        raise ValidationError(msg)

    for s in sets:
        if s.param_names != fit.coef_names:
            msg = f'Constraint columns {s.param_names} do not match the fit coefficients {fit.coef_names}'
            raise ValidationError(msg)
    return sets


def _prior_problem_center(fit: FittedModel, variant: Variant) -> np.ndarray | None:
    # lui: mean on the boundary, so R theta - r has mean zero
    return fit.theta if variant == Variant.UI else None


def _region(
    cs: ConstraintSet,
    sigma: np.ndarray,
    center: np.ndarray | None,
    engine: EngineSettings,
    seed: int,
) -> RegionProbability:
    problem = reduce_constraints(cs.R, cs.r, sigma, center)
    return region_prob_qmc(problem, points=engine.points, randomizations=engine.randomizations, seed=seed)


def _complement(probabilities: Sequence[RegionProbability], *, what: str) -> RegionProbability:
    total = sum(p.estimate for p in probabilities)
    std_error = math.sqrt(sum(p.std_error**2 for p in probabilities))
    value = 1.0 - total
    method = probabilities[0].method
    n_samples = sum(p.n_samples for p in probabilities)

    if value < -COMPLEMENT_SIGMAS * std_error:
        msg = (
            f'constraint regions overlap: {what} probabilities of the named regions sum to {total:.6f} > 1 '
            f'(std error {std_error:.2g})'
        )
        raise OverlapError(msg)

    if value <= 0:
        floor = math.log(max(std_error, np.finfo(float).tiny)) - UNDERFLOW_OFFSET
        logger.warning(f'Complement {what} probability is numerically zero, using log floor {floor:.3f}')
        return RegionProbability(
            estimate=0.0,
            log_estimate=floor,
            std_error=std_error,
            method=method,
            n_samples=n_samples,
            underflow=True,
        )

    return RegionProbability(
        estimate=value,
        log_estimate=math.log1p(-total),
        std_error=std_error,
        method=method,
        n_samples=n_samples,
    )


def _check_overlap(
    sets: Sequence[ConstraintSet],
    mean: np.ndarray,
    sigma: np.ndarray,
    n_draws: int,
    seed: int,
) -> None:
    draws = generator(seed).multivariate_normal(mean, sigma, size=n_draws, method='cholesky')
    members = np.stack([s.satisfied_by(draws) for s in sets], axis=1)
    fraction = float(np.mean(members.sum(axis=1) >= 2))
    mc_error = math.sqrt(fraction * (1 - fraction) / n_draws)
    if fraction > max(OVERLAP_MIN_FRACTION, COMPLEMENT_SIGMAS * mc_error):
        msg = f'constraint regions overlap: {fraction:.4f} of {n_draws} draws satisfy more than one constraint set'
        raise OverlapError(msg)


def _ocbic(  # noqa: PLR0913
    fit: FittedModel,
    cs: ConstraintInput,
    *,
    variant: Variant,
    complement: bool,
    label: str,
    engine: EngineSettings | None,
) -> OcBicResult:
    engine = engine or EngineSettings()
    sets = _as_sets(fit, cs, complement=complement)
    minus2_loglik = -2.0 * fit.loglik
    penalty = fit.n_params * math.log(fit.n_obs)

    if not sets:
        return OcBicResult(
            label=label,
            variant=Variant.PLAIN,
            ocbic=minus2_loglik + penalty,
            minus2_loglik=minus2_loglik,
            penalty=penalty,
            engine=engine,
        )

    prior_sigma = fit.unit_information_covariance
    prior_center = _prior_problem_center(fit, variant)
    posts = [
        _region(s, fit.sigma, fit.theta, engine, derive_seed(engine.seed, POSTERIOR_STREAM, t))
        for t, s in enumerate(sets)
    ]
    priors = [
        _region(s, prior_sigma, prior_center, engine, derive_seed(engine.seed, PRIOR_STREAM, t))
        for t, s in enumerate(sets)
    ]

    if complement:
        if len(sets) > 1:
            overlap_seed = derive_seed(engine.seed, OVERLAP_STREAM)
            _check_overlap(sets, fit.theta, fit.sigma, engine.overlap_draws, overlap_seed)
            # the unit-information law is wider and also reaches regions far from the estimate
            _check_overlap(sets, fit.theta, prior_sigma, engine.overlap_draws, overlap_seed)
        post, prior = _complement(posts, what='posterior'), _complement(priors, what='prior')
    else:
        post, prior = posts[0], priors[0]

    if post.underflow or prior.underflow:
        logger.warning(f'Underflow in the constraint probabilities of "{label}": treat the model as rejected')

    ocbic = minus2_loglik + penalty - 2 * post.log_estimate + 2 * prior.log_estimate
    logger.debug(
        f'OC-BIC {label=} {variant=!s} {complement=} post={post.log_estimate:.6g} prior={prior.log_estimate:.6g}'
    )
    return OcBicResult(
        label=label,
        variant=variant,
        ocbic=ocbic,
        minus2_loglik=minus2_loglik,
        penalty=penalty,
        log_post_prob=post.log_estimate,
        log_prior_prob=prior.log_estimate,
        post_prob=post,
        prior_prob=prior,
        complement=complement,
        constraints=[text for s in sets for text in s.source_text],
        engine=engine,
    )


def ocbic_lui(
    fit: FittedModel,
    cs: ConstraintInput,
    complement: bool = False,  # noqa: FBT001, FBT002
    *,
    label: str = '',
    engine: EngineSettings | None = None,
) -> OcBicResult:
    return _ocbic(fit, cs, variant=Variant.LUI, complement=complement, label=label, engine=engine)


def ocbic_ui(
    fit: FittedModel,
    cs: ConstraintInput,
    complement: bool = False,  # noqa: FBT001, FBT002
    *,
    label: str = '',
    engine: EngineSettings | None = None,
) -> OcBicResult:
    return _ocbic(fit, cs, variant=Variant.UI, complement=complement, label=label, engine=engine)


def evaluate(  # noqa: PLR0913
    fit: FittedModel,
    cs: ConstraintInput,
    variant: Variant = Variant.LUI,
    complement: bool = False,  # noqa: FBT001, FBT002
    *,
    label: str = '',
    engine: EngineSettings | None = None,
) -> OcBicResult:
    if variant == Variant.PLAIN:
        cs = None
    return _ocbic(fit, cs, variant=variant, complement=complement, label=label, engine=engine)


def log_bayes_factor_constrained_vs_unconstrained(
    fit: FittedModel,
    cs: ConstraintInput,
    variant: Variant = Variant.LUI,
    *,
    complement: bool = False,
    engine: EngineSettings | None = None,
) -> float:
    if cs is None or variant == Variant.PLAIN:
        msg = 'A Bayes factor against the unconstrained model needs constraints and the ui or lui variant.'
        raise ValidationError(msg)

    result = _ocbic(fit, cs, variant=variant, complement=complement, label='', engine=engine)
    if result.underflow:
        msg = 'a constraint probability underflowed; the Bayes factor is not reliable'
        raise NumericalError(msg)
    return result.log_bayes_factor


def bayes_factor_constrained_vs_unconstrained(
    fit: FittedModel,
    cs: ConstraintInput,
    variant: Variant = Variant.LUI,
    *,
    complement: bool = False,
    engine: EngineSettings | None = None,
) -> float:
    """Posterior over prior probability of the constrained region: B of M_1 against M_u."""
    return math.exp(
        log_bayes_factor_constrained_vs_unconstrained(fit, cs, variant, complement=complement, engine=engine)
    )


def postprob(ocbics: Sequence[float], prior_probs: Sequence[float] | None = None) -> np.ndarray:
    values = np.asarray(ocbics, dtype=float)
    if values.ndim != 1 or values.size < 2:  # noqa: PLR2004
        msg = f'Posterior model probabilities need at least two models, got {values.size}'
        raise ValidationError(msg)
    if not np.all(np.isfinite(values)):
        msg = 'BIC values must be finite'
        raise ValidationError(msg)

    if prior_probs is None:
        prior = np.full(values.size, 1.0 / values.size)
    else:
        prior = np.asarray(prior_probs, dtype=float)
        if prior.shape != values.shape:
            msg = f'Got {prior.size} prior probabilities for {values.size} models'
            raise ValidationError(msg)
        if np.any(prior <= 0) or abs(prior.sum() - 1) > PROBABILITY_SUM_TOLERANCE:
            msg = f'Prior model probabilities must be positive and sum to 1, got {prior.tolist()}'
            raise ValidationError(msg)

    weights = prior * np.exp(-(values - values.min()) / 2)
    return weights / weights.sum()


def bic_difference(a: OcBicResult | float, b: OcBicResult | float) -> float:
    def value(x: OcBicResult | float) -> float:
        return x.ocbic if isinstance(x, OcBicResult) else float(x)

    return value(a) - value(b)


def _boundary_point(fit: FittedModel, cs: ConstraintSet) -> np.ndarray:
    problem = reduce_constraints(cs.R, cs.r, fit.sigma, fit.theta)
    correction = fit.sigma @ cs.R.T @ linalg.solve(problem.covariance, problem.mean, assume_a='pos')
    return fit.theta - correction


def _null_estimate(fit: FittedModel, null_fit: FittedModel, cs: ConstraintSet) -> np.ndarray:
    unknown = [name for name in null_fit.coef_names if name not in fit.coef_names]
    if unknown:
        msg = f'Null-model coefficients {unknown} are not part of the unconstrained fit'
        raise ValidationError(msg)

    theta0 = np.zeros(len(fit.coef_names))
    for name, value in zip(null_fit.coef_names, null_fit.estimates, strict=True):
        theta0[fit.coef_names.index(name)] = value

    gap = cs.R @ theta0 - cs.r
    if np.max(np.abs(gap)) > BOUNDARY_TOLERANCE * max(1.0, float(np.max(np.abs(cs.r)))):
        logger.warning(f'Null-model estimate is not on the constraint boundary (R theta0 - r = {gap.tolist()})')
    return theta0


def ocbic_lui_full(
    fit: FittedModel,
    cs: ConstraintSet,
    null_fit: FittedModel | None = None,
    *,
    label: str = '',
    engine: EngineSettings | None = None,
) -> OcBicResult:
    """Local unit-information OC-BIC that keeps the prior-fit term of the estimate against the null."""
    base = ocbic_lui(fit, cs, label=label, engine=engine)
    theta0 = _null_estimate(fit, null_fit, cs) if null_fit is not None else _boundary_point(fit, cs)

    delta = fit.theta - theta0
    fit_term = float(delta @ linalg.solve(fit.unit_information_covariance, delta, assume_a='pos'))
    logger.debug(f'Prior-fit term {label=} {fit_term=:.6g}')
    return base.model_copy(update={'ocbic': base.ocbic + fit_term, 'fit_term': fit_term})


class CompareEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    fit_path: Path | None = None
    bic_override: float | None = None
    constraints: list[str] = Field(default_factory=list)
    complement: bool = False
    variant: Variant | None = None

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if (self.fit_path is None) == (self.bic_override is None):
            msg = f'Entry "{self.label}" needs exactly one of fit_path and bic_override.'
            raise ValueError(msg)
        if self.bic_override is not None and (self.constraints or self.complement):
            msg = f'Entry "{self.label}" overrides its BIC and cannot carry constraints.'
            raise ValueError(msg)
        if self.complement and not self.constraints:
            msg = f'Complement entry "{self.label}" lists no constraints.'
            raise ValueError(msg)
        return self


class ComparisonTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: list[OcBicResult]
    prior_model_probs: list[float]
    post_model_probs: list[float]
    advisory: list[str] = Field(default_factory=list)

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        if not (len(self.entries) == len(self.prior_model_probs) == len(self.post_model_probs)):
            msg = 'entries and model probabilities differ in length'
            raise ValueError(msg)
        checks = (
            ('prior', self.prior_model_probs, PROBABILITY_SUM_TOLERANCE),
            ('posterior', self.post_model_probs, POSTERIOR_SUM_TOLERANCE),
        )
        for name, probs, tolerance in checks:
            if abs(math.fsum(probs) - 1) > tolerance:
                msg = f'{name} model probabilities sum to {math.fsum(probs)!r}, not 1'
                raise ValueError(msg)
        return self

    @classmethod
    def from_results(
        cls,
        results: Sequence[OcBicResult],
        prior_probs: Sequence[float] | None = None,
        advisory_threshold: float | None = None,
    ) -> Self:
        bics = [r.ocbic for r in results]
        post = postprob(bics, prior_probs)
        prior = np.full(len(bics), 1 / len(bics)) if prior_probs is None else np.asarray(prior_probs, dtype=float)
        threshold = advisory_threshold if advisory_threshold is not None else config.BIC_DIFFERENCE_ADVISORY
        return cls(
            entries=list(results),
            prior_model_probs=prior.tolist(),
            post_model_probs=post.tolist(),
            advisory=_advisory(results, threshold),
        )

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(mode='json'), option=orjson.OPT_INDENT_2)


def _advisory(results: Sequence[OcBicResult], threshold: float) -> list[str]:
    best = min(results, key=lambda r: r.ocbic)
    notes = []
    for result in results:
        if result is best:
            continue
        difference = bic_difference(result, best)
        if difference < threshold:
            notes.append(
                f'{result.label} vs {best.label}: BIC difference {difference:.2f} is below '
                f'{threshold:g} points; the evidence for {best.label} is not decisive'
            )
    return notes


def load_compare_spec(path: Path | str) -> list[CompareEntry]:
    path = Path(path)
    try:
        raw = path.read_bytes()
        data: Any = orjson.loads(raw) if path.suffix == '.json' else yaml.safe_load(raw)
    except (OSError, orjson.JSONDecodeError, yaml.YAMLError) as err:
        msg = f'Cannot read compare spec {path}: {err}'
        raise ValidationError(msg) from err

    try:
        entries = TypeAdapter(list[CompareEntry]).validate_python(data)
    except pydantic.ValidationError as err:
        msg = f'Invalid compare spec {path}: {err.errors()[0]["msg"]}'
        raise ValidationError(msg) from err

    if len(entries) < 2:  # noqa: PLR2004
        msg = f'A comparison needs at least two models, {path} lists {len(entries)}'
        raise ValidationError(msg)

    # fit paths are relative to the spec file
    return [
        e.model_copy(update={'fit_path': path.parent / e.fit_path})
        if e.fit_path is not None and not e.fit_path.is_absolute()
        else e
        for e in entries
    ]


def evaluate_entry(entry: CompareEntry, variant: Variant, engine: EngineSettings | None = None) -> OcBicResult:
    if entry.bic_override is not None:
        return OcBicResult(
            label=entry.label,
            variant=Variant.PLAIN,
            ocbic=entry.bic_override,
            minus2_loglik=entry.bic_override,
            penalty=0.0,
        )

    fit = load_fit(entry.fit_path)  # type: ignore[arg-type]
    if not entry.constraints:
        return evaluate(fit, None, Variant.PLAIN, label=entry.label, engine=engine)

    if entry.complement:
        sets: ConstraintInput = parse_constraint_sets(entry.constraints, fit.coef_names)
    else:
        sets = parse_constraints(entry.constraints, fit.coef_names)
    return evaluate(fit, sets, entry.variant or variant, entry.complement, label=entry.label, engine=engine)


def compare(
    entries: Sequence[CompareEntry],
    prior_probs: Sequence[float] | None = None,
    *,
    variant: Variant = Variant.LUI,
    engine: EngineSettings | None = None,
) -> ComparisonTable:
    if len(entries) < 2:  # noqa: PLR2004
        msg = f'A comparison needs at least two models, got {len(entries)}'
        raise ValidationError(msg)

    labels = [e.label for e in entries]
    if len(set(labels)) != len(labels):
        msg = f'Model labels must be unique, got {labels}'
        raise ValidationError(msg)

    results = [evaluate_entry(entry, variant, engine) for entry in entries]
    logger.info(f'Compared {len(results)} models')
    return ComparisonTable.from_results(results, prior_probs)
