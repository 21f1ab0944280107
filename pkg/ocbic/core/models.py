from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Self

import numpy as np
import orjson
import pandas as pd
import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ocbic.core.errors import ValidationError
from ocbic.util.fs import ensure_parent
from ocbic.util.logger import logger


SYMMETRY_TOLERANCE = 1e-10
MISSING_TOKENS = ('', 'NA', 'NaN', 'nan')


class FittedModel(BaseModel):
    """Summary of a maximum-likelihood fit: everything an order-constrained BIC needs.

    ``covariance`` is the estimated covariance of the estimates, roughly the inverse of
    ``n`` times the expected Fisher information of one observation. ``n_params`` is the
    parameter count of the BIC penalty and may exceed the number of exposed coefficients
    (e.g. an error variance).
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    coef_names: list[str] = Field(alias='names')
    estimates: list[float]
    covariance: list[list[float]]
    loglik: float
    n_obs: int = Field(alias='n')
    n_params: int = Field(alias='d')

    @field_validator('covariance')
    @classmethod
    def symmetrize(cls, v: list[list[float]]) -> list[list[float]]:
        if any(len(row) != len(v) for row in v):
            msg = 'covariance must be a square matrix'
            raise ValueError(msg)

        matrix = np.asarray(v, dtype=float)
        scale = max(float(np.max(np.abs(matrix), initial=0.0)), np.finfo(float).tiny)
        asymmetry = float(np.max(np.abs(matrix - matrix.T), initial=0.0)) / scale
        if asymmetry > SYMMETRY_TOLERANCE:
            logger.warning(f'Covariance is not symmetric ({asymmetry=:.3g}), averaging with its transpose')
        return ((matrix + matrix.T) / 2).tolist()

    @model_validator(mode='after')
    def validate_model(self) -> Self:
        d_c = len(self.coef_names)
        if d_c < 1:
            msg = 'a fitted model needs at least one coefficient'
            raise ValueError(msg)

        if len(set(self.coef_names)) != d_c:
            msg = f'duplicate coefficient names in {self.coef_names}'
            raise ValueError(msg)

        if len(self.estimates) != d_c or len(self.covariance) != d_c:
            msg = (
                f'dimension mismatch: {d_c} names, {len(self.estimates)} estimates, '
                f'{len(self.covariance)}x{len(self.covariance)} covariance'
            )
            raise ValueError(msg)

        if self.n_params < d_c:
            msg = f'parameter count d={self.n_params} is smaller than the {d_c} coefficients'
            raise ValueError(msg)

        if self.n_obs < self.n_params:
            msg = f'n={self.n_obs} is smaller than the parameter count d={self.n_params}'
            raise ValueError(msg)

        if not all(np.isfinite(self.estimates)) or not np.isfinite(self.loglik):
            msg = 'estimates and loglik must be finite'
            raise ValueError(msg)

        if float(np.linalg.eigvalsh(self.sigma)[0]) <= 0:
            msg = 'covariance is not positive definite'
            raise ValueError(msg)

        return self

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.estimates, dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.covariance, dtype=float)

    @property
    def unit_information_covariance(self) -> np.ndarray:
        # inverse expected information of one observation
        return self.n_obs * self.sigma

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * float(np.log(self.n_obs))

    @classmethod
    def from_arrays(  # noqa: PLR0913
        cls,
        names: Sequence[str],
        theta: np.ndarray,
        sigma: np.ndarray,
        *,
        loglik: float,
        n: int,
        d: int,
    ) -> Self:
        try:
            return cls(
                names=list(names),
                estimates=np.asarray(theta, dtype=float).tolist(),
                covariance=np.asarray(sigma, dtype=float).tolist(),
                loglik=float(loglik),
                n=int(n),
                d=int(d),
            )
        except pydantic.ValidationError as err:
            msg = f'Invalid fitted model: {_first_error(err)}'
            raise ValidationError(msg) from err

    def to_json(self) -> bytes:
        return orjson.dumps(self.model_dump(by_alias=True), option=orjson.OPT_INDENT_2)


def _first_error(err: pydantic.ValidationError) -> str:
    first = err.errors()[0]
    location = '.'.join(str(part) for part in first['loc'])
    return f'{location}: {first["msg"]}' if location else first['msg']


def load_fit(path: Path | str) -> FittedModel:
    path = Path(path)
    try:
        data = orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as err:
        msg = f'Cannot read fit file {path}: {err}'
        raise ValidationError(msg) from err

    try:
        fit = FittedModel.model_validate(data)
    except pydantic.ValidationError as err:
        msg = f'Invalid fit file {path}: {_first_error(err)}'
        raise ValidationError(msg) from err

    logger.debug(f'Loaded fit {path} with {len(fit.coef_names)} coefficients, n={fit.n_obs}, d={fit.n_params}')
    return fit


def save_fit(fit: FittedModel, path: Path | str) -> Path:
    path = ensure_parent(Path(path))
    path.write_bytes(fit.to_json())
    return path


@dataclass(frozen=True)
class Dataset:
    frame: pd.DataFrame
    outcome: str
    predictors: tuple[str, ...]
    n_dropped: int = 0

    @property
    def columns(self) -> list[str]:
        return [str(c) for c in self.frame.columns]

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.outcome].to_numpy(dtype=float)

    @property
    def X(self) -> np.ndarray:  # noqa: N802
        return self.frame[list(self.predictors)].to_numpy(dtype=float)

    @classmethod
    def from_arrays(cls, y: np.ndarray, X: np.ndarray, predictors: Sequence[str], outcome: str = 'y') -> Self:
        frame = pd.DataFrame(np.asarray(X, dtype=float), columns=list(predictors))
        frame.insert(0, outcome, np.asarray(y, dtype=float))
        return cls(frame=frame, outcome=outcome, predictors=tuple(predictors))


def load_csv(path: Path | str, outcome: str, predictors: Sequence[str]) -> Dataset:
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        msg = f'Cannot read CSV file {path}: {err}'
        raise ValidationError(msg) from err

    designated = [outcome, *predictors]
    if len(set(designated)) != len(designated):
        msg = f'Outcome and predictors must be distinct columns, got {designated}'
        raise ValidationError(msg)

    for column in designated:
        if column not in raw.columns:
            msg = f'Column "{column}" not found in {path}; available: {list(raw.columns)}'
            raise ValidationError(msg)

    frame = pd.DataFrame(index=raw.index)
    for column in designated:
        cells = raw[column].str.strip()
        blank = cells.isin(MISSING_TOKENS)
        values = pd.to_numeric(cells.where(~blank), errors='coerce')
        # inf and -inf parse as numbers but are not usable data
        bad = ~np.isfinite(values) & ~blank
        if bad.any():
            row = int(bad.idxmax())
            msg = f'Non-numeric value "{raw[column][row]}" in column "{column}" (data row {row + 1}) of {path}'
            raise ValidationError(msg)
        frame[column] = values.astype(float)

    complete = frame.notna().all(axis=1)
    n_dropped = int((~complete).sum())
    if n_dropped:
        logger.warning(f'Dropped {n_dropped} rows with missing values in {path}')

    frame = frame[complete].reset_index(drop=True)
    return Dataset(frame=frame, outcome=outcome, predictors=tuple(predictors), n_dropped=n_dropped)
