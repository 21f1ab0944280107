from collections.abc import Callable, Sequence

import numpy as np
import pytest

from ocbic.core.models import FittedModel
from ocbic.core.ocbic import EngineSettings


FitFactory = Callable[..., FittedModel]


@pytest.fixture
def engine() -> EngineSettings:
    return EngineSettings(points=2**12, randomizations=8, seed=7, overlap_draws=20_000)


@pytest.fixture
def make_fit() -> FitFactory:
    def factory(
        names: Sequence[str],
        theta: Sequence[float],
        sigma: np.ndarray | Sequence[Sequence[float]],
        *,
        n: int = 100,
        loglik: float = -120.0,
        d: int | None = None,
    ) -> FittedModel:
        return FittedModel.from_arrays(
            names,
            np.asarray(theta, dtype=float),
            np.asarray(sigma, dtype=float),
            loglik=loglik,
            n=n,
            d=d if d is not None else len(names),
        )

    return factory
