import datetime as dt

import numpy as np
import pytest

from ensbma.domain import ForecastCase


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_case(members, obs=None, date=dt.date(2010, 10, 22), station="DEB"):
    """Build a case from an 11-vector with NaN/None for absent slots."""
    vals = [None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v) for v in members]
    return ForecastCase(date, station, None if obs is None else float(obs), vals[0], tuple(vals[1:]))


def random_mixture(rng, k=None, mu=(260.0, 290.0), sd=(0.5, 5.0)):
    from ensbma.predictive import PredictiveDistribution

    k = k or int(rng.integers(1, 12))
    w = rng.dirichlet(np.ones(k))
    return PredictiveDistribution.from_components(w, rng.uniform(*mu, k), rng.uniform(*sd, k) ** 2)
