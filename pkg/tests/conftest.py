import numpy as np
import pytest
from hypothesis import settings

from pathdrift.model import ConstantDiffusion, DiagonalDiffusion, Heston32Drift, LinearDrift, TanhDrift, ZeroDrift, simple_model

settings.register_profile("pkg", max_examples=40, deadline=None)
settings.load_profile("pkg")


@pytest.fixture
def null_model():
    return simple_model(ZeroDrift())


@pytest.fixture
def ou_model():
    return simple_model(LinearDrift(1.0))


@pytest.fixture
def tanh_model():
    return simple_model(TanhDrift(0.5, 1.0))


@pytest.fixture
def heston_model():
    return simple_model(Heston32Drift(1.0, 1.0), sigma=DiagonalDiffusion("heston32", xi=1.0))


def random_spd(rng, d):
    m = rng.normal(size=(d, d))
    return m @ m.T + 0.5 * np.eye(d)


__all__ = ["random_spd", "ConstantDiffusion"]
