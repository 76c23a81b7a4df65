import numpy as np
import pytest

from chromashift import demo
from chromashift import power as pw
from chromashift.adaptation import AdaptationParams, TriphasicSchedule, linear_trajectory


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    demo.generate_demo_corpus(d, n=120, size=(48, 48), seed=0)
    return d


@pytest.fixture(scope="session")
def histogram(corpus_dir):
    return pw.build_histogram(corpus_dir, bins=64)


@pytest.fixture(scope="session")
def power_params():
    return pw.DEFAULT_POWER_PARAMS


@pytest.fixture
def reference_schedule():
    """Mid-velocity ramp matching the measurement-stage defaults."""
    return TriphasicSchedule(linear_trajectory(1.863), v=2e-4, D=0.024,
                             t1=60.0, t2=60.0)


@pytest.fixture
def reference_params():
    return AdaptationParams(0.107, 0.638)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
