import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fuzzyevidence import generate_scene, load_preset
from fuzzyevidence.context import label_plane
from fuzzyevidence.pipeline import TrainConfig, train_rulebase

settings.register_profile(
    "default",
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(load_preset("patches-small", seed=0))


@pytest.fixture(scope="session")
def small_model(small_scene):
    raster, truth = small_scene
    rb, summary, samples = train_rulebase(raster, truth, TrainConfig(), seed=0)
    return rb, summary, samples


@pytest.fixture(scope="session")
def small_plane(small_scene, small_model):
    return label_plane(small_scene[0], small_model[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
