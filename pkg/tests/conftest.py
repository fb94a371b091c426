import numpy as np
import pytest

from app.schemas.experiment import ExperimentConfig, Strategy
from app.schemas.neural import ModelArch, ModelRole, TrainConfig
from app.schemas.scene import SceneConfig
from app.services.neural import TrainedModel, fit_normalizer, init_model
from app.services.scene_channel import build_scene, generate_pool


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale run, skipped unless --run-slow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def scene():
    """Default 60 m x 120 m factory hall with 18 BS."""
    return build_scene(SceneConfig())


@pytest.fixture
def coarse_scene():
    """Default hall on a 4 m field grid, for tests that only need some channel."""
    return build_scene(SceneConfig(field_grid_step_m=4.0))


@pytest.fixture
def small_pool(coarse_scene):
    return generate_pool(coarse_scene, 300, seed=7)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        hidden_width=8,
        n_hidden=2,
        epochs=4,
        fine_tune_epochs=2,
        batch_size=32,
        learning_rate=1e-3,
    )


@pytest.fixture
def toy_experiment_config(tiny_train_config):
    """Toy-scale protocol: every strategy on two BS counts, two realizations."""
    return ExperimentConfig(
        scene=SceneConfig(field_grid_step_m=4.0),
        train=tiny_train_config,
        n=40,
        x_percent=10,
        pool_size=200,
        bs_counts=[18, 4],
        strategies=list(Strategy),
        n_realizations=2,
        base_seed=11,
        workers=1,
    )


@pytest.fixture
def center_model(scene):
    """All-zero position model: every prediction is the scene center."""
    arch = ModelArch(input_dim=18, hidden_width=6, n_hidden=2, output_dim=2)
    model = init_model(arch, seed=0)
    for w, b in model.layers:
        w[...] = 0.0
        b[...] = 0.0
    pool = generate_pool(build_scene(SceneConfig(field_grid_step_m=4.0)), 50, seed=1)
    return TrainedModel(model=model, normalizer=fit_normalizer(pool, scene), role=ModelRole.POSITION)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
