import numpy as np
import pytest

from kpx.encoders import prepare_scene
from kpx.model import init_params
from kpx.scenario import ScenarioKind, generate_scene
from kpx.skeleton import DEFAULT_SKELETON


@pytest.fixture(scope="session")
def spec():
    return DEFAULT_SKELETON


@pytest.fixture(scope="session")
def params(spec):
    return init_params(0, spec=spec)


@pytest.fixture(scope="session")
def scenes(spec):
    kinds = [ScenarioKind.CROSS_WALKWAY, ScenarioKind.PARALLEL_SIDEWALK,
             ScenarioKind.WAVE_THEN_CROSS, ScenarioKind.BEND_DOWN_ON_ROAD]
    return [generate_scene(k, np.random.default_rng([s, 1]), spec=spec)
            for k, s in zip(kinds, [5, 7, 99, 3])]


@pytest.fixture(scope="session")
def prepared(scenes, spec):
    return [prepare_scene(s, spec) for s in scenes]
