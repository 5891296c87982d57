import sys
from pathlib import Path

import numpy as np
import pytest

ROOT_PATH = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT_PATH))
sys.path.insert(0, str(ROOT_PATH.joinpath("src")))

from head_model import (  # noqa: E402
    HeadModel,
    SourceSpace,
    build_sensor_array,
    build_source_space,
    compute_leadfield,
    graph_laplacian,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_space():
    return build_source_space(n=80, r_cortex=0.8, k=4, seed=0)


@pytest.fixture(scope="session")
def small_sensors():
    return build_sensor_array(16)


@pytest.fixture(scope="session")
def small_lead_field(small_space, small_sensors):
    return compute_leadfield(HeadModel(), small_space, small_sensors, workers=1)


@pytest.fixture(scope="session")
def small_laplacian(small_space):
    return graph_laplacian(small_space)


@pytest.fixture(scope="session")
def path_laplacian():
    """Laplacian of the 3-node path 0 - 1 - 2."""
    space = SourceSpace(
        positions=np.eye(3) * 0.5,
        roi_labels=[0, 0, 0],
        adjacency=((1,), (0, 2), (1,)),
    )
    return graph_laplacian(space)


DESK_CFG = """\
# desk-size problem for the bench and command-line tests
[head]
n_sources: 60
n_sensors: 16
n_rois: 4

[suite]
regions: 0, 1, 2, 3

[classic]
lambda_points: 5
max_iter: 2000

[moeaar]
iterations: 2
ls_max_iter: 5

[bench]
methods: ridge-l, lasso, moeaar-l0
repeat: 1
workers: 1
"""


@pytest.fixture(scope="session")
def desk_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("config").joinpath("desk.cfg")
    path.write_text(DESK_CFG, encoding="utf-8")
    return path
