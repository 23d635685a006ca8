from pathlib import Path

import numpy as np
import pytest

from integrator import TimeSpec
from mesh_fields import Field, GridSpec
from models import CompetitionParams, InitialData, PredPreyParams

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def line_grid():
    return GridSpec.uniform(32)


@pytest.fixture
def competition():
    return CompetitionParams()


@pytest.fixture
def predprey():
    return PredPreyParams()


@pytest.fixture
def equilibrium_data(line_grid):
    """Competition coexistence state (2/3, 2/3) with w = v."""
    level = Field.constant(line_grid, 2.0 / 3.0)
    return InitialData(level, level, level)


@pytest.fixture
def short_time():
    return TimeSpec(t_end=0.05, fixed_dt=1e-3, snapshot_stride=10)


@pytest.fixture
def config_dir():
    return CONFIG_DIR
