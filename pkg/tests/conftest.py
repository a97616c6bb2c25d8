"""
Pytest configuration and fixtures for the current-harnessing MPC tests.
"""

import os
from pathlib import Path

import numpy as np
import pytest

# Set test environment
os.environ['ENVIRONMENT'] = 'testing'
os.environ['SHOW_PROGRESS'] = 'false'
os.environ['COMPARE_WORKERS'] = '1'

from models.schemas import CostWeights, GateParams, VehicleParams  # noqa: E402
from services.actuation import default_allocation_model, fit_power_model, load_calibration  # noqa: E402
from services.vehicle import load_vehicle_params  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = REPO_ROOT / 'data'
SCENARIO_DIR = DATA_DIR / 'scenarios'


@pytest.fixture(scope='session')
def params() -> VehicleParams:
    """Bundled BlueROV2 parameters."""
    return load_vehicle_params(DATA_DIR / 'vehicle' / 'bluerov2.yaml')


@pytest.fixture(scope='session')
def neutral_params(params) -> VehicleParams:
    """Neutrally buoyant vehicle with coincident centres (no restoring loads)."""
    return params.model_copy(update={'B': params.W, 'Z_G': 0.0})


@pytest.fixture
def weights() -> CostWeights:
    """Default tracking and shaping weights."""
    return CostWeights()


@pytest.fixture
def gate() -> GateParams:
    """Default gate constants."""
    return GateParams()


@pytest.fixture(scope='session')
def allocation():
    """BlueROV2 Heavy allocation model."""
    return default_allocation_model()


@pytest.fixture(scope='session')
def power_model():
    """Power law fitted on the bundled T200 table."""
    return fit_power_model(load_calibration(DATA_DIR / 'thrusters' / 't200_16v.cal'))


@pytest.fixture
def rng():
    """Seeded generator for randomized property tests."""
    return np.random.default_rng(20240611)


@pytest.fixture
def out_dir(tmp_path) -> Path:
    """Empty output directory."""
    path = tmp_path / 'out'
    path.mkdir()
    return path


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR
