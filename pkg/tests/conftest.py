from __future__ import annotations

import pytest

from eigenshield.defense import CalibrationConfig, calibrate
from eigenshield.synthetic import planted_inputs
from eigenshield.validation import FILTER_FIXTURE


@pytest.fixture(scope="session")
def planted_data():
    """Two planted spikes with two co-occurring spurious directions."""
    return planted_inputs(0, **FILTER_FIXTURE)


@pytest.fixture(scope="session")
def planted_calibration(planted_data):
    return calibrate(planted_data.inputs, config=CalibrationConfig(seed=0))
