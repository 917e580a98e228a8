import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nfmotion.geometry import ArrayConfig, PulseConfig, TargetState


@pytest.fixture
def desk_cfg():
    return ArrayConfig.from_carrier(28e9, n_tx=64, n_rx=64, m_sub=16, d0=1.0)


@pytest.fixture
def desk_pulse():
    return PulseConfig(pri=1e-5, n_pulses=100, fc=28e9)


@pytest.fixture
def desk_target():
    return TargetState(p0=np.array([8.0, 11.0]), v0=np.array([10.0, 10.2]))


@pytest.fixture
def small_cfg():
    return ArrayConfig.from_carrier(28e9, n_tx=16, n_rx=16, m_sub=8, d0=1.0)


@pytest.fixture
def small_pulse():
    return PulseConfig(pri=1e-5, n_pulses=16, fc=28e9)
