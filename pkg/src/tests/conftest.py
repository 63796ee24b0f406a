import copy

import pytest

from src.association.gating import GateConfig, ScoreConfig
from src.association.screening import CandidateScreener, EndpointStore, ScreeningConfig
from src.tracking.tracker import RelabelTracker

from .config import TEST_CONFIG, synthetic_stream


@pytest.fixture
def test_config():
    """A private copy of the small-scale run configuration."""
    return copy.deepcopy(TEST_CONFIG)


@pytest.fixture
def tracker():
    return RelabelTracker.from_config(TEST_CONFIG)


@pytest.fixture
def screener():
    return CandidateScreener(GateConfig(), ScoreConfig(), ScreeningConfig())


@pytest.fixture
def store():
    return EndpointStore.from_configs(ScreeningConfig(), ScoreConfig())


@pytest.fixture(scope='session')
def synthetic():
    """One day of preprocessed synthetic traffic: (posits, truth)."""
    return synthetic_stream(n_vessels=12, days=1, seed=3)
