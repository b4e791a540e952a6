import pytest

from fediot.config import ExperimentConfig
from fediot.tests.helpers import small_datasets, small_federated, small_synth


@pytest.fixture
def datasets():
    return small_datasets()


@pytest.fixture
def fed_config():
    return small_federated()


@pytest.fixture
def experiment_config(tmp_path):
    return ExperimentConfig(
        federated=small_federated(),
        synth=small_synth(),
        out_dir=str(tmp_path / "out"),
    )
