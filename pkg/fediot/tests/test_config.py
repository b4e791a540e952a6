import json

import pytest

from fediot.config import ENV_OVERRIDES, ExperimentConfig, build_config, load_config, read_config_file
from fediot.errors import ConfigurationError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    """Keep host environment variables and any .env file out of these tests."""
    for name in ENV_OVERRIDES:
        # setenv first so teardown also removes values loaded from .env
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)


def _write(tmp_path, values):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(values))
    return path


def test_defaults():
    """Empty config gives the reference hyperparameters."""
    config = build_config({})
    assert config.federated.num_clients == 9
    assert config.federated.aggregator == "fedavg"
    assert config.data_source == "synth"
    assert config.synth.num_devices == 9
    assert config.anomaly_mix_ratio == 5.0
    assert config.encoder_ratios == (0.75, 0.5, 0.33, 0.25)


def test_file_values_are_applied(tmp_path):
    path = _write(tmp_path, {
        "num_rounds": 2,
        "aggregator": "fedavgm",
        "learning_rate": 0.05,
        "data.feature_dim": 20,
        "data.benign_rows": [100, 120, 140],
        "num_clients": 3,
        "num_selected": 2,
        "hidden_activation": "tanh",
    })
    config = load_config(path)
    assert config.federated.num_rounds == 2
    assert config.federated.aggregator == "fedavgm"
    assert config.federated.learning_rate == 0.05
    assert config.synth.feature_dim == 20
    assert config.synth.benign_rows == (100, 120, 140)
    assert config.synth.num_devices == 3
    assert config.architecture(20).hidden_activation == "tanh"


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError, match="Unknown config keys"):
        build_config({"learning_rat": 0.1})


@pytest.mark.parametrize("values", [
    {"num_selected": 12},
    {"num_rounds": "many"},
    {"num_rounds": 2.5},
    {"aggregator": "krum"},
    {"data.source": "parquet"},
    {"data.source": "csv"},
    {"data.num_devices": 4},
    {"encoder_ratios": [0.5, 0.75]},
    {"parallel_clients": "maybe"},
    {"log_level": "LOUD"},
])
def test_invalid_values_rejected(values):
    with pytest.raises(ConfigurationError):
        build_config(values)


def test_csv_source_needs_pattern():
    config = build_config({"data.source": "csv", "data.path_pattern": "data/*.csv", "data.drop_id_column": True})
    assert config.path_pattern == "data/*.csv"
    assert config.drop_id_column is True


def test_bad_json_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        read_config_file(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        read_config_file(path)


def test_precedence_cli_over_env_over_file(tmp_path, monkeypatch):
    path = _write(tmp_path, {"seed": 1, "out_dir": "from_file"})
    assert load_config(path).seed == 1

    monkeypatch.setenv("FEDIOT_SEED", "2")
    monkeypatch.setenv("FEDIOT_OUT_DIR", "from_env")
    config = load_config(path)
    assert config.seed == 2
    assert config.out_dir == "from_env"

    config = load_config(path, {"seed": 3, "out_dir": None})
    assert config.seed == 3
    assert config.out_dir == "from_env", "None overrides are ignored"


def test_dotenv_file_is_read(tmp_path):
    (tmp_path / ".env").write_text("FEDIOT_LOG_LEVEL=debug\n")
    assert load_config().log_level == "DEBUG"


def test_synth_seed_follows_master_seed():
    config = build_config({"seed": 17})
    assert config.synth.seed == 17


def test_flat_dict_round_trip():
    config = build_config({"num_rounds": 3, "data.noise_scale": 0.1})
    rebuilt = build_config(config.to_flat_dict())
    assert rebuilt == config
    assert isinstance(ExperimentConfig().to_flat_dict()["encoder_ratios"], list)


def test_run_metadata_in_config_echo_is_ignored(tmp_path):
    echo = {
        **ExperimentConfig().to_flat_dict(),
        "command": "run",
        "dataset_fingerprint": "0" * 64,
        "federation_time_sec": 1.5,
        "thresholds": {"device_01": 0.2},
        "seed": 11,
    }
    values = read_config_file(_write(tmp_path, echo))
    assert "command" not in values and "thresholds" not in values
    assert load_config(_write(tmp_path, echo)).seed == 11
    with pytest.raises(ConfigurationError, match="Unknown config keys"):
        build_config({"comand": "run"})
