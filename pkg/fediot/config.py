"""
Experiment configuration.

A config file is a flat JSON object whose keys are the training hyperparameter
names plus the simulator's own keys (aggregator, seed, data.* and so on).
Environment variables (optionally from a ``.env`` file) and command-line flags
override the file; anything left unset takes the documented default.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import find_dotenv, load_dotenv

from fediot.autoencoder import DEFAULT_ENCODER_RATIOS, ArchitectureSpec
from fediot.data_pipeline import SynthConfig
from fediot.errors import ConfigurationError
from fediot.federation import FederatedConfig

logger = logging.getLogger(__name__)

DATA_SOURCES = ("synth", "csv")

# Config key -> SynthConfig field for the data.* namespace
_SYNTH_KEYS = {
    "data.num_devices": "num_devices",
    "data.feature_dim": "feature_dim",
    "data.benign_rows": "benign_rows",
    "data.anomaly_rows": "anomaly_rows",
    "data.manifold_rank": "manifold_rank",
    "data.noise_scale": "noise_scale",
    "data.anomaly_shift_scale": "anomaly_shift_scale",
    "data.anomaly_feature_fraction": "anomaly_feature_fraction",
    "data.device_drift": "device_drift",
    "data.attack_families": "attack_families",
}
_FEDERATED_KEYS = {f.name for f in fields(FederatedConfig)}
_EXPERIMENT_KEYS = {
    "anomaly_mix_ratio", "encoder_ratios", "hidden_activation", "out_dir", "log_level",
    "data.source", "data.path_pattern", "data.drop_id_column",
}
KNOWN_KEYS = _FEDERATED_KEYS | _EXPERIMENT_KEYS | set(_SYNTH_KEYS)

# Run metadata the runner adds to resolved_config.json; skipped when it is read back
ECHO_ONLY_KEYS = frozenset({"command", "dataset_fingerprint", "federation_time_sec", "thresholds"})

ENV_OVERRIDES = {
    "FEDIOT_SEED": "seed",
    "FEDIOT_OUT_DIR": "out_dir",
    "FEDIOT_LOG_LEVEL": "log_level",
}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, with sensible defaults."""
    federated: FederatedConfig = field(default_factory=FederatedConfig)
    encoder_ratios: Tuple[float, ...] = DEFAULT_ENCODER_RATIOS
    hidden_activation: str = "relu"
    data_source: str = "synth"
    synth: SynthConfig = field(default_factory=SynthConfig)
    path_pattern: Optional[str] = None
    drop_id_column: bool = False
    anomaly_mix_ratio: float = 5.0
    out_dir: str = "results"
    log_level: str = "INFO"

    @property
    def seed(self) -> int:
        return self.federated.seed

    def architecture(self, input_dim: int) -> ArchitectureSpec:
        return ArchitectureSpec(input_dim, self.encoder_ratios, self.hidden_activation)

    def validate(self) -> None:
        """
        Check every section.

        Raises:
            ConfigurationError: If any value is invalid or the data source is ambiguous
        """
        self.federated.validate()
        ArchitectureSpec(1, self.encoder_ratios, self.hidden_activation)
        if self.data_source not in DATA_SOURCES:
            raise ConfigurationError(f"data.source must be one of {DATA_SOURCES}, got {self.data_source!r}")
        if self.data_source == "csv" and not self.path_pattern:
            raise ConfigurationError("data.source 'csv' needs data.path_pattern")
        if self.data_source == "synth":
            if self.path_pattern:
                raise ConfigurationError("Give either synthetic settings or data.path_pattern, not both")
            if self.synth.num_devices != self.federated.num_clients:
                raise ConfigurationError(
                    f"data.num_devices ({self.synth.num_devices}) must equal num_clients "
                    f"({self.federated.num_clients})"
                )
            self.synth.validate()
        if self.anomaly_mix_ratio <= 0:
            raise ConfigurationError("anomaly_mix_ratio must be > 0")
        if not self.out_dir:
            raise ConfigurationError("out_dir must be set")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigurationError(f"Unknown log_level {self.log_level!r}")

    def to_flat_dict(self) -> Dict[str, Any]:
        """Resolved key/value view using the config-file names."""
        flat: Dict[str, Any] = dict(asdict(self.federated))
        flat.update({
            "anomaly_mix_ratio": self.anomaly_mix_ratio,
            "encoder_ratios": list(self.encoder_ratios),
            "hidden_activation": self.hidden_activation,
            "out_dir": self.out_dir,
            "log_level": self.log_level,
            "data.source": self.data_source,
            "data.path_pattern": self.path_pattern,
            "data.drop_id_column": self.drop_id_column,
        })
        if self.data_source == "synth":
            for key, attr in _SYNTH_KEYS.items():
                value = getattr(self.synth, attr)
                flat[key] = list(value) if isinstance(value, tuple) else value
        return flat


def _coerce(value: Any, kind: type, key: str) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.strip().lower() in ("true", "1", "yes")
        raise ConfigurationError(f"{key} must be a boolean, got {value!r}")
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigurationError(f"{key} must be an integer, got {value!r}")
    return kind(value)


def build_config(values: Mapping[str, Any]) -> ExperimentConfig:
    """
    Turn a flat key/value mapping into a validated ExperimentConfig.

    Raises:
        ConfigurationError: On unknown keys, wrong types or invalid values
    """
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigurationError(f"Unknown config keys: {', '.join(unknown)}")

    try:
        fed_kwargs = {}
        for f in fields(FederatedConfig):
            if f.name in values:
                kind = type(getattr(FederatedConfig(), f.name))
                fed_kwargs[f.name] = _coerce(values[f.name], kind, f.name)
        federated = FederatedConfig(**fed_kwargs)

        synth_kwargs: Dict[str, Any] = {"num_devices": federated.num_clients, "seed": federated.seed}
        for key, attr in _SYNTH_KEYS.items():
            if key not in values:
                continue
            value = values[key]
            if attr in ("benign_rows", "anomaly_rows"):
                synth_kwargs[attr] = int(value) if isinstance(value, (int, float, str)) else tuple(int(v) for v in value)
            elif attr == "attack_families":
                synth_kwargs[attr] = tuple(str(v) for v in value)
            else:
                kind = type(getattr(SynthConfig(), attr))
                synth_kwargs[attr] = _coerce(value, kind, key)

        config = ExperimentConfig(
            federated=federated,
            encoder_ratios=tuple(float(r) for r in values.get("encoder_ratios", DEFAULT_ENCODER_RATIOS)),
            hidden_activation=str(values.get("hidden_activation", "relu")),
            data_source=str(values.get("data.source", "synth")),
            synth=SynthConfig(**synth_kwargs),
            path_pattern=values.get("data.path_pattern") or None,
            drop_id_column=_coerce(values.get("data.drop_id_column", False), bool, "data.drop_id_column"),
            anomaly_mix_ratio=float(values.get("anomaly_mix_ratio", 5.0)),
            out_dir=str(values.get("out_dir", "results")),
            log_level=str(values.get("log_level", "INFO")).upper(),
        )
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid configuration value: {e}") from e

    config.validate()
    return config


def read_config_file(path) -> Dict[str, Any]:
    """
    Read a flat JSON config file.

    A run's own resolved_config.json is accepted too: its run metadata keys
    are dropped so the echo can be fed back in unchanged.

    Raises:
        ConfigurationError: If the file is not a JSON object
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must contain a JSON object")
    echoed = sorted(ECHO_ONLY_KEYS & set(raw))
    if echoed:
        logger.debug(f"Ignoring run metadata in {path}: {', '.join(echoed)}")
    return {k: v for k, v in raw.items() if k not in ECHO_ONLY_KEYS}


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Load configuration from a file, the environment and explicit overrides.

    Args:
        path: Optional JSON config file
        overrides: Values that win over everything else (``None`` entries are ignored)

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigurationError: If any value is missing, unknown or invalid
    """
    load_dotenv(find_dotenv(usecwd=True))
    values: Dict[str, Any] = read_config_file(path) if path is not None else {}

    for env_name, key in ENV_OVERRIDES.items():
        env_value = os.getenv(env_name)
        if env_value:
            values[key] = env_value
            logger.debug(f"{key} overridden from {env_name}")

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    return build_config(values)
