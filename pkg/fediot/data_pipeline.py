"""
Per-device data preparation.

Covers ingestion of header-ed CSV files with a ``type`` column, cleaning
(invalid rows, exact duplicates, optional ID column), the benign three-way
split, standard scaling fitted on the training third only, anomaly mixing for
the test set, and a synthetic non-IID generator that writes the same format.
"""

from __future__ import annotations

import glob
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from fediot.errors import ConfigurationError, DataFormatError
from fediot.numeric import Matrix, RngStream, Vector, as_matrix, col_mean_std, matmul, rng_shuffle

logger = logging.getLogger(__name__)

TYPE_COLUMN = "type"
BENIGN = "benign"
ZERO_STD = 1e-12

# Non-IID benign sizes; spans 3.6x between the smallest and largest device.
_DEFAULT_BENIGN_ROWS = (1500, 1200, 600, 1800, 1350, 1050, 750, 1300, 500)
_DEFAULT_ANOMALY_FACTOR = 4


@dataclass(frozen=True)
class RawTable:
    """Feature rows of one device with their category tags."""
    header: Tuple[str, ...]
    rows: Matrix
    type_tags: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "type_tags", tuple(self.type_tags))
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            rows = rows.reshape(len(self.type_tags), len(self.header))
        object.__setattr__(self, "rows", rows)
        if len(self.type_tags) != rows.shape[0]:
            raise ConfigurationError(
                f"{len(self.type_tags)} type tags for {rows.shape[0]} rows"
            )
        if len(self.header) != rows.shape[1]:
            raise ConfigurationError(
                f"Header names {len(self.header)} columns, rows have {rows.shape[1]}"
            )

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]

    def select(self, index: npt.ArrayLike) -> RawTable:
        index = np.asarray(index, dtype=np.int64)
        return RawTable(self.header, self.rows[index], tuple(self.type_tags[i] for i in index))

    def benign_mask(self) -> npt.NDArray[np.bool_]:
        return np.array([t.strip().lower() == BENIGN for t in self.type_tags], dtype=bool)

    def equals(self, other: RawTable) -> bool:
        return (
            self.header == other.header
            and self.type_tags == other.type_tags
            and self.rows.shape == other.rows.shape
            and np.array_equal(self.rows, other.rows, equal_nan=True)
        )


@dataclass(frozen=True)
class ScalerStats:
    """Standard-scaler statistics fitted on benign training rows."""
    mean: Vector
    std: Vector

    @classmethod
    def fit(cls, rows: Matrix) -> ScalerStats:
        mean, std = col_mean_std(rows)
        return cls(mean, std)

    @property
    def divisor(self) -> Vector:
        # zero-variance features are centred but not divided
        return np.where(self.std < ZERO_STD, 1.0, self.std)

    def transform(self, rows: Matrix) -> Matrix:
        rows = as_matrix(rows, cols=self.mean.shape[0])
        return (rows - self.mean) / self.divisor

    def inverse_transform(self, rows: Matrix) -> Matrix:
        return as_matrix(rows, cols=self.mean.shape[0]) * self.divisor + self.mean


@dataclass
class DeviceDataset:
    """
    One client's standardized partitions.

    ``source_rows`` maps each partition name ("train", "threshold",
    "test_benign", "test_anomalous") to row indices of the cleaned RawTable
    the dataset was built from.
    """
    device_id: str
    train_benign: Matrix
    threshold_benign: Matrix
    test_features: Matrix
    test_labels: npt.NDArray[np.int8]
    scaler: ScalerStats
    test_types: Tuple[str, ...] = ()
    source_rows: Dict[str, npt.NDArray[np.int64]] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.train_benign.shape[1]

    @property
    def num_train(self) -> int:
        return self.train_benign.shape[0]


@dataclass
class SynthConfig:
    """
    Synthetic non-IID generator settings.

    ``benign_rows`` / ``anomaly_rows`` may be left unset (sizes are taken from
    a fixed non-IID ladder, anomalies four times benign) or given as one
    integer for every device.
    """
    num_devices: int = 9
    feature_dim: int = 115
    benign_rows: Optional[Tuple[int, ...]] = None
    anomaly_rows: Optional[Tuple[int, ...]] = None
    manifold_rank: int = 8
    noise_scale: float = 0.05
    anomaly_shift_scale: float = 3.0
    anomaly_feature_fraction: float = 0.3
    device_drift: float = 0.25
    attack_families: Tuple[str, ...] = ("scan", "combo")
    seed: int = 0

    def __post_init__(self):
        self.benign_rows = self._resolve_rows(self.benign_rows, None)
        self.anomaly_rows = self._resolve_rows(
            self.anomaly_rows, tuple(_DEFAULT_ANOMALY_FACTOR * b for b in self.benign_rows)
        )
        self.attack_families = tuple(self.attack_families)

    def _resolve_rows(self, rows, fallback) -> Tuple[int, ...]:
        if rows is None:
            if fallback is not None:
                return fallback
            ladder = _DEFAULT_BENIGN_ROWS
            return tuple(ladder[i % len(ladder)] for i in range(self.num_devices))
        if isinstance(rows, (int, np.integer)):
            return tuple(int(rows) for _ in range(self.num_devices))
        return tuple(int(r) for r in rows)

    def validate(self) -> None:
        counts = {
            "num_devices": self.num_devices,
            "feature_dim": self.feature_dim,
            "manifold_rank": self.manifold_rank,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.manifold_rank > self.feature_dim:
            raise ConfigurationError("manifold_rank cannot exceed feature_dim")
        for name in ("benign_rows", "anomaly_rows"):
            rows = getattr(self, name)
            if len(rows) != self.num_devices:
                raise ConfigurationError(f"{name} needs {self.num_devices} entries, got {len(rows)}")
            if min(rows) < 1:
                raise ConfigurationError(f"every entry of {name} must be >= 1")
        if self.noise_scale < 0:
            raise ConfigurationError("noise_scale must be >= 0")
        if not self.anomaly_shift_scale > self.noise_scale:
            raise ConfigurationError("anomaly_shift_scale must exceed noise_scale")
        if not 0.0 < self.anomaly_feature_fraction <= 1.0:
            raise ConfigurationError("anomaly_feature_fraction must be in (0, 1]")
        if not self.attack_families or BENIGN in (f.lower() for f in self.attack_families):
            raise ConfigurationError("attack_families must be non-empty and exclude 'benign'")


@dataclass(frozen=True)
class SynthDeviceModel:
    """Generative parameters of one synthetic device."""
    basis: Matrix
    offset: Vector
    scale: Vector

    def manifold_distance(self, rows: Matrix) -> Vector:
        """Distance of raw rows to the device's benign linear manifold."""
        centred = (as_matrix(rows) - self.offset) / self.scale
        coef, *_ = np.linalg.lstsq(self.basis, centred.T, rcond=None)
        residual = centred.T - self.basis @ coef
        return np.linalg.norm(residual, axis=0)


def _parse_cell(cell) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        return float("nan")


def ingest_csv(path) -> RawTable:
    """
    Load one device file.

    Args:
        path: CSV with a header row and a ``type`` column (any case)

    Returns:
        RawTable with the type column moved into ``type_tags``; cells that do
        not parse as numbers become NaN and are removed later by ``clean``

    Raises:
        DataFormatError: If the file cannot be parsed or has no type column
    """
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0).columns
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataFormatError(f"Cannot read header of {path}: {e}") from e

    type_cols = [c for c in header if str(c).strip().lower() == TYPE_COLUMN]
    if len(type_cols) != 1:
        raise DataFormatError(f"{path} must have exactly one '{TYPE_COLUMN}' column, found {len(type_cols)}")
    type_col = type_cols[0]

    try:
        frame = pd.read_csv(
            path,
            dtype={type_col: str},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
        )
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataFormatError(f"Cannot parse {path}: {e}") from e

    tags = tuple(frame[type_col].fillna("").astype(str).str.strip())
    features = frame.drop(columns=[type_col])
    for col in features.columns:
        if not pd.api.types.is_float_dtype(features[col]):
            features[col] = features[col].map(_parse_cell).astype(np.float64)

    table = RawTable(
        header=tuple(str(c) for c in features.columns),
        rows=features.to_numpy(dtype=np.float64).reshape(len(frame), features.shape[1]),
        type_tags=tags,
    )
    logger.info(f"Ingested {path.name}: {table.num_rows} rows x {len(table.header)} features")
    return table


def write_csv(table: RawTable, path) -> Path:
    """Write a RawTable in the interchange format ``ingest_csv`` reads."""
    path = Path(path)
    frame = pd.DataFrame(table.rows, columns=list(table.header))
    frame[TYPE_COLUMN] = list(table.type_tags)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.debug(f"Wrote {table.num_rows} rows to {path}")
    return path


def _first_occurrences(rows: Matrix) -> npt.NDArray[np.int64]:
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if rows.shape[1] == 0:
        return np.zeros(1, dtype=np.int64)
    # bitwise row keys, so 0.0 and -0.0 stay distinct
    keys = np.ascontiguousarray(rows).view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1])))
    _, first = np.unique(keys.ravel(), return_index=True)
    return np.sort(first).astype(np.int64)


def clean(raw: RawTable, drop_id_column: bool = False) -> RawTable:
    """
    Remove invalid rows, then exact duplicate feature rows, then optionally the ID column.

    Args:
        raw: Ingested table
        drop_id_column: Remove the first feature column after deduplication

    Returns:
        Cleaned table; duplicates keep their first occurrence and original order
    """
    finite = np.isfinite(raw.rows).all(axis=1)
    valid = raw.select(np.flatnonzero(finite))
    deduped = valid.select(_first_occurrences(valid.rows))

    removed_invalid = raw.num_rows - valid.num_rows
    removed_dupes = valid.num_rows - deduped.num_rows
    if removed_invalid or removed_dupes:
        logger.info(f"clean: dropped {removed_invalid} invalid and {removed_dupes} duplicate rows")

    if drop_id_column and deduped.header:
        return RawTable(deduped.header[1:], deduped.rows[:, 1:], deduped.type_tags)
    return deduped


def split_and_scale(raw: RawTable, stream: RngStream, anomaly_mix_ratio: float = 5.0,
                    device_id: str = "device") -> DeviceDataset:
    """
    Build the train / threshold / mixed-test partitions of one device.

    Benign rows are shuffled and cut into thirds (remainder rows go to
    training). The scaler is fitted on the training third only. The test set
    is the benign test third followed by a pooled random sample of anomalous
    rows of size min(available, anomaly_mix_ratio x benign test rows).

    Raises:
        ConfigurationError: If there are fewer than 3 benign or no anomalous rows
    """
    if anomaly_mix_ratio <= 0:
        raise ConfigurationError(f"anomaly_mix_ratio must be > 0, got {anomaly_mix_ratio}")
    benign_mask = raw.benign_mask()
    benign_idx = np.flatnonzero(benign_mask)
    anomalous_idx = np.flatnonzero(~benign_mask)
    if benign_idx.size < 3:
        raise ConfigurationError(f"{device_id}: need at least 3 benign rows, got {benign_idx.size}")
    if anomalous_idx.size < 1:
        raise ConfigurationError(f"{device_id}: need at least 1 anomalous row")

    shuffled = benign_idx[rng_shuffle(stream, benign_idx.size)]
    third = benign_idx.size // 3
    n_train = benign_idx.size - 2 * third
    train_rows = shuffled[:n_train]
    threshold_rows = shuffled[n_train:n_train + third]
    test_benign_rows = shuffled[n_train + third:]

    n_anomalous = min(anomalous_idx.size, max(1, int(anomaly_mix_ratio * third)))
    anomaly_order = rng_shuffle(stream.derive("anomaly-sample", client=stream.client), anomalous_idx.size)
    anomaly_rows = anomalous_idx[anomaly_order[:n_anomalous]]

    scaler = ScalerStats.fit(raw.rows[train_rows])
    test_rows = np.concatenate([test_benign_rows, anomaly_rows])
    labels = np.concatenate([
        np.zeros(test_benign_rows.size, dtype=np.int8),
        np.ones(anomaly_rows.size, dtype=np.int8),
    ])

    dataset = DeviceDataset(
        device_id=device_id,
        train_benign=scaler.transform(raw.rows[train_rows]),
        threshold_benign=scaler.transform(raw.rows[threshold_rows]),
        test_features=scaler.transform(raw.rows[test_rows]),
        test_labels=labels,
        scaler=scaler,
        test_types=tuple(raw.type_tags[i].strip().lower() for i in test_rows),
        source_rows={
            "train": train_rows,
            "threshold": threshold_rows,
            "test_benign": test_benign_rows,
            "test_anomalous": anomaly_rows,
        },
    )
    logger.info(
        f"{device_id}: train={n_train} threshold={third} test_benign={third} "
        f"test_anomalous={n_anomalous}"
    )
    return dataset


def prepare_device(raw: RawTable, device_id: str, stream: RngStream,
                   anomaly_mix_ratio: float = 5.0, drop_id_column: bool = False) -> DeviceDataset:
    """Clean a device table and split it; the split stream is derived from ``stream``."""
    return split_and_scale(clean(raw, drop_id_column), stream, anomaly_mix_ratio, device_id)


def synth_device_model(cfg: SynthConfig, device: int) -> SynthDeviceModel:
    """Generative model of ``device``: a drifted copy of a shared low-rank basis."""
    root = RngStream(cfg.seed)
    shared = root.derive("synth-basis").generator()
    basis = shared.normal(size=(cfg.feature_dim, cfg.manifold_rank)) / np.sqrt(cfg.manifold_rank)
    rng = root.derive("synth-device", client=device).generator()
    drift = rng.normal(size=basis.shape) / np.sqrt(cfg.manifold_rank)
    offset = rng.normal(0.0, 2.0, size=cfg.feature_dim)
    scale = rng.uniform(0.5, 2.0, size=cfg.feature_dim)
    return SynthDeviceModel(basis + cfg.device_drift * drift, offset, scale)


def synth_generate(cfg: SynthConfig) -> List[RawTable]:
    """
    Generate one RawTable per device.

    Benign rows lie near the device's rank-``manifold_rank`` manifold.
    Anomalous rows are benign-style rows shifted by ``anomaly_shift_scale``
    on a device- and family-specific random feature subset.
    """
    cfg.validate()
    header = tuple(f"feat_{j:03d}" for j in range(cfg.feature_dim))
    n_shifted = max(1, int(round(cfg.anomaly_feature_fraction * cfg.feature_dim)))
    tables = []
    for d in range(cfg.num_devices):
        model = synth_device_model(cfg, d)
        rng = RngStream(cfg.seed).derive("synth-rows", client=d).generator()
        n_benign, n_anomalous = cfg.benign_rows[d], cfg.anomaly_rows[d]
        n_total = n_benign + n_anomalous

        latent = rng.standard_normal((n_total, cfg.manifold_rank))
        noise = cfg.noise_scale * rng.standard_normal((n_total, cfg.feature_dim))
        centred = matmul(latent, model.basis.T) + noise

        families = rng.integers(0, len(cfg.attack_families), size=n_anomalous)
        for k in range(len(cfg.attack_families)):
            subset = rng.choice(cfg.feature_dim, size=n_shifted, replace=False)
            signs = rng.choice((-1.0, 1.0), size=n_shifted)
            rows = n_benign + np.flatnonzero(families == k)
            centred[np.ix_(rows, subset)] += cfg.anomaly_shift_scale * signs

        tags = [BENIGN] * n_benign + [cfg.attack_families[k] for k in families]
        tables.append(RawTable(header, centred * model.scale + model.offset, tuple(tags)))
        logger.debug(f"synth device {d}: {n_benign} benign, {n_anomalous} anomalous rows")
    return tables


def device_csv_name(device: int) -> str:
    return f"device_{device + 1:02d}.csv"


def load_device_tables(path_pattern: str) -> List[Tuple[str, RawTable]]:
    """
    Ingest every file matching ``path_pattern`` (a glob), sorted by path.

    Raises:
        DataFormatError: If no file matches
    """
    paths = sorted(glob.glob(path_pattern))
    if not paths:
        raise DataFormatError(f"No CSV files match '{path_pattern}'")
    return [(Path(p).stem, ingest_csv(p)) for p in paths]


def dataset_fingerprint(datasets: Sequence[DeviceDataset]) -> str:
    """sha256 over every prepared partition, in device order."""
    digest = hashlib.sha256()
    for ds in datasets:
        digest.update(ds.device_id.encode("utf-8"))
        for part in (ds.train_benign, ds.threshold_benign, ds.test_features,
                     ds.test_labels, ds.scaler.mean, ds.scaler.std):
            digest.update(np.ascontiguousarray(part).tobytes())
    return digest.hexdigest()
