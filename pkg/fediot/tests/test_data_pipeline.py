import numpy as np
import pytest

from fediot.data_pipeline import (
    RawTable,
    ScalerStats,
    SynthConfig,
    clean,
    dataset_fingerprint,
    device_csv_name,
    ingest_csv,
    load_device_tables,
    prepare_device,
    split_and_scale,
    synth_device_model,
    synth_generate,
    write_csv,
)
from fediot.errors import ConfigurationError, DataFormatError
from fediot.numeric import RngStream, rng_shuffle
from fediot.tests.helpers import small_synth


def _table(rows, tags, header=None):
    rows = np.asarray(rows, dtype=np.float64)
    header = header or tuple(f"f{j}" for j in range(rows.shape[1]))
    return RawTable(header, rows, tuple(tags))


def _benign_table(n_benign, n_anomalous=5, cols=3, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n_benign + n_anomalous, cols))
    return _table(rows, ["benign"] * n_benign + ["scan"] * n_anomalous)


def test_ingest_csv_extracts_type_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,Type,b\n1,benign,2\n3,scan,4\n5,benign,6\n")
    table = ingest_csv(path)
    assert table.type_tags == ("benign", "scan", "benign")
    assert table.header == ("a", "b")
    np.testing.assert_array_equal(table.rows, [[1, 2], [3, 4], [5, 6]])


def test_ingest_csv_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("x,y,type\n")
    table = ingest_csv(path)
    assert table.num_rows == 0
    assert table.header == ("x", "y")


def test_ingest_csv_missing_type_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(DataFormatError):
        ingest_csv(path)


def test_ingest_csv_non_numeric_cell_becomes_invalid(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y,type\n1,oops,benign\n2,3,benign\n")
    table = ingest_csv(path)
    assert np.isnan(table.rows[0, 1])
    assert clean(table).num_rows == 1


def test_csv_round_trip(tmp_path):
    table = synth_generate(small_synth())[0]
    path = write_csv(table, tmp_path / "device_01.csv")
    assert table.equals(ingest_csv(path)), "re-ingested table differs from the written one"


def test_clean_removes_invalid_and_duplicates():
    table = _table([[1, 2], [np.nan, 0], [3, np.inf], [1, 2], [4, 5]], ["benign"] * 5)
    cleaned = clean(table)
    np.testing.assert_array_equal(cleaned.rows, [[1, 2], [4, 5]])
    assert cleaned.type_tags == ("benign", "benign")


def test_clean_dedupe_preserves_first_occurrence_order():
    distinct = np.random.default_rng(0).normal(size=(6, 4))
    order = [3, 0, 3, 5, 1, 0, 2, 4, 5, 1, 2, 4]
    cleaned = clean(_table(distinct[order], ["benign"] * len(order)))
    np.testing.assert_array_equal(cleaned.rows, distinct[[3, 0, 5, 1, 2, 4]])


def test_clean_keeps_signed_zero_distinct():
    cleaned = clean(_table([[0.0, 1.0], [-0.0, 1.0]], ["benign", "benign"]))
    assert cleaned.num_rows == 2


def test_clean_is_idempotent_and_drops_id_column():
    table = _table([[1, 10, 20], [2, 10, 20], [3, 11, 21]], ["benign"] * 3)
    once = clean(table)
    assert clean(once).equals(once)
    without_id = clean(table, drop_id_column=True)
    assert without_id.header == ("f1", "f2")
    assert without_id.num_rows == 3, "dedupe happens before the ID column is removed"


@pytest.mark.parametrize("n_benign, expected", [(9, (3, 3, 3)), (10, (4, 3, 3)), (11, (5, 3, 3))])
def test_split_thirds_with_remainder_to_train(n_benign, expected):
    ds = split_and_scale(_benign_table(n_benign), RngStream(1))
    sizes = (len(ds.source_rows["train"]), len(ds.source_rows["threshold"]), len(ds.source_rows["test_benign"]))
    assert sizes == expected
    assert ds.num_train == expected[0]


def test_split_partitions_are_disjoint_and_exhaustive():
    table = _benign_table(100, 40)
    ds = split_and_scale(table, RngStream(2))
    parts = [set(ds.source_rows[k].tolist()) for k in ("train", "threshold", "test_benign")]
    assert sum(len(p) for p in parts) == 100
    assert set.union(*parts) == set(np.flatnonzero(table.benign_mask()).tolist())
    assert all(a.isdisjoint(b) for i, a in enumerate(parts) for b in parts[i + 1:])


def test_split_order_comes_from_the_split_stream():
    table = _benign_table(30, 20)
    stream = RngStream(4).derive("split", client=2)
    ds = split_and_scale(table, stream)
    shuffled = np.flatnonzero(table.benign_mask())[rng_shuffle(stream, 30)]
    np.testing.assert_array_equal(ds.source_rows["train"], shuffled[:10])
    np.testing.assert_array_equal(ds.source_rows["test_benign"], shuffled[20:])
    anomalous = ds.source_rows["test_anomalous"]
    assert len(set(anomalous.tolist())) == anomalous.size == 20


def test_split_label_purity_and_anomaly_cap():
    table = _benign_table(30, 200)
    ds = split_and_scale(table, RngStream(3), anomaly_mix_ratio=5.0)
    assert int(ds.test_labels.sum()) == 50
    benign = table.benign_mask()
    test_rows = np.concatenate([ds.source_rows["test_benign"], ds.source_rows["test_anomalous"]])
    for row, label in zip(test_rows, ds.test_labels):
        assert benign[row] == (label == 0)

    capped = split_and_scale(_benign_table(30, 7), RngStream(3))
    assert int(capped.test_labels.sum()) == 7


def test_split_scaler_standardizes_train():
    rows = np.random.default_rng(4).normal(3.0, 5.0, size=(90, 4))
    rows[:, 2] = 7.0
    table = _table(np.vstack([rows, np.ones((5, 4))]), ["benign"] * 90 + ["combo"] * 5)
    ds = split_and_scale(table, RngStream(4))
    np.testing.assert_allclose(ds.train_benign.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(ds.train_benign[:, [0, 1, 3]].std(axis=0), 1.0, atol=1e-9)
    assert np.all(np.isfinite(ds.test_features)), "zero-variance column must not produce NaN"


def test_split_scaler_ignores_non_training_rows():
    table = _benign_table(60, 20)
    ds = split_and_scale(table, RngStream(5))
    altered_rows = table.rows.copy()
    altered_rows[ds.source_rows["threshold"]] += 100.0
    altered_rows[ds.source_rows["test_benign"]] -= 50.0
    altered = split_and_scale(RawTable(table.header, altered_rows, table.type_tags), RngStream(5))
    np.testing.assert_array_equal(altered.scaler.mean, ds.scaler.mean)
    np.testing.assert_array_equal(altered.scaler.std, ds.scaler.std)


def test_split_requires_benign_and_anomalous_rows():
    with pytest.raises(ConfigurationError):
        split_and_scale(_benign_table(2, 5), RngStream(0))
    with pytest.raises(ConfigurationError):
        split_and_scale(_benign_table(9, 0), RngStream(0))


def test_scaler_inverse_transform():
    rows = np.random.default_rng(6).normal(size=(20, 3))
    scaler = ScalerStats.fit(rows)
    np.testing.assert_allclose(scaler.inverse_transform(scaler.transform(rows)), rows, atol=1e-12)


def test_synth_generate_counts_and_determinism():
    cfg = small_synth(seed=9)
    first, second = synth_generate(cfg), synth_generate(cfg)
    assert len(first) == cfg.num_devices
    for a, b, n_benign, n_anomalous in zip(first, second, cfg.benign_rows, cfg.anomaly_rows):
        assert a.equals(b)
        assert int(a.benign_mask().sum()) == n_benign
        assert a.num_rows == n_benign + n_anomalous
        assert set(a.type_tags) <= {"benign", *cfg.attack_families}


def test_synth_default_sizes_are_non_iid():
    cfg = SynthConfig()
    assert len(cfg.benign_rows) == 9
    assert max(cfg.benign_rows) / min(cfg.benign_rows) >= 3
    assert cfg.anomaly_rows == tuple(4 * b for b in cfg.benign_rows)


def test_synth_anomalies_lie_off_the_benign_manifold():
    cfg = small_synth(seed=2)
    for d, table in enumerate(synth_generate(cfg)):
        distance = synth_device_model(cfg, d).manifold_distance(table.rows)
        benign = table.benign_mask()
        assert distance[benign].mean() < distance[~benign].mean(), f"device {d}"


def test_synth_config_validation():
    with pytest.raises(ConfigurationError):
        SynthConfig(noise_scale=1.0, anomaly_shift_scale=0.5).validate()
    with pytest.raises(ConfigurationError):
        SynthConfig(num_devices=2, benign_rows=(10, 10, 10)).validate()
    with pytest.raises(ConfigurationError):
        SynthConfig(attack_families=("benign",)).validate()


def test_load_device_tables_sorted(tmp_path):
    for d, table in enumerate(synth_generate(small_synth(num_devices=3))):
        write_csv(table, tmp_path / device_csv_name(d))
    loaded = load_device_tables(str(tmp_path / "device_*.csv"))
    assert [name for name, _ in loaded] == ["device_01", "device_02", "device_03"]
    with pytest.raises(DataFormatError):
        load_device_tables(str(tmp_path / "missing_*.csv"))


def test_dataset_fingerprint_tracks_data():
    tables = synth_generate(small_synth())
    a = [prepare_device(t, str(i), RngStream(0).derive("split", client=i)) for i, t in enumerate(tables)]
    b = [prepare_device(t, str(i), RngStream(0).derive("split", client=i)) for i, t in enumerate(tables)]
    c = [prepare_device(t, str(i), RngStream(1).derive("split", client=i)) for i, t in enumerate(tables)]
    assert dataset_fingerprint(a) == dataset_fingerprint(b)
    assert dataset_fingerprint(a) != dataset_fingerprint(c)
