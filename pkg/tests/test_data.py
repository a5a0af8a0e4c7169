import os
import struct

import numpy as np
import pytest
from _synth import synth_raw, write_uci
from hypothesis import given, settings
from hypothesis import strategies as st

from biglittle.data import (ActivityLabel, HarDataError, HarDataset, HarRescaler, Sensor, build_mcu_sequence,
                            dual_pair, label_changes, load_ucihar, mcu_sequence_indices, read_cache, rescale,
                            select_sensor, stretch, write_cache)


@pytest.fixture
def three_row(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 128, 3, 3))
    X_test = rng.normal(size=(2, 128, 3, 3))
    write_uci(tmp_path, X, np.array([5, 1, 3]), X_test, np.array([2, 2]), fmt="%.17g")
    return tmp_path, X, X_test


def test_three_row_fixture_loads_in_order(three_row):
    root, X, X_test = three_row
    ds = load_ucihar(root)
    assert ds.X_train.shape == (3, 128, 3, 3) and ds.X_test.shape == (2, 128, 3, 3)
    assert ds.y_train.tolist() == [5, 1, 3]
    assert np.array_equal(ds.X_train, X) and np.array_equal(ds.X_test, X_test)
    again = load_ucihar(root)
    assert again.X_train.tobytes() == ds.X_train.tobytes()


def test_env_var_fallback(three_row, monkeypatch):
    monkeypatch.setenv("BIGLITTLE_UCIHAR", os.fspath(three_row[0]))
    assert load_ucihar().y_train.tolist() == [5, 1, 3]
    monkeypatch.delenv("BIGLITTLE_UCIHAR")
    with pytest.raises(HarDataError, match="BIGLITTLE_UCIHAR"):
        load_ucihar()


def test_truncated_row_names_file_and_line(three_row):
    root = three_row[0]
    path = root / "train" / "Inertial Signals" / "body_gyro_y_train.txt"
    lines = path.read_text().splitlines()
    lines[1] = " ".join(lines[1].split()[:127])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(HarDataError, match=r"body_gyro_y_train\.txt:2: expected 128 values, found 127"):
        load_ucihar(root)


def test_bad_label_and_missing_file(three_row):
    root = three_row[0]
    (root / "test" / "y_test.txt").write_text("2\n7\n")
    with pytest.raises(HarDataError, match=r"y_test\.txt:2"):
        load_ucihar(root)
    (root / "test" / "Inertial Signals" / "total_acc_z_test.txt").unlink()
    with pytest.raises(HarDataError, match="missing file"):
        load_ucihar(root)


def test_row_count_mismatch(three_row):
    root = three_row[0]
    path = root / "train" / "Inertial Signals" / "total_acc_x_train.txt"
    path.write_text("\n".join(path.read_text().splitlines()[:2]) + "\n")
    with pytest.raises(HarDataError, match="2 rows"):
        load_ucihar(root)


def test_rescale_endpoints_and_hand_value():
    X = np.zeros((2, 128, 3, 3))
    X[..., 0] = np.linspace(-2, 2, 2 * 128 * 3).reshape(2, 128, 3)
    X[0, 0, 0, 1], X[1, 0, 0, 1] = -5.0, 3.0
    r = HarRescaler().fit(X)
    probe = np.zeros((1, 128, 3, 3))
    probe[0, 0, 0] = [-2, -5, 0]
    probe[0, 1, 0] = [2, 3, 0]
    probe[0, 2, 0] = [1, -1, 0]
    probe[0, 3, 0] = [0, 0, 0]
    q = r.transform(probe)
    assert q[0, 0, 0].tolist() == [-128, -128, 0]
    assert q[0, 1, 0].tolist() == [127, 127, 0]
    # (1 + 2) / 4 * 255 - 128 = 63.25
    assert abs(int(q[0, 2, 0, 0]) - 64) <= 1
    assert int(q[0, 3, 0, 0]) in (-1, 0, 1)
    # constant third sensor maps to 0
    assert not q[..., 2].any()


def test_rescale_uses_train_only_and_clamps_test():
    rng = np.random.default_rng(1)
    ds = HarDataset(rng.normal(size=(4, 128, 3, 3)), np.array([1, 2, 3, 4]),
                    rng.normal(size=(2, 128, 3, 3)) * 10, np.array([1, 2]))
    out, r = rescale(ds)
    assert np.array_equal(r.data_min_, ds.X_train.min(axis=(0, 1, 2)))
    assert out.X_train.dtype == np.int8 and out.X_test.dtype == np.int8
    assert out.X_test.min() == -128 and out.X_test.max() == 127
    assert HarRescaler.from_dict(r.to_dict()).transform(ds.X_train).tobytes() == out.X_train.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_rescaled_train_stays_in_range(seed, spread):
    X = np.random.default_rng(seed).normal(0, spread, (3, 128, 3, 3))
    q = HarRescaler().fit(X).transform(X).astype(int)
    assert q.min() == -128 and q.max() == 127


def test_select_sensor_partitions_sample():
    s = np.random.default_rng(2).integers(-128, 128, (128, 3, 3))
    parts = [select_sensor(s, sensor) for sensor in Sensor]
    assert np.array_equal(np.stack(parts, axis=-1), s)
    assert np.array_equal(select_sensor(s), s[..., 2])
    assert Sensor.parse("body-gyro") is Sensor.BODY_GYRO and Sensor.parse("total_acc") is Sensor.TOTAL_ACC


def test_stretch_and_dual_pair():
    w = np.arange(128 * 3).reshape(128, 3)
    assert stretch(w).tolist() == list(range(384))
    pair = dual_pair(w, w + 1)
    assert pair.shape == (384, 2) and pair[5].tolist() == [5, 6]


def test_activity_labels():
    assert [a.value for a in ActivityLabel] == [1, 2, 3, 4, 5, 6]
    assert ActivityLabel.SITTING.roman == "IV"


def _interleaved_labels(n_per=12, seed=0):
    labels = np.repeat(np.arange(1, 7), n_per)
    return np.random.default_rng(seed).permutation(labels)


def test_mcu_sequence_structure():
    y = _interleaved_labels()
    X = np.arange(len(y))[:, None, None, None] * np.ones((1, 128, 3, 3))
    Xs, ys, idx = build_mcu_sequence(X, y)
    assert len(ys) == 60 and np.bincount(ys).tolist() == [0] + [10] * 6
    assert label_changes(ys).tolist() == [10, 20, 30, 40, 50]
    # first ten of each class in dataset order
    for c in range(1, 7):
        assert idx[(c - 1) * 10:c * 10].tolist() == np.flatnonzero(y == c)[:10].tolist()
    assert np.array_equal(Xs[:, 0, 0, 0], idx)


def test_mcu_sequence_refuses_short_class():
    y = np.concatenate([np.repeat(np.arange(1, 6), 10), np.full(9, 6)])
    with pytest.raises(HarDataError, match="VI"):
        mcu_sequence_indices(y)


def test_cache_roundtrip(tmp_path):
    X, y = synth_raw((3,) * 6, seed=1)
    ds, _ = rescale(HarDataset(X, y, X[:5], y[:5]))
    path = write_cache(ds, tmp_path / "c.bin")
    magic, version, n_train, n_test = struct.unpack_from("<4sHII", path.read_bytes())
    assert (magic, version, n_train, n_test) == (b"BLHR", 1, 18, 5)
    back = read_cache(path)
    for name in ("X_train", "y_train", "X_test", "y_test"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.train_counts.tolist() == [3] * 6


def test_cache_rejects_damage(tmp_path):
    X, y = synth_raw((1,) * 6)
    ds, _ = rescale(HarDataset(X, y, X, y))
    path = write_cache(ds, tmp_path / "c.bin")
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-1])
    with pytest.raises(HarDataError, match="bytes"):
        read_cache(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(HarDataError, match="magic"):
        read_cache(tmp_path / "magic.bin")
    with pytest.raises(ValueError):
        write_cache(HarDataset(X, y, X, y), tmp_path / "raw.bin")
