"""UCI-HAR inertial-signal loading, integer rescaling and sequence building.

Arrays use the layout ``(n, 128, 3 axes, 3 sensors)`` with sensors ordered
body accelerometer, body gyroscope, total accelerometer.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .quant import round_half_away

WINDOW = 128
N_CLASSES = 6
DATASET_ENV = "BIGLITTLE_UCIHAR"

CACHE_MAGIC = b"BLHR"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHII")


class HarDataError(ValueError):
    """Malformed or missing dataset files."""


class ActivityLabel(IntEnum):
    WALKING = 1
    WALKING_UPSTAIRS = 2
    WALKING_DOWNSTAIRS = 3
    SITTING = 4
    STANDING = 5
    LAYING = 6

    @property
    def roman(self) -> str:
        return ("I", "II", "III", "IV", "V", "VI")[self.value - 1]


class Sensor(IntEnum):
    BODY_ACC = 0
    BODY_GYRO = 1
    TOTAL_ACC = 2

    @property
    def prefix(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Sensor":
        if isinstance(value, Sensor):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "_")
            if key in cls.__members__:
                return cls[key]
        return cls(int(value))


@dataclass(eq=False)
class HarDataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def train_counts(self) -> np.ndarray:
        return np.bincount(self.y_train, minlength=N_CLASSES + 1)[1:]

    @property
    def test_counts(self) -> np.ndarray:
        return np.bincount(self.y_test, minlength=N_CLASSES + 1)[1:]


def _read_matrix(path: Path, width: int) -> np.ndarray:
    if not path.is_file():
        raise HarDataError(f"missing file: {path}")
    text = path.read_text()
    lines = text.rstrip("\n").split("\n") if text.strip() else []
    try:
        arr = np.loadtxt(io.StringIO(text), ndmin=2, dtype=np.float64)
        if arr.shape == (len(lines), width) and np.isfinite(arr).all():
            return arr
    except ValueError:
        pass
    for lineno, line in enumerate(lines, start=1):
        fields = line.split()
        if len(fields) != width:
            raise HarDataError(f"{path}:{lineno}: expected {width} values, found {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise HarDataError(f"{path}:{lineno}: {exc}") from None
        if not np.isfinite(vals).all():
            raise HarDataError(f"{path}:{lineno}: non-finite value")
    raise HarDataError(f"{path}: could not parse")


def _read_labels(path: Path) -> np.ndarray:
    if not path.is_file():
        raise HarDataError(f"missing file: {path}")
    labels = []
    for lineno, line in enumerate(path.read_text().rstrip("\n").split("\n"), start=1):
        try:
            v = int(line.strip())
        except ValueError:
            raise HarDataError(f"{path}:{lineno}: not an integer label: {line.strip()!r}") from None
        if not 1 <= v <= N_CLASSES:
            raise HarDataError(f"{path}:{lineno}: label {v} outside 1..{N_CLASSES}")
        labels.append(v)
    return np.asarray(labels, dtype=np.int64)


def load_split(root, split: str) -> tuple:
    root = Path(root)
    base = root / split
    signals = []
    n = None
    for sensor in Sensor:
        axes = []
        for axis in "xyz":
            path = base / "Inertial Signals" / f"{sensor.prefix}_{axis}_{split}.txt"
            m = _read_matrix(path, WINDOW)
            if n is not None and m.shape[0] != n:
                raise HarDataError(f"{path}: {m.shape[0]} rows, other signal files have {n}")
            n = m.shape[0]
            axes.append(m)
        signals.append(np.stack(axes, axis=-1))
    y_path = base / f"y_{split}.txt"
    y = _read_labels(y_path)
    if y.shape[0] != n:
        raise HarDataError(f"{y_path}: {y.shape[0]} labels for {n} windows")
    return np.stack(signals, axis=-1), y


def load_ucihar(root=None) -> HarDataset:
    """Read the raw float windows of the public UCI-HAR layout in file order."""
    root = root if root is not None else os.environ.get(DATASET_ENV)
    if root is None:
        raise HarDataError(f"no dataset root given and ${DATASET_ENV} is unset")
    root = Path(root)
    if not root.is_dir():
        raise HarDataError(f"dataset root is not a directory: {root}")
    X_train, y_train = load_split(root, "train")
    X_test, y_test = load_split(root, "test")
    return HarDataset(X_train, y_train, X_test, y_test)


class HarRescaler(TransformerMixin, BaseEstimator):
    """Per-sensor affine map of the training range onto integers [-128, 127].

    Fitted on training windows only; data outside the fitted range is
    clamped. A sensor with a constant signal maps to 0.

    Attributes
    ----------
    data_min_, data_max_ : ndarray of shape (n_sensors,)
        Global minimum and maximum of each sensor over the training split.
    """

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, ensure_min_features=1)
        if X.ndim != 4:
            raise ValueError(f"expected (n, length, axes, sensors) windows, got shape {X.shape}")
        self.data_min_ = X.min(axis=(0, 1, 2))
        self.data_max_ = X.max(axis=(0, 1, 2))
        self.n_sensors_ = X.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, allow_nd=True)
        if X.shape[-1] != self.n_sensors_:
            raise ValueError(f"expected {self.n_sensors_} sensors, got {X.shape[-1]}")
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        q = round_half_away((X - self.data_min_) / safe * 255.0 - 128.0)
        q = np.where(span > 0, q, 0.0)
        return np.clip(q, -128, 127).astype(np.int8)

    def to_dict(self) -> dict:
        check_is_fitted(self, "data_min_")
        return {"data_min": self.data_min_.tolist(), "data_max": self.data_max_.tolist()}

    @classmethod
    def from_dict(cls, d) -> "HarRescaler":
        r = cls()
        r.data_min_ = np.asarray(d["data_min"], dtype=np.float64)
        r.data_max_ = np.asarray(d["data_max"], dtype=np.float64)
        r.n_sensors_ = r.data_min_.shape[0]
        return r


def rescale(dataset: HarDataset) -> tuple:
    """Fit the rescaler on train and apply it to both splits."""
    rescaler = HarRescaler().fit(dataset.X_train)
    out = HarDataset(rescaler.transform(dataset.X_train), dataset.y_train,
                     rescaler.transform(dataset.X_test), dataset.y_test)
    return out, rescaler


def select_sensor(samples, sensor=Sensor.TOTAL_ACC) -> np.ndarray:
    """The ``(..., 128, 3)`` window of one sensor."""
    return np.asarray(samples)[..., Sensor.parse(sensor)]


def stretch(windows) -> np.ndarray:
    """Flatten ``(..., 128, 3)`` windows row-major into ``(..., 384)`` vectors."""
    w = np.asarray(windows)
    return w.reshape(w.shape[:-2] + (w.shape[-2] * w.shape[-1],))


def dual_pair(prev_window, window) -> np.ndarray:
    """``(384, 2)`` input for the dual network: previous, then current."""
    return np.stack([stretch(prev_window), stretch(window)], axis=-1)


def label_changes(labels) -> np.ndarray:
    """Indices i > 0 where ``labels[i] != labels[i - 1]``."""
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def mcu_sequence_indices(labels, per_class: int = 10) -> np.ndarray:
    """First ``per_class`` windows of each activity, activities in order I..VI."""
    labels = np.asarray(labels)
    idx = []
    for activity in ActivityLabel:
        hits = np.flatnonzero(labels == activity.value)
        if hits.size < per_class:
            raise HarDataError(f"activity {activity.roman} ({activity.name}) has {hits.size} samples, "
                               f"need {per_class}")
        idx.extend(hits[:per_class].tolist())
    return np.asarray(idx, dtype=np.int64)


def build_mcu_sequence(X, y, per_class: int = 10) -> tuple:
    idx = mcu_sequence_indices(y, per_class)
    return np.asarray(X)[idx], np.asarray(y)[idx], idx


def write_cache(dataset: HarDataset, path) -> Path:
    """Packed little-endian cache of a rescaled dataset."""
    path = Path(path)
    for name in ("X_train", "X_test"):
        a = getattr(dataset, name)
        if a.dtype != np.int8:
            raise ValueError(f"{name} must be rescaled int8 windows before caching")
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, len(dataset.y_train), len(dataset.y_test))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.X_train).tobytes())
        fh.write(dataset.y_train.astype(np.uint8).tobytes())
        fh.write(np.ascontiguousarray(dataset.X_test).tobytes())
        fh.write(dataset.y_test.astype(np.uint8).tobytes())
    return path


def read_cache(path) -> HarDataset:
    path = Path(path)
    if not path.is_file():
        raise HarDataError(f"missing cache file: {path}")
    raw = path.read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise HarDataError(f"{path}: truncated header")
    magic, version, n_train, n_test = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise HarDataError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise HarDataError(f"{path}: unsupported cache version {version}")
    per = WINDOW * 3 * 3
    expected = _CACHE_HEADER.size + (n_train + n_test) * (per + 1)
    if len(raw) != expected:
        raise HarDataError(f"{path}: {len(raw)} bytes, expected {expected}")
    off = _CACHE_HEADER.size

    def take(count, dtype):
        nonlocal off
        a = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a

    X_train = take(n_train * per, np.int8).reshape(n_train, WINDOW, 3, 3)
    y_train = take(n_train, np.uint8).astype(np.int64)
    X_test = take(n_test * per, np.int8).reshape(n_test, WINDOW, 3, 3)
    y_test = take(n_test, np.uint8).astype(np.int64)
    return HarDataset(X_train, y_train, X_test, y_test)


def resolve_root(root: Optional[str]) -> Optional[Path]:
    root = root or os.environ.get(DATASET_ENV)
    return Path(root) if root else None
