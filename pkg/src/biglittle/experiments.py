"""Pipeline steps shared by the command line and the end-to-end checks."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .cascade import BIG_DISTANCE, BIG_DUAL, BIG_LITTLE, CascadeConfig, bundle_from_graphs, run_sequence
from .cost import CSV_FIELDS, DeviceProfile, estimate
from .data import (HarDataError, HarDataset, Sensor, build_mcu_sequence, load_ucihar, read_cache,
                   rescale, select_sensor)
from .distance import DistanceTrigger
from .graph import ModelGraph, ModelKind
from .trainer import Hyperparams, build_dual_dataset, post_training_quantize, relabel_one_vs_rest, train

SCOPES = ("full-test", "mcu-60")
CACHE_NAME = "har_cache.bin"


class MissingArtifactError(FileNotFoundError):
    pass


def load_prepared(path) -> HarDataset:
    """Rescaled dataset from a cache file, a directory holding one, or a raw UCI-HAR root."""
    path = Path(path)
    if path.is_file():
        return read_cache(path)
    if (path / CACHE_NAME).is_file():
        return read_cache(path / CACHE_NAME)
    if not path.exists():
        raise HarDataError(f"dataset path does not exist: {path}")
    return rescale(load_ucihar(path))[0]


def model_name(kind: ModelKind, sensor=Sensor.TOTAL_ACC) -> str:
    sensor = Sensor.parse(sensor)
    if kind.family == "little" and sensor != Sensor.TOTAL_ACC:
        return f"{kind}_{sensor.prefix}"
    return str(kind)


def training_set(kind: ModelKind, X, y, sensor=Sensor.TOTAL_ACC) -> tuple:
    """``(inputs, class_indices)`` for one model family from ``(n, 128, 3, 3)`` windows."""
    X = np.asarray(X)
    y = np.asarray(y)
    if kind.family == "big":
        return [X[..., s] for s in range(3)], y - 1
    window = select_sensor(X, sensor)
    if kind.family == "little":
        return [window], relabel_one_vs_rest(y, kind.target)
    pairs, same = build_dual_dataset(window, y)
    return [pairs], same


def train_quantized(kind: ModelKind, X, y, hp: Optional[Hyperparams] = None, sensor=Sensor.TOTAL_ACC,
                    activation_ranges: str = "default") -> tuple:
    """Train in float, then quantize with the training inputs as calibration."""
    inputs, target = training_set(kind, X, y, sensor)
    fm, history = train(kind, inputs, target, hp)
    graph = post_training_quantize(fm, inputs, activation_ranges)
    meta = {"sensor": Sensor.parse(sensor).prefix, "hyperparams": (hp or Hyperparams()).to_dict()}
    return graph.with_weights(graph.weights, graph.qparams, **meta), history


def required_models(config: CascadeConfig) -> list:
    names = ["big"]
    if config.mode == BIG_LITTLE:
        names += [str(ModelKind.little(k)) for k in range(1, 7)]
    elif config.mode == BIG_DUAL:
        names.append("dual")
    return names


def load_models(models_dir, config: CascadeConfig) -> dict:
    models_dir = Path(models_dir)
    graphs = {}
    for name in required_models(config):
        path = models_dir / f"{name}.json"
        if not path.is_file():
            raise MissingArtifactError(f"{config.mode} needs model {name!r}; no manifest at {path}")
        graphs[name] = ModelGraph.load(path)
    return graphs


def select_scope(dataset: HarDataset, scope: str) -> tuple:
    if scope == "full-test":
        return dataset.X_test, dataset.y_test
    if scope == "mcu-60":
        X, y, _ = build_mcu_sequence(dataset.X_test, dataset.y_test)
        return X, y
    raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")


def simulate(dataset: HarDataset, graphs: Mapping, config: CascadeConfig, profile: DeviceProfile, freq,
             scope: str = "full-test", shrinkage: float = 0.1) -> tuple:
    """Run the cascade over a scope and cost it; returns ``(report, traces)``."""
    trigger = None
    if config.mode == BIG_DISTANCE:
        trigger = DistanceTrigger(config.metric, config.threshold, shrinkage)
        trigger.fit(select_sensor(dataset.X_train, Sensor.TOTAL_ACC))
    littles = [graphs[f"little_{k}"] for k in range(1, 7)] if config.mode == BIG_LITTLE else None
    bundle = bundle_from_graphs(graphs["big"], littles, graphs.get("dual") if config.mode == BIG_DUAL else None,
                                trigger)
    X, y = select_scope(dataset, scope)
    _, stats, traces = run_sequence(X, bundle, config, truths=y)
    energy = estimate(stats, profile, freq)
    report = {
        "config": config.label(),
        "scope": scope,
        "accuracy": stats.accuracy,
        "big_count": stats.big_count,
        "secondary_count": stats.secondary_count,
        "latency_ms": energy.latency_ms,
        "energy_mJ": energy.energy_mj,
        "device": profile.name,
        "freq_MHz": energy.freq_mhz,
    }
    assert tuple(report) == CSV_FIELDS
    return {"row": report, "stats": stats.to_dict(), "energy": energy.to_dict()}, traces


def _predict_verdicts(model, windows) -> np.ndarray:
    if callable(model) and not hasattr(model, "predict"):
        return np.asarray([int(model(w)) for w in windows])
    return np.asarray(model.predict(windows))


def sensor_study(models: Mapping, X, y) -> dict:
    """Per-sensor one-vs-rest accuracy of little models.

    ``models`` maps a sensor to ``{activity: model}`` where a model is a
    callable ``window -> 0/1`` or has ``predict``. Returns
    ``{sensor: {"per_activity": {k: acc}, "overall": mean}}``.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    table = {}
    for sensor, littles in models.items():
        s = Sensor.parse(sensor)
        windows = select_sensor(X, s)
        per = {}
        for k, model in sorted(littles.items()):
            pred = _predict_verdicts(model, windows)
            per[int(k)] = float(np.mean(pred == relabel_one_vs_rest(y, int(k))))
        table[s.prefix] = {"per_activity": per, "overall": float(np.mean(list(per.values())))}
    return table


def rank_sensors(table: Mapping) -> list:
    """Sensor names by overall accuracy, best first (ties keep insertion order)."""
    return sorted(table, key=lambda s: -table[s]["overall"])
