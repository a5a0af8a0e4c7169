"""Streaming controller that decides when to wake the big model.

Secondary verdicts follow one convention everywhere: class index 1 means the
activity is the same as before, index 0 means it changed. A sample is a
``(128, 3, 3)`` window (time, axis, sensor); the secondary paths only see
the total-accelerometer channel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from .data import Sensor, dual_pair, select_sensor
from .distance import MANHATTAN_THRESHOLD, METRICS
from .graph import ModelGraph
from .quant import INPUT_QPARAMS, QMAX, QMIN
from .runtime import infer

BIG_ONLY = "big-only"
BIG_LITTLE = "big-little"
BIG_DUAL = "big-dual"
BIG_DISTANCE = "big-distance"
MODES = (BIG_ONLY, BIG_LITTLE, BIG_DUAL, BIG_DISTANCE)

SAME = 1
CHANGED = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CascadeConfig:
    mode: str = BIG_LITTLE
    metric: str = "manhattan"
    threshold: float = MANHATTAN_THRESHOLD

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown cascade mode {self.mode!r}; expected one of {MODES}")
        if self.mode == BIG_DISTANCE:
            if self.metric not in METRICS:
                raise ConfigError(f"unknown metric {self.metric!r}")
            if not self.threshold > 0:
                raise ConfigError(f"distance threshold must be positive, got {self.threshold!r}")

    @property
    def secondary(self) -> Optional[str]:
        return {BIG_LITTLE: "little", BIG_DUAL: "dual", BIG_DISTANCE: "distance"}.get(self.mode)

    def label(self) -> str:
        if self.mode == BIG_DISTANCE:
            return f"{self.mode}({self.metric},{self.threshold:g})"
        return self.mode


@dataclass
class ModelBundle:
    """Callables the controller invokes.

    ``big(sample) -> activity 1..6``; ``littles[k](window) -> verdict``;
    ``dual(pair) -> verdict``; ``trigger`` exposes ``wakes(prev, current)``
    over ``(128, 3)`` windows.
    """

    big: Callable
    littles: Mapping[int, Callable] = field(default_factory=dict)
    dual: Optional[Callable] = None
    trigger: Optional[object] = None

    def check(self, config: CascadeConfig):
        if self.big is None:
            raise ConfigError("every configuration needs the big model")
        if config.mode == BIG_LITTLE:
            missing = [k for k in range(1, 7) if k not in self.littles]
            if missing:
                raise ConfigError(f"{config.mode} needs six little models; missing activities {missing}")
        elif config.mode == BIG_DUAL and self.dual is None:
            raise ConfigError(f"{config.mode} needs the dual model")
        elif config.mode == BIG_DISTANCE and self.trigger is None:
            raise ConfigError(f"{config.mode} needs a fitted distance trigger")


@dataclass
class CascadeState:
    prev_label: Optional[int] = None
    prev_sample: Optional[np.ndarray] = None
    steps: int = 0
    big_count: int = 0
    secondary_count: int = 0


@dataclass
class StepTrace:
    index: int
    emitted: int
    path: str
    verdict: Optional[str] = None
    little_target: Optional[int] = None
    distance: Optional[float] = None
    truth: Optional[int] = None

    def to_record(self) -> dict:
        path = f"little({self.little_target})" if self.path == "little" else self.path
        rec = {"index": self.index, "path": path, "verdict": self.verdict,
               "emitted": self.emitted, "truth": self.truth}
        if self.distance is not None:
            rec["distance"] = self.distance
        return rec


@dataclass
class CascadeStats:
    n: int = 0
    big_count: int = 0
    little_count: int = 0
    dual_count: int = 0
    distance_count: int = 0
    correct: Optional[int] = None

    @property
    def secondary_count(self) -> int:
        return self.little_count + self.dual_count + self.distance_count

    @property
    def accuracy(self) -> Optional[float]:
        if self.correct is None or self.n == 0:
            return None
        return self.correct / self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(secondary_count=self.secondary_count, accuracy=self.accuracy)
        return d


def _verdict_name(v: int) -> str:
    return "same" if v == SAME else "changed"


def step(state: CascadeState, sample, models: ModelBundle, config: CascadeConfig,
         truth: Optional[int] = None) -> tuple:
    """Advance the controller by one sample; returns ``(label, trace)``.

    ``state`` is updated in place.
    """
    sample = np.asarray(sample)
    index = state.steps
    trace = None
    if state.prev_label is None or config.mode == BIG_ONLY:
        label = int(models.big(sample))
        state.big_count += 1
        trace = StepTrace(index, label, "big")
    else:
        window = select_sensor(sample, Sensor.TOTAL_ACC)
        extra = {}
        if config.mode == BIG_LITTLE:
            verdict = int(models.littles[state.prev_label](window))
            extra["little_target"] = state.prev_label
        elif config.mode == BIG_DUAL:
            prev_window = select_sensor(state.prev_sample, Sensor.TOTAL_ACC)
            verdict = int(models.dual(dual_pair(prev_window, window)))
        else:
            prev_window = select_sensor(state.prev_sample, Sensor.TOTAL_ACC)
            d = float(models.trigger.distance(prev_window, window))
            verdict = CHANGED if d > config.threshold else SAME
            extra["distance"] = d
        state.secondary_count += 1
        if verdict == SAME:
            label = state.prev_label
            trace = StepTrace(index, label, config.secondary, _verdict_name(verdict), **extra)
        else:
            label = int(models.big(sample))
            state.big_count += 1
            trace = StepTrace(index, label, "big", _verdict_name(verdict), **extra)
    state.prev_label = label
    state.prev_sample = sample
    state.steps += 1
    trace.truth = None if truth is None else int(truth)
    return label, trace


def run_sequence(samples, models: ModelBundle, config: CascadeConfig, truths=None) -> tuple:
    """Fold ``step`` over a stream from a fresh state.

    Returns ``(labels, stats, traces)``.
    """
    if len(samples) == 0:
        raise ValueError("empty sample stream")
    if truths is not None and len(truths) != len(samples):
        raise ValueError("truths and samples differ in length")
    models.check(config)
    state = CascadeState()
    labels, traces = [], []
    for i, sample in enumerate(samples):
        label, trace = step(state, sample, models, config, None if truths is None else truths[i])
        labels.append(label)
        traces.append(trace)
    labels = np.asarray(labels, dtype=np.int64)
    stats = CascadeStats(n=len(labels), big_count=state.big_count)
    secondary = config.secondary
    if secondary is not None:
        setattr(stats, f"{secondary}_count", state.secondary_count)
    if truths is not None:
        stats.correct = int(np.sum(labels == np.asarray(truths)))
    return labels, stats, traces


def write_traces(traces, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_record()) + "\n")
    return path


def _to_uint8(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.int64) + INPUT_QPARAMS.zero_point, QMIN, QMAX).astype(np.uint8)


class GraphBig:
    """Adapter: quantized Big graph as ``sample -> activity``."""

    def __init__(self, graph: ModelGraph):
        if graph.kind.family != "big":
            raise ConfigError(f"{graph.name} is not a big model")
        self.graph = graph

    def __call__(self, sample) -> int:
        s = _to_uint8(sample)
        _, idx = infer(self.graph, [s[..., k] for k in range(3)])
        return idx + 1


class GraphVerdict:
    """Adapter: quantized Little/Dual graph as ``input -> verdict``."""

    def __init__(self, graph: ModelGraph):
        if graph.kind.family not in ("little", "dual"):
            raise ConfigError(f"{graph.name} is not a secondary model")
        self.graph = graph

    def __call__(self, x) -> int:
        _, idx = infer(self.graph, [_to_uint8(x)])
        return idx


def bundle_from_graphs(big: ModelGraph, littles=None, dual=None, trigger=None) -> ModelBundle:
    littles = {int(g.kind.target): GraphVerdict(g) for g in (littles or [])}
    return ModelBundle(GraphBig(big), littles, GraphVerdict(dual) if dual is not None else None, trigger)
