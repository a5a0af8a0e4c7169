"""Float training with SGDR and post-training UINT8 quantization."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.model_selection import train_test_split

from .graph import MAXPOOL1D, LayerWeights, ModelGraph, ModelKind, build
from .nn import FloatModel
from .quant import (DEFAULT_ACTIVATION_QPARAMS, INPUT_QPARAMS, SCALE_FLOOR, QuantParams,
                    quantize, quantize_bias)

log = logging.getLogger(__name__)


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    restart_period: int = 10
    restart_mult: int = 2
    epochs: int = 100
    batch_size: int = 64
    momentum: float = 0.9
    optimizer: str = "adam"
    seed: int = 0
    validation_fraction: float = 0.15
    class_weighting: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")
        if self.restart_mult < 1:
            raise ValueError("restart_mult must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")

    @classmethod
    def from_json(cls, path) -> "Hyperparams":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def sgdr_lr(epoch: float, hp: Hyperparams, lr_min: float = 0.0) -> float:
    """Cosine-annealed rate with warm restarts at fractional ``epoch``."""
    period = hp.restart_period
    t = epoch
    while t >= period:
        t -= period
        period *= hp.restart_mult
    return lr_min + 0.5 * (hp.learning_rate - lr_min) * (1 + math.cos(math.pi * t / period))


def relabel_one_vs_rest(labels, target: int) -> np.ndarray:
    """1 where the activity equals ``target``, else 0."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 1 or labels.max() > 6):
        raise ValueError("activity labels must be in 1..6")
    return (labels == target).astype(np.int64)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_accuracy: float


class EmptyClassError(ValueError):
    pass


def _class_counts(y, n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes)


def train(kind: ModelKind, inputs: Sequence[np.ndarray], y, hp: Optional[Hyperparams] = None,
          validation: Optional[tuple] = None, init: Optional[FloatModel] = None) -> tuple:
    """Train one model family with minibatch Adam or momentum SGD under SGDR.

    ``inputs`` has one array per graph input with a leading sample axis;
    ``y`` holds class indices (0..5 for Big, 0/1 otherwise). When
    ``validation`` is None and ``hp.validation_fraction`` > 0, a stratified
    validation carve is taken from the training data.

    Returns ``(model, history)`` with one ``EpochRecord`` per epoch.
    """
    hp = hp or Hyperparams()
    graph = build(kind)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    y = np.asarray(y, dtype=np.int64)
    if len(inputs) != len(graph.inputs):
        raise ValueError(f"{kind} takes {len(graph.inputs)} inputs, got {len(inputs)}")
    for (name, shape), x in zip(graph.inputs, inputs):
        if x.shape[1:] != shape or x.shape[0] != y.shape[0]:
            raise ValueError(f"input {name!r} has shape {x.shape}, expected (n={y.shape[0]}, {shape})")
    if y.size and (y.min() < 0 or y.max() >= kind.n_classes):
        raise ValueError(f"labels must be in 0..{kind.n_classes - 1}")
    counts = _class_counts(y, kind.n_classes)
    if (counts == 0).any():
        raise EmptyClassError(f"{kind}: empty class in training data; per-class counts {counts.tolist()}")

    if validation is None and hp.validation_fraction > 0 and hp.epochs > 0:
        idx = np.arange(y.size)
        tr, va = train_test_split(idx, test_size=hp.validation_fraction, stratify=y,
                                  random_state=hp.seed % 2**32)
        validation = ([x[va] for x in inputs], y[va])
        inputs, y = [x[tr] for x in inputs], y[tr]

    model = init.copy() if init is not None else FloatModel.initialize(graph, hp.seed)
    class_weight = None
    if hp.class_weighting:
        c = _class_counts(y, kind.n_classes).astype(np.float64)
        class_weight = c.sum() / (len(c) * np.maximum(c, 1))

    rng = np.random.default_rng(hp.seed + 1)
    step = _Adam(model, hp) if hp.optimizer == "adam" else _Momentum(model, hp)
    n = y.size
    steps = max(1, math.ceil(n / hp.batch_size))
    history = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(steps):
            batch = order[s * hp.batch_size:(s + 1) * hp.batch_size]
            lr = sgdr_lr(epoch + s / steps, hp)
            loss, grads = model.loss_and_grads([x[batch] for x in inputs], y[batch], class_weight)
            total += loss * batch.size
            step(grads, lr)
        val_acc = float("nan")
        if validation is not None:
            vx, vy = validation
            val_acc = float(np.mean(model.predict(vx) == vy)) if len(vy) else float("nan")
        rec = EpochRecord(epoch + 1, total / n, val_acc)
        history.append(rec)
        log.info("%s epoch %d loss %.4f val_acc %.4f", kind, rec.epoch, rec.loss, rec.val_accuracy)
    return model, history


class _Momentum:
    def __init__(self, model: FloatModel, hp: Hyperparams):
        self.params = model.params
        self.momentum = hp.momentum
        self.v = {k: {n: np.zeros_like(a) for n, a in p.items()} for k, p in model.params.items()}

    def __call__(self, grads, lr):
        for lname, g in grads.items():
            for pname, grad in g.items():
                v = self.v[lname][pname]
                v *= self.momentum
                v -= lr * grad
                self.params[lname][pname] += v


class _Adam:
    def __init__(self, model: FloatModel, hp: Hyperparams, b1=0.9, b2=0.999, eps=1e-7):
        self.params = model.params
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = {k: {n: np.zeros_like(a) for n, a in p.items()} for k, p in model.params.items()}
        self.v = {k: {n: np.zeros_like(a) for n, a in p.items()} for k, p in model.params.items()}
        self.t = 0

    def __call__(self, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for lname, g in grads.items():
            for pname, grad in g.items():
                m, v = self.m[lname][pname], self.v[lname][pname]
                m *= self.b1
                m += (1 - self.b1) * grad
                v *= self.b2
                v += (1 - self.b2) * grad * grad
                self.params[lname][pname] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def build_dual_dataset(windows, labels) -> tuple:
    """Pair each window with its predecessor in shipped order.

    Returns ``(pairs, same)`` where ``pairs`` is ``(n, 384, 2)`` with the
    previous window in channel 0 and the current one in channel 1. ``same``
    follows the secondary-model convention: 1 for continuance, 0 for an
    activity change. Window 0 pairs with itself.
    """
    windows = np.asarray(windows)
    labels = np.asarray(labels)
    if windows.shape[0] == 0:
        raise ValueError("cannot build pairs from an empty window sequence")
    if windows.shape[0] != labels.shape[0]:
        raise ValueError("windows and labels differ in length")
    flat = windows.reshape(windows.shape[0], -1)
    prev = np.concatenate([flat[:1], flat[:-1]])
    prev_labels = np.concatenate([labels[:1], labels[:-1]])
    pairs = np.stack([prev, flat], axis=-1)
    return pairs, (prev_labels == labels).astype(np.int64)


def post_training_quantize(fm: FloatModel, calibration: Optional[Sequence[np.ndarray]] = None,
                           activation_ranges: str = "default") -> ModelGraph:
    """Convert a float model into a quantized ``ModelGraph``.

    Inputs always use ``scale=1, zero_point=128``. With
    ``activation_ranges="default"`` every intermediate and output edge uses
    the fixed ``[0, 255]`` range (``scale=1, zero_point=0``); with
    ``"calibrated"`` each edge gets the min/max observed on ``calibration``.
    Weights are asymmetric per-tensor; biases are int32 at
    ``input_scale * weight_scale``.
    """
    graph = fm.graph
    if calibration is not None:
        for (name, _), x in zip(graph.inputs, calibration):
            x = np.asarray(x)
            if x.size and (x.min() < -128 or x.max() > 127):
                raise ValueError(f"calibration input {name!r} outside [-128, 127]")
    qparams = {name: INPUT_QPARAMS for name in graph.input_names}
    if activation_ranges == "default":
        for layer in graph.layers:
            qparams[layer.name] = DEFAULT_ACTIVATION_QPARAMS
    elif activation_ranges == "calibrated":
        if calibration is None:
            raise ValueError("calibrated activation ranges need a calibration set")
        _, acts, _ = fm.forward(calibration, return_activations=True)
        for layer in graph.layers:
            a = acts[layer.name]
            qparams[layer.name] = QuantParams.from_range(a.min(), a.max())
        # pooling must not change the grid of the tensor it selects from
        for layer in graph.layers:
            if layer.kind == MAXPOOL1D:
                qparams[layer.name] = qparams[layer.inputs[0]]
    else:
        raise ValueError(f"activation_ranges must be 'default' or 'calibrated', got {activation_ranges!r}")

    weights = {}
    degenerate = []
    for layer in graph.trainable_layers():
        p = fm.params[layer.name]
        k = p["kernel"]
        wqp = QuantParams.from_range(k.min(), k.max())
        is_degenerate = bool(k.min() == k.max())
        if is_degenerate:
            degenerate.append(layer.name)
        in_scale = qparams[layer.inputs[0]].scale
        weights[layer.name] = LayerWeights(
            kernel=quantize(k, wqp),
            bias=quantize_bias(p["bias"], in_scale, wqp.scale),
            bias_scale=in_scale * wqp.scale,
            degenerate=is_degenerate,
        )
    meta = {"activation_ranges": activation_ranges, "degenerate_weights": degenerate,
            "scale_floor": SCALE_FLOOR}
    return graph.with_weights(weights, qparams, **meta)


def write_history_csv(history, path) -> Path:
    path = Path(path)
    lines = ["epoch,loss,val_accuracy"]
    lines += [f"{r.epoch},{r.loss:.6f},{r.val_accuracy:.6f}" for r in history]
    path.write_text("\n".join(lines) + "\n")
    return path

