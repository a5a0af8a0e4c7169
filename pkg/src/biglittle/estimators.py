"""scikit-learn estimators over the trainer, runtime and cascade."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cascade import (BIG_DISTANCE, BIG_DUAL, BIG_LITTLE, CascadeConfig, bundle_from_graphs,
                      run_sequence)
from .data import Sensor, select_sensor
from .distance import DistanceTrigger
from .graph import ModelGraph, ModelKind, build
from .quant import INPUT_QPARAMS
from .runtime import infer_batch
from .trainer import (Hyperparams, build_dual_dataset, post_training_quantize,
                      relabel_one_vs_rest, train)


def _as_inputs(kind: ModelKind, X) -> list:
    """Split an estimator input array into the graph's input list."""
    graph = build(kind)
    X = np.asarray(X)
    if kind.family == "big":
        expected = (graph.inputs[0][1][0], graph.inputs[0][1][1], 3)
        if X.shape[1:] != expected:
            raise ValueError(f"big expects windows of shape (n, {expected}), got {X.shape}")
        return [X[..., s] for s in range(3)]
    expected = graph.inputs[0][1]
    if X.shape[1:] != expected:
        raise ValueError(f"{kind} expects inputs of shape (n, {expected}), got {X.shape}")
    return [X]


def _to_uint8(inputs) -> list:
    out = []
    for x in inputs:
        x = np.asarray(x)
        if x.size and (x.min() < -128 or x.max() > 127):
            raise ValueError("inputs must be integer-rescaled into [-128, 127]")
        out.append((np.rint(x).astype(np.int64) + INPUT_QPARAMS.zero_point).astype(np.uint8))
    return out


class CNNClassifier(ClassifierMixin, BaseEstimator):
    """One of the fixed CNN topologies, trained in float and run quantized.

    ``predict`` uses the UINT8 integer runtime; ``predict_float`` the float
    model it was quantized from.

    Parameters
    ----------
    family : {"big", "little", "dual"}
    target : int or None
        Activity (1..6) a little model recognises; only for ``family="little"``.
    learning_rate, epochs, batch_size, restart_period, restart_mult, optimizer,
    momentum, validation_fraction, class_weighting, random_state
        Training settings, see ``Hyperparams``.
    activation_ranges : {"default", "calibrated"}
        Activation quantization; ``"default"`` is the fixed [0, 255] range.
    """

    def __init__(self, family="big", target=None, learning_rate=0.01, epochs=100, batch_size=64,
                 restart_period=10, restart_mult=2, optimizer="adam", momentum=0.9,
                 validation_fraction=0.15, class_weighting=False, random_state=0,
                 activation_ranges="default"):
        self.family = family
        self.target = target
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.restart_period = restart_period
        self.restart_mult = restart_mult
        self.optimizer = optimizer
        self.momentum = momentum
        self.validation_fraction = validation_fraction
        self.class_weighting = class_weighting
        self.random_state = random_state
        self.activation_ranges = activation_ranges

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(learning_rate=self.learning_rate, restart_period=self.restart_period,
                           restart_mult=self.restart_mult, epochs=self.epochs, batch_size=self.batch_size,
                           momentum=self.momentum, optimizer=self.optimizer, seed=self.random_state,
                           validation_fraction=self.validation_fraction,
                           class_weighting=self.class_weighting)

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.family, self.target)

    def fit(self, X, y):
        X = check_array(X, allow_nd=True)
        y = np.asarray(y)
        kind = self.kind
        self.classes_ = np.arange(1, 7) if kind.family == "big" else np.array([0, 1])
        idx = np.searchsorted(self.classes_, y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        bad = (idx >= len(self.classes_)) | (self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y)
        if bad.any():
            raise ValueError(f"labels must be in {self.classes_.tolist()}; found {np.unique(y[bad]).tolist()}")
        inputs = _as_inputs(kind, X)
        self.float_model_, self.history_ = train(kind, inputs, idx, self.hyperparams())
        self.graph_ = post_training_quantize(self.float_model_, inputs, self.activation_ranges)
        return self

    @classmethod
    def from_graph(cls, graph: ModelGraph) -> "CNNClassifier":
        """Wrap an already quantized graph (e.g. a loaded manifest)."""
        est = cls(family=graph.kind.family, target=graph.kind.target)
        est.graph_ = graph
        est.classes_ = np.arange(1, 7) if graph.kind.family == "big" else np.array([0, 1])
        return est

    def decision_function(self, X):
        """Integer logits from the quantized runtime."""
        check_is_fitted(self, "graph_")
        X = check_array(X, allow_nd=True)
        logits, _ = infer_batch(self.graph_, _to_uint8(_as_inputs(self.kind, X)))
        return logits

    def predict(self, X):
        check_is_fitted(self, "graph_")
        X = check_array(X, allow_nd=True)
        _, idx = infer_batch(self.graph_, _to_uint8(_as_inputs(self.kind, X)))
        return self.classes_[idx]

    def predict_float(self, X):
        check_is_fitted(self, "float_model_")
        X = check_array(X, allow_nd=True)
        return self.classes_[self.float_model_.predict(_as_inputs(self.kind, X))]


class BigLittleCascade(ClassifierMixin, BaseEstimator):
    """Streaming big/secondary cascade as a classifier over ordered windows.

    ``fit`` trains the big model and whatever secondary the configuration
    needs (six one-vs-rest littles, the dual change detector, or a distance
    trigger). ``predict`` runs the controller over ``X`` in the given order,
    so results depend on sample order by design.

    Parameters
    ----------
    config : {"big-only", "big-little", "big-dual", "big-distance"}
    metric : {"manhattan", "euclidean", "mahalanobis"}
    threshold : float
        Distance above which the big model wakes.
    sensor : str
        Sensor fed to little/dual/distance paths (default total accelerometer).
    model_params : dict or None
        Extra ``CNNClassifier`` parameters used for every trained model.

    Attributes
    ----------
    big_, littles_, dual_, trigger_ : fitted sub-models (absent ones are None)
    stats_, traces_ : counters and per-step traces of the last ``predict``
    """

    def __init__(self, config="big-little", metric="manhattan", threshold=8000.0, model_params=None,
                 shrinkage=0.1):
        self.config = config
        self.metric = metric
        self.threshold = threshold
        self.model_params = model_params
        self.shrinkage = shrinkage

    def _config(self) -> CascadeConfig:
        return CascadeConfig(self.config, self.metric, self.threshold)

    def fit(self, X, y):
        X = check_array(X, allow_nd=True)
        y = np.asarray(y)
        cfg = self._config()
        params = dict(self.model_params or {})
        self.big_ = CNNClassifier(family="big", **params).fit(X, y)
        self.littles_ = self.dual_ = self.trigger_ = None
        window = select_sensor(X, Sensor.TOTAL_ACC)
        if cfg.mode == BIG_LITTLE:
            self.littles_ = {k: CNNClassifier(family="little", target=k, **params)
                             .fit(window, relabel_one_vs_rest(y, k)) for k in range(1, 7)}
        elif cfg.mode == BIG_DUAL:
            pairs, same = build_dual_dataset(window, y)
            self.dual_ = CNNClassifier(family="dual", **params).fit(pairs, same)
        elif cfg.mode == BIG_DISTANCE:
            self.trigger_ = DistanceTrigger(self.metric, self.threshold, self.shrinkage).fit(window)
        self.classes_ = np.arange(1, 7)
        return self

    @classmethod
    def from_models(cls, config, big, littles=None, dual=None, trigger=None, **kw) -> "BigLittleCascade":
        """Assemble from fitted ``CNNClassifier``/``ModelGraph`` parts without training."""
        est = cls(config=config, **kw)

        def wrap(m):
            return CNNClassifier.from_graph(m) if isinstance(m, ModelGraph) else m
        est.big_ = wrap(big)
        est.littles_ = None if littles is None else {int(wrap(m).target): wrap(m) for m in
                                                     (littles.values() if isinstance(littles, dict) else littles)}
        est.dual_ = None if dual is None else wrap(dual)
        est.trigger_ = trigger
        est.classes_ = np.arange(1, 7)
        return est

    def bundle(self):
        check_is_fitted(self, "big_")
        littles = [m.graph_ for m in self.littles_.values()] if self.littles_ else None
        return bundle_from_graphs(self.big_.graph_, littles, self.dual_.graph_ if self.dual_ else None,
                                  self.trigger_)

    def predict(self, X, y=None):
        X = check_array(X, allow_nd=True)
        labels, self.stats_, self.traces_ = run_sequence(X, self.bundle(), self._config(), truths=y)
        return labels

    def score(self, X, y, sample_weight=None):
        labels = self.predict(X, y)
        return float(np.average(labels == np.asarray(y), weights=sample_weight))
