"""Feed-forward 1-D CNN graphs and the three fixed topologies.

All convolutions are kernel 3, stride 1, ``same`` padding with ReLU; every
convolution is followed by a hidden ``MaxPool1D(2)``. These are the only
choices that reproduce the published per-layer output shapes and parameter
counts (``3 * 3 * 4 + 4 == 40`` for the first layer and so on).

A graph can exist without weights (the bare topology returned by the
``build_*`` constructors) or with UINT8 weights and per-edge quantization
parameters (the output of post-training quantization, or a loaded manifest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .quant import QuantParams, QuantizedTensor

MANIFEST_SCHEMA = "biglittle.model-manifest"
MANIFEST_VERSION = 1

CONV1D = "Conv1D"
MAXPOOL1D = "MaxPool1D"
CONCAT = "Concat"
DENSE = "Dense"
LAYER_KINDS = (CONV1D, MAXPOOL1D, CONCAT, DENSE)

FAMILIES = ("big", "little", "dual")


class GraphError(ValueError):
    """Raised for inconsistent topologies, shapes or weights."""


@dataclass(frozen=True)
class ModelKind:
    family: str
    target: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "little":
            if self.target is None or not 1 <= int(self.target) <= 6:
                raise ValueError(f"Little needs a target activity in 1..6, got {self.target!r}")
        elif self.target is not None:
            raise ValueError(f"{self.family} takes no target activity")

    @classmethod
    def big(cls) -> "ModelKind":
        return cls("big")

    @classmethod
    def little(cls, target: int) -> "ModelKind":
        return cls("little", int(target))

    @classmethod
    def dual(cls) -> "ModelKind":
        return cls("dual")

    @property
    def n_classes(self) -> int:
        return 6 if self.family == "big" else 2

    def __str__(self):
        return f"little_{self.target}" if self.family == "little" else self.family


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple
    filters: Optional[int] = None
    kernel_size: int = 3
    stride: int = 1
    padding: str = "same"
    activation: Optional[str] = None
    pool_size: int = 2
    units: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind == CONV1D:
            if not self.filters or self.filters <= 0:
                raise GraphError(f"layer {self.name!r}: Conv1D needs a positive filter count")
            if self.stride not in (1, 2):
                raise GraphError(f"layer {self.name!r}: stride must be 1 or 2")
            if self.padding != "same":
                raise GraphError(f"layer {self.name!r}: only 'same' padding is supported")
            if self.activation not in (None, "relu"):
                raise GraphError(f"layer {self.name!r}: unsupported activation {self.activation!r}")
        if self.kind == DENSE and (not self.units or self.units <= 0):
            raise GraphError(f"layer {self.name!r}: Dense needs a positive unit count")
        if self.kind in (CONV1D, MAXPOOL1D, DENSE) and len(self.inputs) != 1:
            raise GraphError(f"layer {self.name!r}: {self.kind} takes exactly one input")
        if self.kind == CONCAT and len(self.inputs) < 2:
            raise GraphError(f"layer {self.name!r}: Concat takes at least two inputs")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "inputs": list(self.inputs)}
        if self.kind == CONV1D:
            d.update(filters=self.filters, kernel_size=self.kernel_size, stride=self.stride,
                     padding=self.padding, activation=self.activation)
        elif self.kind == MAXPOOL1D:
            d.update(pool_size=self.pool_size)
        elif self.kind == DENSE:
            d.update(units=self.units)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(**{k: (tuple(v) if k == "inputs" else v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """UINT8 kernel plus int32 bias in the accumulator domain."""

    kernel: QuantizedTensor
    bias: np.ndarray
    bias_scale: float
    degenerate: bool = False

    def __post_init__(self):
        bias = np.asarray(self.bias, dtype=np.int32).copy()
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)


def conv_params(in_channels: int, filters: int, kernel_size: int = 3) -> int:
    return kernel_size * in_channels * filters + filters


def dense_params(in_features: int, units: int) -> int:
    return in_features * units + units


@dataclass(frozen=True, eq=False)
class ModelGraph:
    name: str
    kind: ModelKind
    inputs: tuple
    layers: tuple
    weights: Optional[Mapping] = None
    qparams: Optional[Mapping] = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple((n, tuple(s)) for n, s in self.inputs))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = _infer_shapes(self.inputs, self.layers)
        object.__setattr__(self, "_shapes", shapes)
        if self.weights is not None:
            _check_weights(self, shapes)
            if self.qparams is None:
                raise GraphError(f"{self.name}: weighted graph needs per-edge qparams")
            missing = [t for t in shapes if t not in self.qparams]
            if missing:
                raise GraphError(f"{self.name}: no qparams for edges {missing}")

    @property
    def output(self) -> str:
        return self.layers[-1].name

    @property
    def input_names(self) -> list:
        return [n for n, _ in self.inputs]

    @property
    def is_quantized(self) -> bool:
        return self.weights is not None

    def shape(self, tensor: str) -> tuple:
        return self._shapes[tensor]

    def output_shapes(self) -> dict:
        """Output shape of every layer, keyed by layer name."""
        return {layer.name: self._shapes[layer.name] for layer in self.layers}

    def layer_params(self) -> dict:
        counts = {}
        for layer in self.layers:
            if layer.kind == CONV1D:
                in_ch = self._shapes[layer.inputs[0]][-1]
                counts[layer.name] = conv_params(in_ch, layer.filters, layer.kernel_size)
            elif layer.kind == DENSE:
                in_feat = int(np.prod(self._shapes[layer.inputs[0]]))
                counts[layer.name] = dense_params(in_feat, layer.units)
            else:
                counts[layer.name] = 0
        return counts

    def trainable_layers(self) -> list:
        return [layer for layer in self.layers if layer.kind in (CONV1D, DENSE)]

    def with_weights(self, weights: Mapping, qparams: Mapping, **meta) -> "ModelGraph":
        return replace(self, weights=dict(weights), qparams=dict(qparams), meta={**self.meta, **meta})

    # manifest (JSON) ------------------------------------------------------

    def to_manifest(self) -> dict:
        if not self.is_quantized:
            raise GraphError(f"{self.name}: only quantized graphs can be written as manifests")
        weights = {}
        for layer in self.trainable_layers():
            w = self.weights[layer.name]
            weights[layer.name] = {
                "kernel": {
                    "shape": list(w.kernel.shape),
                    "qparams": w.kernel.qparams.to_dict(),
                    "hex": w.kernel.data.tobytes().hex(),
                },
                "bias": {"scale": w.bias_scale, "values": [int(v) for v in w.bias]},
                "degenerate": bool(w.degenerate),
            }
        return {
            "schema": MANIFEST_SCHEMA,
            "version": MANIFEST_VERSION,
            "name": self.name,
            "kind": {"family": self.kind.family, "target": self.kind.target},
            "inputs": [{"name": n, "shape": list(s)} for n, s in self.inputs],
            "layers": [layer.to_dict() for layer in self.layers],
            "total_params": sum(self.layer_params().values()),
            "qparams": {t: qp.to_dict() for t, qp in self.qparams.items()},
            "weights": weights,
            "weight_quantization": "asymmetric-per-tensor",
            "meta": dict(self.meta),
        }

    @classmethod
    def from_manifest(cls, doc: Mapping) -> "ModelGraph":
        if doc.get("schema") != MANIFEST_SCHEMA:
            raise GraphError(f"not a model manifest (schema={doc.get('schema')!r})")
        if doc.get("version") != MANIFEST_VERSION:
            raise GraphError(f"unsupported manifest version {doc.get('version')!r}")
        weights = {}
        for lname, w in doc["weights"].items():
            k = w["kernel"]
            data = np.frombuffer(bytes.fromhex(k["hex"]), dtype=np.uint8)
            weights[lname] = LayerWeights(
                kernel=QuantizedTensor(tuple(k["shape"]), data, QuantParams.from_dict(k["qparams"])),
                bias=np.asarray(w["bias"]["values"], dtype=np.int64),
                bias_scale=float(w["bias"]["scale"]),
                degenerate=bool(w.get("degenerate", False)),
            )
        graph = cls(
            name=doc["name"],
            kind=ModelKind(doc["kind"]["family"], doc["kind"].get("target")),
            inputs=[(i["name"], tuple(i["shape"])) for i in doc["inputs"]],
            layers=[LayerSpec.from_dict(d) for d in doc["layers"]],
            weights=weights,
            qparams={t: QuantParams.from_dict(q) for t, q in doc["qparams"].items()},
            meta=doc.get("meta", {}),
        )
        declared = doc.get("total_params")
        if declared is not None and declared != sum(graph.layer_params().values()):
            raise GraphError(f"manifest declares {declared} parameters, layers hold "
                             f"{sum(graph.layer_params().values())}")
        return graph

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_manifest(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ModelGraph":
        return cls.from_manifest(json.loads(Path(path).read_text()))


def _infer_shapes(inputs, layers) -> dict:
    shapes = {}
    for name, shape in inputs:
        if name in shapes:
            raise GraphError(f"duplicate input name {name!r}")
        if any(int(s) <= 0 for s in shape):
            raise GraphError(f"input {name!r}: extents must be positive, got {shape}")
        shapes[name] = tuple(int(s) for s in shape)
    for layer in layers:
        if layer.name in shapes:
            raise GraphError(f"duplicate tensor name {layer.name!r}")
        for src in layer.inputs:
            # layers are topologically ordered, so a forward reference is a cycle or typo
            if src not in shapes:
                raise GraphError(f"layer {layer.name!r} reads {src!r} before it is defined")
        ins = [shapes[s] for s in layer.inputs]
        if layer.kind == CONV1D:
            if len(ins[0]) != 2:
                raise GraphError(f"layer {layer.name!r}: Conv1D needs a (length, channels) input, got {ins[0]}")
            length = -(-ins[0][0] // layer.stride)
            out = (length, layer.filters)
        elif layer.kind == MAXPOOL1D:
            if len(ins[0]) != 2 or ins[0][0] < layer.pool_size:
                raise GraphError(f"layer {layer.name!r}: cannot pool input of shape {ins[0]}")
            out = (ins[0][0] // layer.pool_size, ins[0][1])
        elif layer.kind == CONCAT:
            out = (sum(int(np.prod(s)) for s in ins),)
        else:
            out = (layer.units,)
        shapes[layer.name] = out
    if not layers:
        raise GraphError("graph has no layers")
    return shapes


def _check_weights(graph: ModelGraph, shapes: dict):
    for layer in graph.trainable_layers():
        if layer.name not in graph.weights:
            raise GraphError(f"{graph.name}: missing weights for layer {layer.name!r}")
        w = graph.weights[layer.name]
        in_shape = shapes[layer.inputs[0]]
        if layer.kind == CONV1D:
            expected = (layer.kernel_size, in_shape[-1], layer.filters)
            n_out = layer.filters
        else:
            expected = (int(np.prod(in_shape)), layer.units)
            n_out = layer.units
        if tuple(w.kernel.shape) != expected:
            raise GraphError(f"layer {layer.name!r}: kernel shape {w.kernel.shape} != expected {expected}")
        if w.bias.shape != (n_out,):
            raise GraphError(f"layer {layer.name!r}: bias shape {w.bias.shape} != ({n_out},)")


def total_params(graph: ModelGraph) -> int:
    return sum(graph.layer_params().values())


def _stack(input_name: str, filters, conv_names, pool_names) -> list:
    layers = []
    src = input_name
    for f, cname, pname in zip(filters, conv_names, pool_names):
        layers.append(LayerSpec(cname, CONV1D, (src,), filters=f, activation="relu"))
        layers.append(LayerSpec(pname, MAXPOOL1D, (cname,)))
        src = pname
    return layers


BIG_FILTERS = (4, 8, 16, 32, 8)
LITTLE_FILTERS = (4, 4, 2)
WINDOW = 128
AXES = 3


def build_big() -> ModelGraph:
    """Three (128, 3) sensor branches, concatenated into a 6-way Dense head."""
    n = len(BIG_FILTERS)
    inputs = [(f"model_input{b + 1}", (WINDOW, AXES)) for b in range(3)]
    layers = []
    branch_outputs = []
    for b, (name, _) in enumerate(inputs):
        conv_names = [_keras_name("conv1d", b * n + j) for j in range(n)]
        pool_names = [_keras_name("max_pooling1d", b * n + j) for j in range(n)]
        layers += _stack(name, BIG_FILTERS, conv_names, pool_names)
        branch_outputs.append(pool_names[-1])
    layers.append(LayerSpec("concatenate", CONCAT, tuple(branch_outputs)))
    layers.append(LayerSpec("model_output", DENSE, ("concatenate",), units=6))
    return ModelGraph("big", ModelKind.big(), inputs, layers)


def build_little(target: int = 1) -> ModelGraph:
    """Single (128, 3) total-acc input, binary Dense head for one activity."""
    return _small(ModelKind.little(target), (WINDOW, AXES))


def build_dual() -> ModelGraph:
    """Two adjacent windows stretched to a (384, 2) input, binary change head."""
    return _small(ModelKind.dual(), (WINDOW * AXES, 2))


def build(kind: ModelKind) -> ModelGraph:
    if kind.family == "big":
        return build_big()
    if kind.family == "little":
        return build_little(kind.target)
    return build_dual()


def _small(kind: ModelKind, in_shape) -> ModelGraph:
    n = len(LITTLE_FILTERS)
    conv_names = [_keras_name("conv1d", j) for j in range(n)]
    pool_names = [_keras_name("max_pooling1d", j) for j in range(n)]
    layers = _stack("model_input", LITTLE_FILTERS, conv_names, pool_names)
    layers.append(LayerSpec("model_output", DENSE, (pool_names[-1],), units=2))
    return ModelGraph(str(kind), kind, [("model_input", in_shape)], layers)


def _keras_name(base: str, i: int) -> str:
    return base if i == 0 else f"{base}_{i}"

