"""Float forward/backward passes over a ``ModelGraph`` topology.

Kernels use the Keras layout: Conv1D ``(kernel, in_channels, filters)`` and
Dense ``(in_features, units)``; flattening is row-major over
``(length, channels)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import CONCAT, CONV1D, MAXPOOL1D, ModelGraph


def _pad(layer_len: int, k: int, stride: int) -> tuple:
    out = -(-layer_len // stride)
    total = max((out - 1) * stride + k - layer_len, 0)
    return total // 2, total - total // 2, out


def conv1d_fwd(x, kernel, bias, stride=1, relu=True):
    k, cin, cout = kernel.shape
    left, right, out_len = _pad(x.shape[1], k, stride)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    span = (out_len - 1) * stride + 1
    cols = np.concatenate([xp[:, t:t + span:stride, :] for t in range(k)], axis=-1)
    z = cols @ kernel.reshape(k * cin, cout) + bias
    y = np.maximum(z, 0) if relu else z
    return y, (cols, z, x.shape, left, right, stride, relu)


def conv1d_bwd(dy, kernel, cache):
    cols, z, xshape, left, right, stride, relu = cache
    k, cin, cout = kernel.shape
    if relu:
        dy = dy * (z > 0)
    dkernel = (cols.reshape(-1, k * cin).T @ dy.reshape(-1, cout)).reshape(kernel.shape)
    dbias = dy.sum(axis=(0, 1))
    dcols = dy @ kernel.reshape(k * cin, cout).T
    out_len = dy.shape[1]
    dxp = np.zeros((xshape[0], xshape[1] + left + right, cin))
    span = (out_len - 1) * stride + 1
    for t in range(k):
        dxp[:, t:t + span:stride, :] += dcols[:, :, t * cin:(t + 1) * cin]
    dx = dxp[:, left:left + xshape[1], :]
    return dx, dkernel, dbias


def maxpool_fwd(x, p=2):
    b, length, c = x.shape
    n = length // p
    win = x[:, : n * p].reshape(b, n, p, c)
    idx = win.argmax(axis=2)
    y = np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return y, (idx, x.shape, p)


def maxpool_bwd(dy, cache):
    idx, xshape, p = cache
    b, n, c = dy.shape
    dwin = np.zeros((b, n, p, c))
    np.put_along_axis(dwin, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros(xshape)
    dx[:, : n * p] = dwin.reshape(b, n * p, c)
    return dx


def dense_fwd(x, kernel, bias):
    flat = x.reshape(x.shape[0], -1)
    return flat @ kernel + bias, (flat, x.shape)


def dense_bwd(dy, kernel, cache):
    flat, xshape = cache
    return (dy @ kernel.T).reshape(xshape), flat.T @ dy, dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, y, class_weight=None):
    """Mean (optionally class-weighted) softmax cross-entropy and its gradient."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    w = np.ones(n) if class_weight is None else np.asarray(class_weight, dtype=np.float64)[y]
    norm = w.sum()
    loss = -(w * logp[np.arange(n), y]).sum() / norm
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    grad *= (w / norm)[:, None]
    return loss, grad


@dataclass(eq=False)
class FloatModel:
    """Real-valued parameters for one of the fixed topologies."""

    graph: ModelGraph
    params: dict

    def __post_init__(self):
        shapes = self.param_shapes(self.graph)
        for name, (kshape, bshape) in shapes.items():
            p = self.params.get(name)
            if p is None:
                raise ValueError(f"missing parameters for layer {name!r}")
            if p["kernel"].shape != kshape or p["bias"].shape != bshape:
                raise ValueError(f"layer {name!r}: parameter shapes {p['kernel'].shape}/{p['bias'].shape} "
                                 f"!= {kshape}/{bshape}")

    @staticmethod
    def param_shapes(graph: ModelGraph) -> dict:
        out = {}
        for layer in graph.trainable_layers():
            in_shape = graph.shape(layer.inputs[0])
            if layer.kind == CONV1D:
                out[layer.name] = ((layer.kernel_size, in_shape[-1], layer.filters), (layer.filters,))
            else:
                out[layer.name] = ((int(np.prod(in_shape)), layer.units), (layer.units,))
        return out

    @classmethod
    def initialize(cls, graph: ModelGraph, seed: int = 0) -> "FloatModel":
        """He-uniform kernels (limit ``sqrt(6 / fan_in)``), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, (kshape, bshape) in cls.param_shapes(graph).items():
            fan_in = int(np.prod(kshape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = {"kernel": rng.uniform(-limit, limit, size=kshape), "bias": np.zeros(bshape)}
        return cls(graph, params)

    def copy(self) -> "FloatModel":
        return FloatModel(self.graph, {k: {n: a.copy() for n, a in v.items()} for k, v in self.params.items()})

    def forward(self, inputs, return_activations: bool = False):
        """Logits for a batch; ``inputs`` holds one array per graph input."""
        acts = {name: np.asarray(x, dtype=np.float64) for name, x in zip(self.graph.input_names, inputs)}
        caches = {}
        for layer in self.graph.layers:
            if layer.kind == CONCAT:
                parts = [acts[s].reshape(acts[s].shape[0], -1) for s in layer.inputs]
                acts[layer.name] = np.concatenate(parts, axis=1)
                caches[layer.name] = [(acts[s].shape, p.shape[1]) for s, p in zip(layer.inputs, parts)]
                continue
            x = acts[layer.inputs[0]]
            if layer.kind == CONV1D:
                p = self.params[layer.name]
                y, c = conv1d_fwd(x, p["kernel"], p["bias"], layer.stride, layer.activation == "relu")
            elif layer.kind == MAXPOOL1D:
                y, c = maxpool_fwd(x, layer.pool_size)
            else:
                p = self.params[layer.name]
                y, c = dense_fwd(x, p["kernel"], p["bias"])
            acts[layer.name] = y
            caches[layer.name] = c
        out = acts[self.graph.output]
        if return_activations:
            return out, acts, caches
        return out

    def backward(self, dlogits, caches) -> dict:
        grads = {}
        douts = {self.graph.output: dlogits}
        for layer in reversed(self.graph.layers):
            dy = douts.pop(layer.name, None)
            if dy is None:
                continue
            c = caches[layer.name]
            if layer.kind == CONCAT:
                start = 0
                for src, (shape, width) in zip(layer.inputs, c):
                    _accumulate(douts, src, dy[:, start:start + width].reshape(shape))
                    start += width
                continue
            if layer.kind == CONV1D:
                dx, dk, db = conv1d_bwd(dy, self.params[layer.name]["kernel"], c)
                grads[layer.name] = {"kernel": dk, "bias": db}
            elif layer.kind == MAXPOOL1D:
                dx = maxpool_bwd(dy, c)
            else:
                dx, dk, db = dense_bwd(dy, self.params[layer.name]["kernel"], c)
                grads[layer.name] = {"kernel": dk, "bias": db}
            _accumulate(douts, layer.inputs[0], dx)
        return grads

    def loss_and_grads(self, inputs, y, class_weight=None):
        logits, _, caches = self.forward(inputs, return_activations=True)
        loss, dlogits = cross_entropy(logits, y, class_weight)
        return loss, self.backward(dlogits, caches)

    def predict(self, inputs, batch_size: int = 1024) -> np.ndarray:
        n = np.asarray(inputs[0]).shape[0]
        out = [self.forward([x[i:i + batch_size] for x in inputs]).argmax(axis=1)
               for i in range(0, n, batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _accumulate(store: dict, key: str, grad):
    if key in store:
        store[key] = store[key] + grad
    else:
        store[key] = grad
