"""Integer inference for quantized ``ModelGraph`` instances.

Every op works on uint8 activations with a leading batch axis. Products are
accumulated in int64 and range-checked against int32 before requantization,
so a result that would overflow a 32-bit MCU accumulator is reported instead
of silently differing from the device.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .graph import CONCAT, CONV1D, MAXPOOL1D, GraphError, LayerSpec, LayerWeights, ModelGraph
from .quant import INT32_MAX, INT32_MIN, QuantParams, QuantizedTensor, requantize


class InferenceError(ValueError):
    pass


def _check_int32(acc: np.ndarray, where: str) -> np.ndarray:
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise InferenceError(f"{where}: accumulator overflows int32")
    return acc


def _same_padding(length: int, kernel: int, stride: int) -> tuple:
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def conv1d_int(x: np.ndarray, in_qp: QuantParams, layer: LayerSpec, w: LayerWeights,
               out_qp: QuantParams) -> np.ndarray:
    """Same-padded Conv1D + ReLU on a (batch, length, channels) uint8 array."""
    k, cin, cout = w.kernel.shape
    if x.ndim != 3 or x.shape[-1] != cin:
        raise GraphError(f"layer {layer.name!r}: input {x.shape[1:]} does not match kernel with {cin} channels")
    xc = x.astype(np.int64) - in_qp.zero_point
    left, right = _same_padding(x.shape[1], k, layer.stride)
    # padding holds real zero, i.e. zero after removing the zero point
    xp = np.pad(xc, ((0, 0), (left, right), (0, 0)))
    out_len = -(-x.shape[1] // layer.stride)
    taps = [xp[:, t:t + (out_len - 1) * layer.stride + 1:layer.stride, :] for t in range(k)]
    cols = np.concatenate(taps, axis=-1)
    wk = (w.kernel.data.astype(np.int64) - w.kernel.qparams.zero_point).reshape(k * cin, cout)
    acc = cols @ wk + w.bias.astype(np.int64)
    _check_int32(acc, layer.name)
    if layer.activation == "relu":
        acc = np.maximum(acc, 0)
    es = in_qp.scale * w.kernel.qparams.scale / out_qp.scale
    return requantize(acc, es, out_qp.zero_point)


def maxpool1d_int(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    p = layer.pool_size
    n = x.shape[1] // p
    return x[:, : n * p].reshape(x.shape[0], n, p, x.shape[2]).max(axis=2)


def dense_int(x: np.ndarray, in_qp: QuantParams, layer: LayerSpec, w: LayerWeights,
              out_qp: QuantParams) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1).astype(np.int64) - in_qp.zero_point
    if flat.shape[1] != w.kernel.shape[0]:
        raise GraphError(f"layer {layer.name!r}: {flat.shape[1]} input features, kernel expects {w.kernel.shape[0]}")
    wk = w.kernel.data.astype(np.int64) - w.kernel.qparams.zero_point
    acc = flat @ wk + w.bias.astype(np.int64)
    _check_int32(acc, layer.name)
    es = in_qp.scale * w.kernel.qparams.scale / out_qp.scale
    return requantize(acc, es, out_qp.zero_point)


def rescale_uint8(x: np.ndarray, src: QuantParams, dst: QuantParams) -> np.ndarray:
    if src == dst:
        return x
    return requantize(x.astype(np.int64) - src.zero_point, src.scale / dst.scale, dst.zero_point)


def conv1d_forward(inp: QuantizedTensor, layer: LayerSpec, weights: LayerWeights,
                   out_qparams: QuantParams) -> QuantizedTensor:
    """Single-sample Conv1D on a (length, channels) tensor."""
    if len(inp.shape) != 2:
        raise GraphError(f"layer {layer.name!r}: expected a (length, channels) tensor, got {inp.shape}")
    out = conv1d_int(inp.data[None], inp.qparams, layer, weights, out_qparams)[0]
    return QuantizedTensor(out.shape, out, out_qparams)


def _run_layers(graph: ModelGraph, feeds: dict) -> np.ndarray:
    acts = dict(feeds)
    qp = graph.qparams
    for layer in graph.layers:
        if layer.kind == CONCAT:
            parts = [rescale_uint8(acts[s], qp[s], qp[layer.name]).reshape(acts[s].shape[0], -1)
                     for s in layer.inputs]
            acts[layer.name] = np.concatenate(parts, axis=1)
            continue
        src = layer.inputs[0]
        x = acts[src]
        if layer.kind == CONV1D:
            y = conv1d_int(x, qp[src], layer, graph.weights[layer.name], qp[layer.name])
        elif layer.kind == MAXPOOL1D:
            y = rescale_uint8(maxpool1d_int(x, layer), qp[src], qp[layer.name])
        else:
            y = dense_int(x, qp[src], layer, graph.weights[layer.name], qp[layer.name])
        acts[layer.name] = y
    return acts[graph.output]


def _feeds(graph: ModelGraph, inputs: Sequence, batched: bool) -> dict:
    if not graph.is_quantized:
        raise InferenceError(f"{graph.name}: graph has no quantized weights")
    if len(inputs) != len(graph.inputs):
        raise InferenceError(f"{graph.name}: expected {len(graph.inputs)} inputs, got {len(inputs)}")
    feeds = {}
    for (name, shape), t in zip(graph.inputs, inputs):
        if isinstance(t, QuantizedTensor):
            if t.qparams != graph.qparams[name]:
                raise InferenceError(f"{graph.name}: input {name!r} quantized with {t.qparams}, "
                                     f"graph expects {graph.qparams[name]}")
            data = t.data
        else:
            data = np.asarray(t)
            if data.dtype != np.uint8:
                raise InferenceError(f"{graph.name}: raw input {name!r} must be uint8, got {data.dtype}")
        got = tuple(data.shape[1:]) if batched else tuple(data.shape)
        if got != tuple(shape):
            raise InferenceError(f"{graph.name}: input {name!r} has shape {got}, expected {shape}")
        feeds[name] = data if batched else data[None]
    return feeds


def infer(graph: ModelGraph, inputs: Sequence) -> tuple:
    """Run one sample; returns ``(logits, label)``.

    ``logits`` are the uint8 outputs of the final Dense layer and ``label`` is
    their argmax, ties going to the lowest class index.
    """
    out = _run_layers(graph, _feeds(graph, inputs, batched=False))[0]
    logits = out.astype(np.int64)
    return logits, int(np.argmax(logits))


def infer_batch(graph: ModelGraph, inputs: Sequence, batch_size: int = 512) -> tuple:
    """Batched ``infer`` over uint8 arrays with a leading sample axis."""
    feeds = _feeds(graph, inputs, batched=True)
    n = next(iter(feeds.values())).shape[0]
    chunks = []
    for start in range(0, n, batch_size):
        part = {k: v[start:start + batch_size] for k, v in feeds.items()}
        chunks.append(_run_layers(graph, part))
    logits = np.concatenate(chunks, axis=0).astype(np.int64) if chunks else np.zeros((0, graph.shape(graph.output)[0]), np.int64)
    return logits, np.argmax(logits, axis=1) if len(logits) else np.zeros(0, np.int64)
