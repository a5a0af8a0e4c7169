"""C header export of manifest weights.

The header declares two arrays: ``<var>[]`` holds every UINT8 kernel packed
in graph order, and ``<var>_bias[]`` the matching int32 biases. Each array
comes with a ``_len`` constant.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .graph import LayerWeights, ModelGraph
from .quant import QuantizedTensor

BYTES_PER_LINE = 12
INTS_PER_LINE = 8


def pack_weights(graph: ModelGraph) -> tuple:
    """``(kernel_bytes, biases)`` in graph order."""
    if not graph.is_quantized:
        raise ValueError(f"{graph.name}: graph has no quantized weights")
    kernels = bytearray()
    biases = []
    for layer in graph.trainable_layers():
        w = graph.weights[layer.name]
        kernels += w.kernel.data.tobytes()
        biases.extend(int(b) for b in w.bias)
    return bytes(kernels), biases


def unpack_weights(graph: ModelGraph, kernels: bytes, biases) -> dict:
    """Inverse of ``pack_weights``; shapes and scales come from ``graph``."""
    weights = {}
    koff = boff = 0
    for layer in graph.trainable_layers():
        ref = graph.weights[layer.name]
        n = ref.kernel.data.size
        if koff + n > len(kernels) or boff + ref.bias.size > len(biases):
            raise ValueError(f"weight arrays too short for layer {layer.name!r}")
        kernel = np.frombuffer(kernels, dtype=np.uint8, count=n, offset=koff).copy()
        bias = np.asarray(biases[boff:boff + ref.bias.size], dtype=np.int64)
        koff += n
        boff += ref.bias.size
        weights[layer.name] = LayerWeights(QuantizedTensor(ref.kernel.shape, kernel, ref.kernel.qparams),
                                           bias, ref.bias_scale, ref.degenerate)
    if koff != len(kernels) or boff != len(biases):
        raise ValueError(f"arrays hold {len(kernels)} kernel bytes / {len(biases)} biases, "
                         f"layout accounts for {koff} / {boff}")
    return weights


def _c_identifier(name: str) -> str:
    ident = re.sub(r"\W", "_", name)
    return ident if not ident[:1].isdigit() else f"_{ident}"


def _rows(values, per_line, fmt):
    return ["  " + ", ".join(fmt(v) for v in values[i:i + per_line]) + ","
            for i in range(0, len(values), per_line)]


def header_text(kernels: bytes, biases, var_name: str) -> str:
    var = _c_identifier(var_name)
    guard = f"{var.upper()}_H"
    lines = [f"#ifndef {guard}", f"#define {guard}", "", "#include <stdint.h>", "",
             f"const unsigned int {var}_len = {len(kernels)};",
             f"const unsigned char {var}[] = {{"]
    lines += _rows(list(kernels), BYTES_PER_LINE, lambda b: f"0x{b:02x}")
    lines += ["};", "",
              f"const unsigned int {var}_bias_len = {len(biases)};",
              f"const int32_t {var}_bias[] = {{"]
    lines += _rows(list(biases), INTS_PER_LINE, str)
    lines += ["};", "", f"#endif  // {guard}", ""]
    return "\n".join(lines)


def export_header(graph: ModelGraph, path, var_name=None) -> Path:
    path = Path(path)
    kernels, biases = pack_weights(graph)
    path.write_text(header_text(kernels, biases, var_name or f"{graph.name}_weights"))
    return path


def _array(text: str, ctype: str, suffix: str, path) -> tuple:
    length = re.search(rf"unsigned int\s+(\w+?){suffix}_len\s*=\s*(\d+)\s*;", text)
    body = re.search(rf"{ctype}\s+\w+?{suffix}\[\]\s*=\s*\{{(.*?)\}};", text, re.S)
    if body is None or length is None:
        raise ValueError(f"{path}: no {ctype} array declaration found")
    return body.group(1), int(length.group(2))


def read_header(path) -> tuple:
    """``(kernel_bytes, biases)`` declared in a header from ``export_header``."""
    text = Path(path).read_text()
    kbody, klen = _array(text, r"unsigned char", "", path)
    bbody, blen = _array(text, r"int32_t", "_bias", path)
    kernels = bytes(int(tok, 16) for tok in re.findall(r"0x[0-9a-fA-F]{2}", kbody))
    biases = [int(tok) for tok in re.findall(r"-?\d+", bbody)]
    if len(kernels) != klen:
        raise ValueError(f"{path}: kernel array holds {len(kernels)} bytes, length constant says {klen}")
    if len(biases) != blen:
        raise ValueError(f"{path}: bias array holds {len(biases)} values, length constant says {blen}")
    return kernels, biases
