"""Affine UINT8 quantization primitives.

``real = (q - zero_point) * scale``. The MCU input mapping is
``scale=1, zero_point=128`` so that integer-rescaled sensor data in
[-128, 127] lands on the full UINT8 range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QMIN = 0
QMAX = 255
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
# smallest weight scale emitted for a constant tensor
SCALE_FLOOR = 1e-8


def round_half_away(x) -> np.ndarray:
    """Round to nearest integer, ties away from zero (exact for float64)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.trunc(x)
    frac = x - t
    return t + np.sign(x) * (np.abs(frac) >= 0.5)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        if int(self.zero_point) != self.zero_point or not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero_point must be an integer in [0, 255], got {self.zero_point!r}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @classmethod
    def from_mean_std(cls, mean_value: float, std_dev_value: float) -> "QuantParams":
        """Converter-style ``(mean_value, std_dev_value)`` pair."""
        return cls(scale=1.0 / std_dev_value, zero_point=int(mean_value))

    @classmethod
    def from_range(cls, rmin: float, rmax: float) -> "QuantParams":
        """Asymmetric parameters covering ``[rmin, rmax]`` widened to include 0."""
        rmin = min(float(rmin), 0.0)
        rmax = max(float(rmax), 0.0)
        scale = (rmax - rmin) / (QMAX - QMIN)
        if scale < SCALE_FLOOR:
            return cls(SCALE_FLOOR, int(np.clip(round_half_away(-rmin / SCALE_FLOOR), QMIN, QMAX)))
        zp = int(np.clip(round_half_away(QMIN - rmin / scale), QMIN, QMAX))
        return cls(scale, zp)

    @property
    def real_min(self) -> float:
        return (QMIN - self.zero_point) * self.scale

    @property
    def real_max(self) -> float:
        return (QMAX - self.zero_point) * self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(d["scale"], d["zero_point"])


#: Input mapping from ``--mean_values=128 --std_dev_values=1``.
INPUT_QPARAMS = QuantParams(1.0, 128)
#: Activation mapping from ``--default_ranges_min=0 --default_ranges_max=255``.
DEFAULT_ACTIVATION_QPARAMS = QuantParams.from_range(0.0, 255.0)


@dataclass(frozen=True)
class QuantizedTensor:
    shape: tuple
    data: np.ndarray = field(repr=False)
    qparams: QuantParams

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"shape extents must be positive, got {shape}")
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            raise TypeError(f"QuantizedTensor data must be uint8, got {data.dtype}")
        if data.size != int(np.prod(shape)):
            raise ValueError(f"data has {data.size} elements but shape {shape} needs {int(np.prod(shape))}")
        data = data.reshape(shape)
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    def dequantize(self) -> np.ndarray:
        return dequantize(self)


def quantize(real, qp: QuantParams) -> QuantizedTensor:
    """``q = clamp(round(real / scale) + zero_point, 0, 255)``."""
    real = np.asarray(real, dtype=np.float64)
    bad = ~np.isfinite(real)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite value {real[idx]!r} at index {idx}")
    q = np.clip(round_half_away(real / qp.scale) + qp.zero_point, QMIN, QMAX)
    shape = real.shape if real.ndim else (1,)
    return QuantizedTensor(shape, q.astype(np.uint8).reshape(shape), qp)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return (q.data.astype(np.float64) - q.qparams.zero_point) * q.qparams.scale


def requantize(acc, effective_scale: float, out_zp: int) -> np.ndarray:
    """Rescale int32 accumulators into the UINT8 output domain.

    ``out = clamp(round(acc * effective_scale) + out_zp, 0, 255)``.
    """
    if not effective_scale > 0:
        raise ValueError(f"effective_scale must be positive, got {effective_scale!r}")
    acc = np.asarray(acc, dtype=np.int64)
    out = round_half_away(acc.astype(np.float64) * float(effective_scale)) + int(out_zp)
    return np.clip(out, QMIN, QMAX).astype(np.uint8)


def quantize_bias(bias, input_scale: float, weight_scale: float) -> np.ndarray:
    """Bias in the accumulator domain: int32 with scale ``input_scale * weight_scale``."""
    b = round_half_away(np.asarray(bias, dtype=np.float64) / (input_scale * weight_scale))
    return np.clip(b, INT32_MIN, INT32_MAX).astype(np.int32)
