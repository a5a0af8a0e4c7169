"""Big/little cascaded inference for activity recognition on small MCUs."""

from .cascade import CascadeConfig, run_sequence
from .cost import estimate, load_profile
from .estimators import BigLittleCascade, CNNClassifier
from .graph import ModelGraph, ModelKind, build, total_params
from .quant import QuantParams, dequantize, quantize
from .runtime import infer

__all__ = [
    "BigLittleCascade", "CNNClassifier", "CascadeConfig", "ModelGraph", "ModelKind", "QuantParams",
    "build", "dequantize", "estimate", "infer", "load_profile", "quantize", "run_sequence", "total_params",
]
__version__ = "0.1.0"
