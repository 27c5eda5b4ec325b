"""Semantic image codec: compression and classification share one bitstream."""

from .networks import CodecModel, RateConfig, SemanticResult, preset, PRESETS
from .quantization import QuantizedFeatureMap, dequantize, quantize
from .training import TrainConfig, train, load_checkpoint, save_checkpoint

__all__ = [
    "CodecModel",
    "RateConfig",
    "SemanticResult",
    "preset",
    "PRESETS",
    "QuantizedFeatureMap",
    "quantize",
    "dequantize",
    "TrainConfig",
    "train",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
