"""Fixed-point quantization of feature maps.

Values are clamped to ``[-CLAMP, CLAMP]`` and snapped upward onto the grid
``code / 2**(B-1)`` via a ceiling, so the quantization error is one-sided:
``0 <= Q(v) - v < 2**(1-B)`` for any v already inside the clamp range. The
integer codes therefore lie in ``[-2**(B+1), 2**(B+1)]``.

Training never sees the hard quantizer directly: the distortion path uses a
straight-through estimator and the rate path adds uniform noise matching the
ceiling error support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.tensor import Tensor, as_tensor, straight_through

CLAMP = 4.0


class QuantizationError(ValueError):
    pass


@dataclass
class QuantizedFeatureMap:
    """Integer codes on the B-bit grid; dequantized value is code / 2**(B-1)."""

    codes: np.ndarray  # int32, shape (C, H, W) or (N, C, H, W)
    bits: int

    @property
    def shape(self):
        return self.codes.shape

    def __eq__(self, other):
        return (
            isinstance(other, QuantizedFeatureMap)
            and self.bits == other.bits
            and self.codes.shape == other.codes.shape
            and bool(np.array_equal(self.codes, other.codes))
        )

    def max_code(self):
        return code_limit(self.bits)


def code_limit(bits):
    """Largest magnitude an integer code can take after clamping."""
    return int(CLAMP) << (bits - 1)


def step_size(bits):
    """Grid spacing 2**(1-B)."""
    return 2.0 ** (1 - bits)


def clamp_values(values):
    return np.clip(values, -CLAMP, CLAMP)


def quantize(values, bits):
    """Quantize an array (or Tensor) of features to a B-bit grid."""
    if bits < 2:
        raise QuantizationError(f"quantizer bits must be >= 2, got {bits}")
    arr = values.data if isinstance(values, Tensor) else np.asarray(values)
    if not np.isfinite(arr).all():
        raise QuantizationError("cannot quantize non-finite values")
    scale = float(1 << (bits - 1))
    codes = np.ceil(clamp_values(arr).astype(np.float64) * scale).astype(np.int32)
    return QuantizedFeatureMap(codes=codes, bits=int(bits))


def dequantize(q):
    """Map integer codes back onto grid values code / 2**(B-1)."""
    scale = float(1 << (q.bits - 1))
    return (q.codes.astype(np.float32)) / np.float32(scale)


def quantize_values(values, bits):
    """Quantize and immediately dequantize: the decoder-visible values."""
    return dequantize(quantize(values, bits))


def quantize_ste(features, bits):
    """Straight-through surrogate: grid values forward, identity gradient."""
    return straight_through(features, lambda a: quantize_values(a, bits))


def quantize_noise(features, bits, rng):
    """Additive-noise surrogate: features plus iid U[0, 2**(1-B)) noise.

    Matches the support of the ceiling quantizer's error; used by the rate
    term, which integrates a continuous density.
    """
    features = as_tensor(features)
    noise = rng.uniform(0.0, step_size(bits), size=features.data.shape).astype(features.data.dtype)
    return features + Tensor(noise)
