"""Learnable per-channel density of the quantized features.

Each channel carries a piecewise-linear CDF over the quantizer's clamp range,
parameterized by 32 softplus-positive bin increments (33 knots), so the CDF
is non-decreasing with endpoints 0 and 1 by construction. The probability
mass of a code is the CDF difference across its quantization bin, floored at
``PROB_FLOOR`` to keep the code-length estimate finite.
"""

from __future__ import annotations

import numpy as np

from .nn.layers import KIND_DENSITY
from .nn.tensor import (
    Tensor,
    as_tensor,
    clamp,
    cumsum_last,
    gather_channel_bins,
    log,
    prepend_zero_last,
    softplus,
    tsum,
)
from .quantization import CLAMP, step_size

N_BINS = 32
N_KNOTS = N_BINS + 1
PROB_FLOOR = 1e-9
_LN2 = float(np.log(2.0))


class NumericalError(RuntimeError):
    pass


class DensityModel:
    kind = KIND_DENSITY

    def __init__(self, channels, bits, dtype=np.float32, init="normal"):
        self.channels = int(channels)
        self.bits = int(bits)
        self.knot_spacing = 2.0 * CLAMP / N_BINS
        if init == "uniform":
            theta = np.zeros((channels, N_BINS))
        elif init == "normal":
            # start from a unit-normal prior: batch-normalized features land
            # near N(0, 1), so this is bits closer than a uniform density
            centers = -CLAMP + (np.arange(N_BINS) + 0.5) * self.knot_spacing
            w = np.exp(-0.5 * centers**2)
            w = np.maximum(w / w.max(), 1e-6)
            theta = np.tile(np.log(np.expm1(w)), (channels, 1))
        else:
            raise ValueError(f"unknown density init {init!r}")
        self.theta = Tensor(theta.astype(dtype), requires_grad=True)

    def params(self):
        return [self.theta]

    def tensors(self):
        return [self.theta]

    def knot_table(self):
        """(C, 33) tensor of CDF knot values, 0 at -CLAMP and 1 at +CLAMP."""
        inc = softplus(self.theta)
        total = tsum(inc, axis=-1, keepdims=True)
        return prepend_zero_last(cumsum_last(inc) / total)

    def cdf(self, x):
        """Evaluate the CDF at (N, C, H, W) points; saturates outside the range."""
        x = as_tensor(x)
        if x.data.ndim == 3:
            x = x.reshape((1,) + x.data.shape)
        table = self.knot_table()
        u = clamp((x + CLAMP) * (1.0 / self.knot_spacing), 0.0, float(N_BINS))
        bins = np.minimum(np.floor(u.data), N_BINS - 1).astype(np.int64)
        left = gather_channel_bins(table, bins)
        right = gather_channel_bins(table, bins + 1)
        frac = u - Tensor(bins.astype(u.data.dtype))
        return left + (right - left) * frac

    def bin_probabilities(self, values):
        """Mass of the width-2^(1-B) quantization bin centered on each value."""
        values = as_tensor(values)
        half = 0.5 * step_size(self.bits)
        p = self.cdf(values + half) - self.cdf(values - half)
        bad = ~np.isfinite(p.data)
        if bad.any():
            channels = sorted(set(np.argwhere(bad)[:, -3].tolist()))
            raise NumericalError(f"density produced non-finite probabilities in channels {channels}")
        return clamp(p, PROB_FLOOR, None)

    def cdf_knots(self):
        """Current knot values as a plain array (diagnostics / monotonicity checks)."""
        return self.knot_table().data.copy()


def rate_term(noisy_features, model: DensityModel):
    """Estimated code length in bits per image: -sum(log2 P) over all elements,
    averaged over the batch when one is present.
    """
    noisy_features = as_tensor(noisy_features)
    arr = noisy_features
    if arr.data.ndim == 3:
        arr = arr.reshape((1,) + arr.data.shape)
    n = arr.data.shape[0]
    p = model.bin_probabilities(arr)
    return tsum(log(p)) * (-1.0 / (_LN2 * n))
