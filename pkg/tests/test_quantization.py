"""Quantizer grid contract: one-sided error, idempotence, monotonicity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsic.nn import Tensor
from deepsic.nn.tensor import tsum
from deepsic.quantization import (
    CLAMP,
    QuantizationError,
    code_limit,
    dequantize,
    quantize,
    quantize_noise,
    quantize_ste,
    quantize_values,
    step_size,
)

clamped_floats = st.floats(min_value=-CLAMP, max_value=CLAMP, allow_nan=False)
bits_strategy = st.sampled_from([2, 4, 6, 8])


class TestQuantizeExamples:
    def test_zero_is_fixed(self):
        q = quantize(np.array([0.0]), 6)
        assert q.codes[0] == 0 and dequantize(q)[0] == 0.0

    def test_half_is_grid_point(self):
        q = quantize(np.array([0.5]), 6)
        assert q.codes[0] == 16
        assert dequantize(q)[0] == 0.5

    def test_near_half_rounds_up(self):
        # ceil(0.49 * 32) = ceil(15.68) = 16
        assert math.ceil(0.49 * 32) == 16
        q = quantize(np.array([0.49]), 6)
        assert q.codes[0] == 16 and dequantize(q)[0] == 0.5

    def test_negative_rounds_toward_zero(self):
        # ceil(-0.49 * 32) = ceil(-15.68) = -15 -> -15/32
        assert math.ceil(-0.49 * 32) == -15
        q = quantize(np.array([-0.49]), 6)
        assert q.codes[0] == -15 and dequantize(q)[0] == pytest.approx(-0.46875)

    def test_code_range_after_clamp(self):
        values = np.array([-100.0, -CLAMP, CLAMP, 100.0])
        for bits in (2, 4, 6, 8):
            q = quantize(values, bits)
            lim = code_limit(bits)
            assert q.codes.min() >= -lim and q.codes.max() <= lim
            assert q.codes[0] == -lim and q.codes[-1] == lim

    def test_rejects_non_finite(self):
        with pytest.raises(QuantizationError, match="finite"):
            quantize(np.array([np.nan]), 6)

    def test_rejects_tiny_bit_depth(self):
        with pytest.raises(QuantizationError):
            quantize(np.zeros(1), 1)


class TestDequantize:
    def test_code_sixteen(self):
        from deepsic.quantization import QuantizedFeatureMap

        assert dequantize(QuantizedFeatureMap(np.array([16], dtype=np.int32), 6))[0] == 0.5

    def test_code_zero(self):
        from deepsic.quantization import QuantizedFeatureMap

        assert dequantize(QuantizedFeatureMap(np.array([0], dtype=np.int32), 6))[0] == 0.0

    def test_quantize_of_dequantize_is_identity(self):
        rng = np.random.default_rng(0)
        for bits in (2, 4, 6, 8):
            lim = code_limit(bits)
            from deepsic.quantization import QuantizedFeatureMap

            q = QuantizedFeatureMap(rng.integers(-lim, lim + 1, size=(4, 5, 6)).astype(np.int32), bits)
            assert quantize(dequantize(q), bits) == q


class TestGridContract:
    @given(v=clamped_floats, bits=bits_strategy)
    @settings(max_examples=300, deadline=None)
    def test_one_sided_error(self, v, bits):
        err = quantize_values(np.array([v], dtype=np.float64), bits)[0] - v
        assert 0.0 <= err < step_size(bits) + 1e-7

    @given(v=clamped_floats, bits=bits_strategy)
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, v, bits):
        once = quantize_values(np.array([v], dtype=np.float64), bits)
        twice = quantize_values(once, bits)
        assert np.array_equal(once, twice)

    @given(v1=clamped_floats, v2=clamped_floats, bits=bits_strategy)
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, v1, v2, bits):
        lo, hi = min(v1, v2), max(v1, v2)
        qlo, qhi = quantize_values(np.array([lo, hi], dtype=np.float64), bits)
        assert qlo <= qhi

    def test_bulk_random_contract(self):
        rng = np.random.default_rng(1)
        for bits in (2, 4, 6, 8):
            v = rng.uniform(-CLAMP, CLAMP, size=100_000)
            err = quantize_values(v, bits) - v
            assert err.min() >= 0.0
            assert err.max() < step_size(bits)


class TestSurrogates:
    def test_noise_support(self):
        rng = np.random.default_rng(2)
        grid = quantize_values(rng.uniform(-CLAMP, CLAMP, size=1000), 6)
        noisy = quantize_noise(Tensor(grid), 6, np.random.default_rng(3)).data
        delta = noisy - grid.astype(np.float32)
        assert delta.min() >= 0.0 and delta.max() < step_size(6)

    def test_straight_through_forward_equals_quantize(self):
        rng = np.random.default_rng(4)
        v = rng.uniform(-CLAMP, CLAMP, size=(3, 4)).astype(np.float32)
        out = quantize_ste(Tensor(v), 6).data
        np.testing.assert_array_equal(out, quantize_values(v, 6))

    def test_straight_through_gradient_all_ones(self):
        v = Tensor(np.random.default_rng(5).uniform(-1, 1, size=(2, 3)).astype(np.float32), requires_grad=True)
        tsum(quantize_ste(v, 6)).backward()
        np.testing.assert_allclose(v.grad, 1.0)
