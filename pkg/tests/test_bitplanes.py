"""Bitplane decomposition: losslessness and layout."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsic.bitplanes import BitplaneError, BitplaneSet, from_bitplanes, plane_count, to_bitplanes
from deepsic.quantization import QuantizedFeatureMap, code_limit


def qmap(codes, bits=6):
    return QuantizedFeatureMap(codes=np.asarray(codes, dtype=np.int32), bits=bits)


class TestLayout:
    def test_plane_count_from_bits_alone(self):
        for bits in (2, 4, 6, 8):
            assert plane_count(bits) == bits + 4

    def test_all_zero_codes_give_all_zero_planes(self):
        bp = to_bitplanes(qmap(np.zeros((3, 4, 5))))
        assert bp.planes.shape == (10, 3, 4, 5)
        assert not bp.planes.any()

    def test_binary_expansion_of_five(self):
        codes = np.zeros((1, 2, 2), dtype=np.int32)
        codes[0, 1, 0] = 5  # binary 101
        bp = to_bitplanes(qmap(codes))
        assert bp.planes[0].sum() == 0  # sign plane clear
        magnitude = bp.planes[1:]
        assert magnitude[:, 0, 1, 0].sum() == 2  # bits 2^2 and 2^0
        set_planes = np.nonzero(magnitude[:, 0, 1, 0])[0]
        n_mag = magnitude.shape[0]
        assert [(n_mag - 1 - p) for p in set_planes] == [2, 0]  # MSB-first ordering
        assert magnitude.sum() == 2

    def test_sign_plane_marks_negatives(self):
        bp = to_bitplanes(qmap([[[-3, 3]]]))
        assert bp.planes[0, 0, 0, 0] == 1 and bp.planes[0, 0, 0, 1] == 0

    def test_out_of_range_codes_rejected(self):
        bad = np.full((1, 1, 1), code_limit(6) + 1, dtype=np.int32)
        with pytest.raises(BitplaneError, match="range"):
            to_bitplanes(qmap(bad))

    def test_plane_count_mismatch_rejected(self):
        bp = to_bitplanes(qmap(np.zeros((1, 2, 2))))
        with pytest.raises(BitplaneError, match="planes"):
            from_bitplanes(BitplaneSet(planes=bp.planes[:-1], bits=bp.bits))


class TestRoundTrip:
    @given(
        bits=st.sampled_from([2, 4, 6, 8]),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_random_tensors(self, bits, seed):
        rng = np.random.default_rng(seed)
        lim = code_limit(bits)
        q = qmap(rng.integers(-lim, lim + 1, size=(3, 4, 2)), bits)
        assert from_bitplanes(to_bitplanes(q)) == q

    def test_extremes(self):
        for bits in (2, 6):
            lim = code_limit(bits)
            for value in (-lim, lim, 0, 1, -1):
                q = qmap(np.full((2, 2, 2), value), bits)
                assert from_bitplanes(to_bitplanes(q)) == q

    def test_thousand_random_maps(self):
        rng = np.random.default_rng(123)
        lim = code_limit(6)
        for _ in range(1000):
            q = qmap(rng.integers(-lim, lim + 1, size=(2, 3, 3)))
            assert from_bitplanes(to_bitplanes(q)) == q
