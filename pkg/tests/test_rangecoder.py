"""Entropy coder: losslessness, adaptivity, and rate bounds.

The expected compressed sizes come from two independent oracles computed
inline: the adaptive-estimator (KT) pathwise bound for deterministic
sequences, and the binary entropy function for iid ones.
"""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsic import rangecoder as rc
from deepsic.bitplanes import from_bitplanes, to_bitplanes
from deepsic.quantization import QuantizedFeatureMap, code_limit


def random_qmap(rng, shape, bits=6):
    lim = code_limit(bits)
    return QuantizedFeatureMap(rng.integers(-lim, lim + 1, size=shape).astype(np.int32), bits)


def kt_bits_for_constant_run(n):
    """Code length of n identical bits under the KT estimator, in bits."""
    return sum(math.log2((k + 1) / (k + 0.5)) for k in range(n))


def binary_entropy(p):
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


class TestRawBitstream:
    def test_all_zero_run_compresses_to_adaptive_bound(self):
        bits = np.zeros(4096, np.uint8)
        ctx = np.zeros(4096, np.int64)
        payload = rc.encode_bits(bits, ctx, 1)
        bound_bytes = kt_bits_for_constant_run(4096) / 8
        assert len(payload) < 16
        assert len(payload) <= math.ceil(bound_bytes) + 5  # bound plus coder termination
        assert np.array_equal(rc.decode_bits(payload, ctx, 1), bits)

    def test_fair_coins_incompressible(self):
        rng = np.random.default_rng(7)
        bits = rng.integers(0, 2, 4096).astype(np.uint8)
        ctx = np.zeros(4096, np.int64)
        payload = rc.encode_bits(bits, ctx, 1)
        assert len(payload) >= 505  # >= 4040 bits
        assert len(payload) <= 4096 // 8 + 32
        assert np.array_equal(rc.decode_bits(payload, ctx, 1), bits)

    def test_biased_source_near_entropy(self):
        rng = np.random.default_rng(11)
        n = 10_000
        bits = (rng.random(n) < 0.1).astype(np.uint8)
        ctx = np.zeros(n, np.int64)
        payload = rc.encode_bits(bits, ctx, 1)
        bound = n * binary_entropy(0.1)
        assert len(payload) * 8 <= bound * 1.05
        assert np.array_equal(rc.decode_bits(payload, ctx, 1), bits)

    def test_multi_context_streams(self):
        rng = np.random.default_rng(13)
        bits = rng.integers(0, 2, 5000).astype(np.uint8)
        ctx = rng.integers(0, 9, 5000).astype(np.int64)
        payload = rc.encode_bits(bits, ctx, 9)
        assert np.array_equal(rc.decode_bits(payload, ctx, 9), bits)

    def test_encoder_decoder_context_states_agree(self):
        rng = np.random.default_rng(17)
        bits = (rng.random(3000) < 0.25).astype(np.uint8)
        ctx = rng.integers(0, 4, 3000).astype(np.int64)
        enc_counts = rc.fresh_counts(4)
        out = np.empty(len(bits) // 2 + 4096, np.uint8)
        n = rc._encode_kernel(bits, ctx, enc_counts, out)
        dec_counts = rc.fresh_counts(4)
        decoded = np.empty(3000, np.uint8)
        rc._decode_kernel(out[:n], ctx, dec_counts, decoded)
        assert np.array_equal(decoded, bits)
        assert np.array_equal(enc_counts, dec_counts)

    def test_kt_probability_estimate(self):
        assert rc.kt_probability_one(0, 0) == 0.5
        assert rc.kt_probability_one(10, 0) == pytest.approx(0.5 / 11)
        assert 0.0 < rc.kt_probability_one(10**9, 0) < 1.0


class TestPlaneCodec:
    def test_empty_planes_terminate_cleanly(self):
        q = QuantizedFeatureMap(np.zeros((0, 0, 0), dtype=np.int32), 6)
        data = rc.encode(to_bitplanes(q))
        n_payload = struct.unpack("<I", data[:4])[0]
        assert n_payload <= 8  # termination bytes only
        decoded = rc.decode(data, (0, 0, 0), 6)
        assert decoded.planes.size == 0

    def test_structured_beats_random_every_seed(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            lim = code_limit(6)
            random_q = random_qmap(rng, (8, 8, 8))
            structured = QuantizedFeatureMap(
                np.tile(rng.integers(-4, 5, size=(8, 1, 1)), (1, 8, 8)).astype(np.int32), 6
            )
            n_rand = len(rc.encode(to_bitplanes(random_q)))
            n_struct = len(rc.encode(to_bitplanes(structured)))
            assert n_struct < n_rand

    @given(seed=st.integers(min_value=0, max_value=2**31), bits=st.sampled_from([2, 4, 6, 8]))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_random(self, seed, bits):
        rng = np.random.default_rng(seed)
        q = random_qmap(rng, (3, 5, 4), bits)
        bp = to_bitplanes(q)
        decoded = rc.decode(rc.encode(bp), (3, 5, 4), bits)
        assert decoded == bp
        assert from_bitplanes(decoded) == q

    def test_round_trip_small_shape_dense(self):
        rng = np.random.default_rng(42)
        for _ in range(400):
            q = random_qmap(rng, (2, 2, 2), 2)
            assert from_bitplanes(rc.decode(rc.encode(to_bitplanes(q)), (2, 2, 2), 2)) == q

    def test_truncated_payload_is_decode_error(self):
        rng = np.random.default_rng(3)
        data = rc.encode(to_bitplanes(random_qmap(rng, (4, 4, 4))))
        with pytest.raises(rc.DecodeError, match="truncated"):
            rc.decode(data[:-1], (4, 4, 4), 6)
        with pytest.raises(rc.DecodeError, match="truncated"):
            rc.decode(data[:3], (4, 4, 4), 6)

    def test_trailing_garbage_ignored(self):
        rng = np.random.default_rng(4)
        q = random_qmap(rng, (4, 4, 4))
        data = rc.encode(to_bitplanes(q))
        assert from_bitplanes(rc.decode(data + b"\xaa\xbb\xcc", (4, 4, 4), 6)) == q

    def test_wrong_shape_detected_by_checksum(self):
        rng = np.random.default_rng(5)
        data = rc.encode(to_bitplanes(random_qmap(rng, (4, 4, 4))))
        with pytest.raises(rc.DecodeError, match="checksum"):
            rc.decode(data, (4, 2, 8), 6)

    def test_flipped_payload_bit_detected(self):
        rng = np.random.default_rng(6)
        data = bytearray(rc.encode(to_bitplanes(random_qmap(rng, (4, 4, 4)))))
        data[10] ^= 0x40
        with pytest.raises(rc.DecodeError, match="checksum"):
            rc.decode(bytes(data), (4, 4, 4), 6)

    def test_framing_layout(self):
        rng = np.random.default_rng(8)
        q = random_qmap(rng, (2, 3, 3))
        payload, crc = rc.encode_payload(to_bitplanes(q))
        framed = rc.encode(to_bitplanes(q))
        assert framed[:4] == struct.pack("<I", len(payload))
        assert framed[4 : 4 + len(payload)] == payload
        assert framed[4 + len(payload) :] == struct.pack("<I", crc)
