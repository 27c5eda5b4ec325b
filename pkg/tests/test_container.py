"""Container format: byte layout, round trips, corruption diagnostics."""

import struct

import numpy as np
import pytest

from deepsic import container, rangecoder
from deepsic.bitplanes import to_bitplanes
from deepsic.container import (
    BadMagicError,
    CompressedBlob,
    InvalidBlobError,
    SemanticPayload,
    TruncatedBlobError,
    UnsupportedVersionError,
    parse,
    semantic_overhead_bits,
    serialize,
)
from deepsic.quantization import QuantizedFeatureMap, code_limit


def make_blob(variant=0, preset_id=1, width=128, height=128, payload=b"\x01\x02\x03", k=10, seed=0):
    semantics = None
    if variant == 1:
        rng = np.random.default_rng(seed)
        probs = sorted(rng.integers(0, 256, size=5).tolist(), reverse=True)
        ids = rng.integers(0, k, size=5).tolist()
        semantics = SemanticPayload(class_id=ids[0], top5_ids=ids, top5_probs=probs)
    return CompressedBlob(
        variant=variant,
        width=width,
        height=height,
        orig_width=width - 3 if width > 3 else width,
        orig_height=height,
        preset_id=preset_id,
        bits=6,
        num_classes=k,
        entropy_payload=payload,
        code_checksum=0xDEADBEEF,
        semantics=semantics,
    )


class TestLayout:
    def test_post_header_is_18_bytes(self):
        blob = make_blob(variant=0)
        data = serialize(blob)
        assert blob.header_bytes() == 18
        assert data[:4] == b"DSIC"
        # entropy length prefix sits right after the base header
        assert struct.unpack_from("<I", data, 18)[0] == len(blob.entropy_payload)

    def test_pre_header_adds_17_byte_semantic_payload(self):
        blob = make_blob(variant=1)
        data = serialize(blob)
        assert blob.header_bytes() == 18 + 17
        assert struct.unpack_from("<I", data, 35)[0] == len(blob.entropy_payload)

    def test_semantic_overhead_bits(self):
        assert semantic_overhead_bits(make_blob(variant=0)) == 0
        assert semantic_overhead_bits(make_blob(variant=1)) == 136

    def test_overhead_negligible_at_128(self):
        # 136 bits over a 128x128 image: about 0.0083 bpp
        bpp = 136 / (128 * 128)
        assert bpp == pytest.approx(0.0083, abs=3e-4)
        assert bpp < 0.25 / 10

    def test_serialized_length_accounts_exactly(self):
        for variant in (0, 1):
            blob = make_blob(variant=variant)
            expected = blob.header_bytes() + 4 + len(blob.entropy_payload) + 4
            assert len(serialize(blob)) == expected


class TestRoundTrip:
    def test_randomized_blobs(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            variant = int(rng.integers(0, 2))
            preset_id = int(rng.integers(0, 3))
            mult = {0: 32, 1: 16, 2: 8}[preset_id]
            blob = make_blob(
                variant=variant,
                preset_id=preset_id,
                width=mult * int(rng.integers(1, 9)),
                height=mult * int(rng.integers(1, 9)),
                payload=bytes(rng.integers(0, 256, size=int(rng.integers(0, 64))).astype(np.uint8)),
                seed=trial,
            )
            data = serialize(blob)
            parsed = parse(data)
            assert serialize(parsed) == data
            assert parsed == blob

    def test_trailing_garbage_ignored(self):
        blob = make_blob()
        parsed = parse(serialize(blob) + b"junk")
        assert parsed == blob


class TestParseErrors:
    def test_bad_magic(self):
        data = bytearray(serialize(make_blob()))
        data[:4] = b"JUNK"
        with pytest.raises(BadMagicError):
            parse(bytes(data))

    def test_unsupported_version(self):
        data = bytearray(serialize(make_blob()))
        data[4] = 255
        with pytest.raises(UnsupportedVersionError):
            parse(bytes(data))

    def test_truncations_at_every_boundary(self):
        data = serialize(make_blob(variant=1))
        for cut in (2, 10, 20, len(data) - 5, len(data) - 1):
            with pytest.raises(TruncatedBlobError):
                parse(data[:cut])

    def test_indivisible_dims_rejected(self):
        blob = make_blob(width=130)
        with pytest.raises(InvalidBlobError, match="divisible"):
            serialize(blob)
        data = bytearray(serialize(make_blob()))
        struct.pack_into("<H", data, 6, 130)
        with pytest.raises(InvalidBlobError, match="divisible"):
            parse(bytes(data))

    def test_variant_payload_consistency_enforced(self):
        blob = make_blob(variant=0)
        blob.semantics = SemanticPayload(1, (1, 2, 3, 4, 5), (200, 100, 50, 20, 10))
        with pytest.raises(InvalidBlobError):
            serialize(blob)
        blob = make_blob(variant=1)
        blob.semantics = None
        with pytest.raises(InvalidBlobError):
            serialize(blob)

    def test_unsorted_top5_rejected(self):
        blob = make_blob(variant=1)
        blob.semantics = SemanticPayload(1, (1, 2, 3, 4, 5), (10, 200, 50, 20, 10))
        with pytest.raises(InvalidBlobError, match="non-increasing"):
            serialize(blob)

    def test_flipped_payload_bit_fails_checksum_at_decode(self):
        rng = np.random.default_rng(1)
        lim = code_limit(6)
        q = QuantizedFeatureMap(rng.integers(-lim, lim + 1, size=(8, 4, 4)).astype(np.int32), 6)
        payload, crc = rangecoder.encode_payload(to_bitplanes(q))
        blob = CompressedBlob(
            variant=0, width=64, height=64, orig_width=64, orig_height=64,
            preset_id=1, bits=6, num_classes=10,
            entropy_payload=payload, code_checksum=crc,
        )
        data = bytearray(serialize(blob))
        data[25] ^= 0x10  # flip one payload bit
        parsed = parse(bytes(data))  # header still parses
        with pytest.raises(rangecoder.DecodeError, match="checksum"):
            rangecoder.decode(container.entropy_block_bytes(parsed), (8, 4, 4), 6)


class TestGoldenFiles:
    @pytest.mark.parametrize("name", ["post_v1.dsic", "pre_v1.dsic"])
    def test_golden_round_trip(self, name, golden_dir):
        data = (golden_dir / name).read_bytes()
        blob = parse(data)
        assert serialize(blob) == data
        assert blob.version == 1

    def test_golden_pre_has_semantics(self, golden_dir):
        blob = parse((golden_dir / "pre_v1.dsic").read_bytes())
        assert blob.variant == container.VARIANT_PRE
        assert blob.semantics is not None
        assert semantic_overhead_bits(blob) == 136

    def test_golden_decodes_to_expected_codes(self, golden_dir):
        blob = parse((golden_dir / "post_v1.dsic").read_bytes())
        cfg_shape = (128, blob.height // 16, blob.width // 16)  # mid preset
        bp = rangecoder.decode(container.entropy_block_bytes(blob), cfg_shape, blob.bits)
        from deepsic.bitplanes import from_bitplanes

        codes = from_bitplanes(bp).codes
        expected = np.load(golden_dir / "post_v1_codes.npy")
        assert np.array_equal(codes, expected)
