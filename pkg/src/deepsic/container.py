"""The compressed blob container: header, optional semantic payload, entropy
payload. This byte layout is the codec's wire format; see FORMAT.md for a
worked dump. All integers little-endian, no padding.

    offset size  field
    0      4     magic "DSIC"
    4      1     format version (1)
    5      1     variant: 0 = semantics at decode time, 1 = embedded semantics
    6      2     coded width  (divisible by the preset's stride product)
    8      2     coded height (divisible by the preset's stride product)
    10     2     original width  (pre-padding; <= coded width)
    12     2     original height (pre-padding; <= coded height)
    14     1     rate preset id (0 = lo, 1 = mid, 2 = hi)
    15     1     quantizer bits B
    16     2     class count K
    -- variant 1 only (17 bytes):
    18     2     class id
    20     10    top-5 class ids, u16 each
    30     5     top-5 probabilities, u8 each (p * 255 rounded)
    -- entropy block (follows header):
    +0     4     payload length N
    +4     N     range coder payload
    +4+N   4     CRC-32 of the integer feature codes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"DSIC"
VERSION = 1
VARIANT_POST = 0
VARIANT_PRE = 1

BASE_HEADER_BYTES = 18
SEMANTIC_PAYLOAD_BYTES = 17

PRESET_IDS = {"lo": 0, "mid": 1, "hi": 2}
PRESET_NAMES = {v: k for k, v in PRESET_IDS.items()}
_PRESET_STRIDE_PRODUCT = {0: 32, 1: 16, 2: 8}


class FormatError(ValueError):
    """Base class for container parse/serialize failures."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedBlobError(FormatError):
    pass


class InvalidBlobError(FormatError):
    """A field violates the container invariants."""


@dataclass
class SemanticPayload:
    class_id: int
    top5_ids: tuple  # 5 class ids, probability-descending
    top5_probs: tuple  # 5 ints in [0, 255]

    def __post_init__(self):
        self.top5_ids = tuple(int(i) for i in self.top5_ids)
        self.top5_probs = tuple(int(p) for p in self.top5_probs)


@dataclass
class CompressedBlob:
    variant: int
    width: int
    height: int
    orig_width: int
    orig_height: int
    preset_id: int
    bits: int
    num_classes: int
    entropy_payload: bytes
    code_checksum: int
    semantics: SemanticPayload | None = None
    version: int = VERSION

    @property
    def preset_name(self):
        return PRESET_NAMES.get(self.preset_id, f"?{self.preset_id}")

    def validate(self):
        if self.variant not in (VARIANT_POST, VARIANT_PRE):
            raise InvalidBlobError(f"variant must be 0 or 1, got {self.variant}")
        if self.variant == VARIANT_PRE and self.semantics is None:
            raise InvalidBlobError("embedded-semantics blob is missing its semantic payload")
        if self.variant == VARIANT_POST and self.semantics is not None:
            raise InvalidBlobError("decode-side-semantics blob must not carry a semantic payload")
        if self.preset_id not in PRESET_NAMES:
            raise InvalidBlobError(f"unknown preset id {self.preset_id}")
        sp = _PRESET_STRIDE_PRODUCT[self.preset_id]
        for name, dim in (("width", self.width), ("height", self.height)):
            if dim <= 0 or dim % sp:
                raise InvalidBlobError(f"coded {name} {dim} not divisible by preset stride product {sp}")
        if not (0 < self.orig_width <= self.width and 0 < self.orig_height <= self.height):
            raise InvalidBlobError(
                f"original dims {self.orig_width}x{self.orig_height} must be positive and "
                f"fit within coded dims {self.width}x{self.height}"
            )
        if not 2 <= self.bits <= 14:
            raise InvalidBlobError(f"quantizer bits {self.bits} outside supported range [2, 14]")
        if self.num_classes < 1:
            raise InvalidBlobError(f"class count must be positive, got {self.num_classes}")
        if self.semantics is not None:
            s = self.semantics
            if len(s.top5_ids) != 5 or len(s.top5_probs) != 5:
                raise InvalidBlobError("semantic payload must carry exactly 5 ranked entries")
            if s.class_id >= self.num_classes:
                raise InvalidBlobError(f"class id {s.class_id} out of range for K={self.num_classes}")
            if any(not 0 <= p <= 255 for p in s.top5_probs):
                raise InvalidBlobError("quantized probabilities must fit in a byte")
            if list(s.top5_probs) != sorted(s.top5_probs, reverse=True):
                raise InvalidBlobError(f"top-5 probabilities must be non-increasing, got {s.top5_probs}")

    def header_bytes(self):
        return BASE_HEADER_BYTES + (SEMANTIC_PAYLOAD_BYTES if self.variant == VARIANT_PRE else 0)


def semantic_overhead_bits(blob: CompressedBlob) -> int:
    """Bits the blob spends on embedded semantics (0 for decode-side blobs)."""
    return SEMANTIC_PAYLOAD_BYTES * 8 if blob.variant == VARIANT_PRE else 0


def serialize(blob: CompressedBlob) -> bytes:
    blob.validate()
    out = [
        MAGIC,
        struct.pack(
            "<BBHHHHBBH",
            blob.version,
            blob.variant,
            blob.width,
            blob.height,
            blob.orig_width,
            blob.orig_height,
            blob.preset_id,
            blob.bits,
            blob.num_classes,
        ),
    ]
    if blob.semantics is not None:
        s = blob.semantics
        out.append(struct.pack("<H5H5B", s.class_id, *s.top5_ids, *s.top5_probs))
    out.append(struct.pack("<I", len(blob.entropy_payload)))
    out.append(blob.entropy_payload)
    out.append(struct.pack("<I", blob.code_checksum))
    return b"".join(out)


def parse(data: bytes) -> CompressedBlob:
    """Parse and fully validate a serialized blob.

    Raises a distinct :class:`FormatError` subclass per failure mode; never
    returns a partially filled blob. Trailing bytes beyond the entropy block
    are ignored.
    """
    if len(data) < 4:
        raise TruncatedBlobError(f"blob is {len(data)} bytes; too short for the 4-byte magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < BASE_HEADER_BYTES:
        raise TruncatedBlobError(f"blob is {len(data)} bytes; header needs {BASE_HEADER_BYTES}")
    version = data[4]
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version} (supported: {VERSION})")
    (variant, width, height, orig_w, orig_h, preset_id, bits, num_classes) = struct.unpack_from(
        "<BHHHHBBH", data, 5
    )
    pos = BASE_HEADER_BYTES
    semantics = None
    if variant == VARIANT_PRE:
        if len(data) < pos + SEMANTIC_PAYLOAD_BYTES:
            raise TruncatedBlobError("blob truncated inside the semantic payload")
        fields = struct.unpack_from("<H5H5B", data, pos)
        semantics = SemanticPayload(class_id=fields[0], top5_ids=fields[1:6], top5_probs=fields[6:11])
        pos += SEMANTIC_PAYLOAD_BYTES
    if len(data) < pos + 4:
        raise TruncatedBlobError("blob truncated before the entropy payload length")
    (n_payload,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + n_payload + 4:
        raise TruncatedBlobError(
            f"blob truncated inside the entropy payload: declares {n_payload} bytes, "
            f"{len(data) - pos} remain"
        )
    payload = data[pos : pos + n_payload]
    (crc,) = struct.unpack_from("<I", data, pos + n_payload)
    blob = CompressedBlob(
        variant=variant,
        width=width,
        height=height,
        orig_width=orig_w,
        orig_height=orig_h,
        preset_id=preset_id,
        bits=bits,
        num_classes=num_classes,
        entropy_payload=payload,
        code_checksum=crc,
        semantics=semantics,
        version=version,
    )
    blob.validate()
    return blob


def entropy_block_bytes(blob: CompressedBlob) -> bytes:
    """The framed entropy block as the plane decoder expects it."""
    return struct.pack("<I", len(blob.entropy_payload)) + blob.entropy_payload + struct.pack("<I", blob.code_checksum)
