"""Context-adaptive binary arithmetic coding of bitplanes.

The probability model is a per-context Krichevsky-Trofimov counter,
``p1 = (c1 + 1/2) / (c0 + c1 + 1)``, updated online after every coded bit.
Contexts combine the plane index, a channel group, the number of set bits
among the three causal neighbors (west, north, northwest), and the bit at the
same position in the previously coded plane. Encoder and decoder walk the
planes in the same order and update the same counters, so their states agree
by construction.

The coder itself is a 32-bit range coder with byte-wise renormalization and
carry propagation (pending-byte buffer plus counter); streams terminate by
flushing the remaining window bytes. Hot loops are JIT-compiled.

Framed payload layout (little-endian, pinned by golden-file tests):

    u32  payload length
    ...  payload bytes (range coder output)
    u32  CRC-32 of the integer codes the planes reassemble to
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
from numba import njit

from .bitplanes import BitplaneSet, from_bitplanes, plane_count

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

CHANNEL_GROUPS = 4
NEIGHBOR_BUCKETS = 4
CONTEXTS_PER_PLANE = CHANNEL_GROUPS * NEIGHBOR_BUCKETS * 2


class DecodeError(ValueError):
    pass


def context_count(n_planes):
    return n_planes * CONTEXTS_PER_PLANE


def fresh_counts(n_contexts):
    """Zeroed KT counters: column 0 counts zeros, column 1 counts ones."""
    return np.zeros((n_contexts, 2), dtype=np.int64)


def kt_probability_one(c0, c1):
    """The adaptive estimate used by both coder ends."""
    return (c1 + 0.5) / (c0 + c1 + 1.0)


@njit(cache=True, nogil=True, inline="always")
def _p0_scaled(c0, c1):
    p0 = ((2 * c0 + 1) << 16) // (2 * (c0 + c1) + 2)
    if p0 < 1:
        p0 = 1
    elif p0 > 0xFFFF:
        p0 = 0xFFFF
    return p0


@njit(cache=True, nogil=True)
def _encode_kernel(bits, ctx_ids, counts, out):
    low = 0  # up to 33 bits pre-renormalization
    rng = MASK32
    cache = 0
    pending = 0
    pos = 0
    started = False
    for k in range(bits.size):
        ctx = ctx_ids[k]
        p0 = _p0_scaled(counts[ctx, 0], counts[ctx, 1])
        bound = (rng >> 16) * p0
        if bits[k] == 0:
            rng = bound
            counts[ctx, 0] += 1
        else:
            low += bound
            rng -= bound
            counts[ctx, 1] += 1
        while rng < TOP:
            if low < 0xFF000000 or low > MASK32:
                carry = low >> 32
                if started:
                    out[pos] = (cache + carry) & 0xFF
                    pos += 1
                else:
                    started = True  # initial cache byte dropped; carry impossible (fraction < 1)
                for _ in range(pending):
                    out[pos] = (0xFF + carry) & 0xFF
                    pos += 1
                pending = 0
                cache = (low >> 24) & 0xFF
            else:
                pending += 1
            low = (low & 0x00FFFFFF) << 8
            rng = (rng << 8) & MASK32
    for _ in range(5):  # flush cache plus the 4 bytes of low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            if started:
                out[pos] = (cache + carry) & 0xFF
                pos += 1
            else:
                started = True  # initial cache byte dropped; carry impossible (fraction < 1)
            for _ in range(pending):
                out[pos] = (0xFF + carry) & 0xFF
                pos += 1
            pending = 0
            cache = (low >> 24) & 0xFF
        else:
            pending += 1
        low = (low & 0x00FFFFFF) << 8
    return pos


@njit(cache=True, nogil=True)
def _decode_kernel(data, ctx_ids, counts, bits):
    rng = MASK32
    code = 0
    pos = 0
    for _ in range(4):
        byte = data[pos] if pos < data.size else 0
        code = ((code << 8) | byte) & MASK32
        pos += 1
    for k in range(bits.size):
        ctx = ctx_ids[k]
        p0 = _p0_scaled(counts[ctx, 0], counts[ctx, 1])
        bound = (rng >> 16) * p0
        if code < bound:
            rng = bound
            bits[k] = 0
            counts[ctx, 0] += 1
        else:
            code -= bound
            rng -= bound
            bits[k] = 1
            counts[ctx, 1] += 1
        while rng < TOP:
            byte = data[pos] if pos < data.size else 0
            code = ((code << 8) | byte) & MASK32
            pos += 1
            rng = (rng << 8) & MASK32
    return pos


@njit(cache=True, nogil=True, inline="always")
def _plane_ctx(planes, p, c, i, j, n_channels):
    w = planes[p, c, i, j - 1] if j > 0 else 0
    n = planes[p, c, i - 1, j] if i > 0 else 0
    nw = planes[p, c, i - 1, j - 1] if (i > 0 and j > 0) else 0
    prev = planes[p - 1, c, i, j] if p > 0 else 0
    g = (c * CHANNEL_GROUPS) // n_channels
    return (((p * CHANNEL_GROUPS + g) * NEIGHBOR_BUCKETS + (w + n + nw)) * 2) + prev


@njit(cache=True, nogil=True)
def _encode_planes_kernel(planes, counts, out):
    n_planes, n_channels, h, w = planes.shape
    low = 0
    rng = MASK32
    cache = 0
    pending = 0
    pos = 0
    started = False
    for p in range(n_planes):
        for c in range(n_channels):
            for i in range(h):
                for j in range(w):
                    ctx = _plane_ctx(planes, p, c, i, j, n_channels)
                    p0 = _p0_scaled(counts[ctx, 0], counts[ctx, 1])
                    bound = (rng >> 16) * p0
                    if planes[p, c, i, j] == 0:
                        rng = bound
                        counts[ctx, 0] += 1
                    else:
                        low += bound
                        rng -= bound
                        counts[ctx, 1] += 1
                    while rng < TOP:
                        if low < 0xFF000000 or low > MASK32:
                            carry = low >> 32
                            if started:
                                out[pos] = (cache + carry) & 0xFF
                                pos += 1
                            else:
                                started = True  # initial cache byte dropped; carry impossible (fraction < 1)
                            for _ in range(pending):
                                out[pos] = (0xFF + carry) & 0xFF
                                pos += 1
                            pending = 0
                            cache = (low >> 24) & 0xFF
                        else:
                            pending += 1
                        low = (low & 0x00FFFFFF) << 8
                        rng = (rng << 8) & MASK32
    for _ in range(5):
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            if started:
                out[pos] = (cache + carry) & 0xFF
                pos += 1
            else:
                started = True  # initial cache byte dropped; carry impossible (fraction < 1)
            for _ in range(pending):
                out[pos] = (0xFF + carry) & 0xFF
                pos += 1
            pending = 0
            cache = (low >> 24) & 0xFF
        else:
            pending += 1
        low = (low & 0x00FFFFFF) << 8
    return pos


@njit(cache=True, nogil=True)
def _decode_planes_kernel(data, counts, planes):
    n_planes, n_channels, h, w = planes.shape
    rng = MASK32
    code = 0
    pos = 0
    for _ in range(4):
        byte = data[pos] if pos < data.size else 0
        code = ((code << 8) | byte) & MASK32
        pos += 1
    for p in range(n_planes):
        for c in range(n_channels):
            for i in range(h):
                for j in range(w):
                    ctx = _plane_ctx(planes, p, c, i, j, n_channels)
                    p0 = _p0_scaled(counts[ctx, 0], counts[ctx, 1])
                    bound = (rng >> 16) * p0
                    if code < bound:
                        rng = bound
                        planes[p, c, i, j] = 0
                        counts[ctx, 0] += 1
                    else:
                        code -= bound
                        rng -= bound
                        planes[p, c, i, j] = 1
                        counts[ctx, 1] += 1
                    while rng < TOP:
                        byte = data[pos] if pos < data.size else 0
                        code = ((code << 8) | byte) & MASK32
                        pos += 1
                        rng = (rng << 8) & MASK32
    return pos


def _out_buffer(n_bits, n_contexts):
    # Empirical entropy plus per-context adaptation cost, with slack.
    return np.empty(n_bits // 8 + 16 * n_contexts + 1024, dtype=np.uint8)


def encode_bits(bits, ctx_ids, n_contexts):
    """Encode a raw bit sequence under caller-supplied context ids.

    Starts from a fresh (all-zero) context model, as every payload does.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    ctx_ids = np.ascontiguousarray(ctx_ids, dtype=np.int64)
    if bits.shape != ctx_ids.shape:
        raise ValueError(f"bits shape {bits.shape} != context shape {ctx_ids.shape}")
    out = _out_buffer(bits.size, n_contexts)
    n = _encode_kernel(bits, ctx_ids, fresh_counts(n_contexts), out)
    return bytes(out[:n])


def decode_bits(data, ctx_ids, n_contexts):
    """Inverse of :func:`encode_bits` for the same context id sequence."""
    ctx_ids = np.ascontiguousarray(ctx_ids, dtype=np.int64)
    bits = np.empty(ctx_ids.size, dtype=np.uint8)
    buf = np.frombuffer(data, dtype=np.uint8)
    _decode_kernel(buf, ctx_ids, fresh_counts(n_contexts), bits)
    return bits


def codes_checksum(codes):
    return zlib.crc32(np.ascontiguousarray(codes, dtype="<i4").tobytes()) & MASK32


def encode_payload(bp: BitplaneSet):
    """Entropy-code a plane set; returns (payload bytes, code checksum)."""
    planes = np.ascontiguousarray(bp.planes, dtype=np.uint8)
    n_ctx = context_count(planes.shape[0])
    out = _out_buffer(planes.size, n_ctx)
    n = _encode_planes_kernel(planes, fresh_counts(n_ctx), out)
    return bytes(out[:n]), codes_checksum(from_bitplanes(bp).codes)


def encode(bp: BitplaneSet) -> bytes:
    """Entropy-code a plane set into the framed payload layout."""
    payload, crc = encode_payload(bp)
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", crc)


def decode(data, shape, bits) -> BitplaneSet:
    """Decode a framed payload back into a plane set.

    ``shape`` is the (C, H, W) of the code tensor and ``bits`` its B. Raises
    :class:`DecodeError` on truncation or when the checksum of the decoded
    codes disagrees with the stored one (wrong shape metadata shows up here).
    Bytes beyond the declared frame are ignored.
    """
    if len(data) < 4:
        raise DecodeError(f"payload frame truncated: {len(data)} bytes, need at least 4 for the length prefix")
    (n_payload,) = struct.unpack("<I", data[:4])
    if len(data) < 4 + n_payload + 4:
        raise DecodeError(
            f"payload frame truncated: declares {n_payload} payload bytes plus checksum, "
            f"only {len(data) - 4} available"
        )
    payload = np.frombuffer(data, dtype=np.uint8, count=n_payload, offset=4)
    (stored_crc,) = struct.unpack_from("<I", data, 4 + n_payload)
    n_planes = plane_count(bits)
    planes = np.zeros((n_planes,) + tuple(shape), dtype=np.uint8)
    _decode_planes_kernel(payload, fresh_counts(context_count(n_planes)), planes)
    bp = BitplaneSet(planes=planes, bits=bits)
    crc = codes_checksum(from_bitplanes(bp).codes)
    if crc != stored_crc:
        raise DecodeError(f"code checksum mismatch: stored {stored_crc:#010x}, decoded {crc:#010x}")
    return bp
