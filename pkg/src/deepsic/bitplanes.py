"""Bitplane decomposition of quantized feature codes.

A code tensor becomes ``plane_count(B)`` binary planes: one sign plane first,
then magnitude planes most-significant first. The plane count is derived from
B and the quantizer's clamp range alone, so both coder ends agree on it
without side information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantization import QuantizedFeatureMap, code_limit


class BitplaneError(ValueError):
    pass


def plane_count(bits):
    """Sign plane plus enough magnitude planes for the clamped code range."""
    return bits + 4


@dataclass
class BitplaneSet:
    """Binary planes of one code tensor; ``planes[0]`` is the sign plane,
    ``planes[1]`` the most significant magnitude plane."""

    planes: np.ndarray  # uint8, shape (P, C, H, W)
    bits: int

    @property
    def shape(self):
        return self.planes.shape[1:]

    def __eq__(self, other):
        return (
            isinstance(other, BitplaneSet)
            and self.bits == other.bits
            and self.planes.shape == other.planes.shape
            and bool(np.array_equal(self.planes, other.planes))
        )


def to_bitplanes(q: QuantizedFeatureMap) -> BitplaneSet:
    codes = q.codes
    if codes.ndim != 3:
        raise BitplaneError(f"expected (C, H, W) codes, got shape {codes.shape}")
    limit = code_limit(q.bits)
    if codes.size and (codes.min() < -limit or codes.max() > limit):
        raise BitplaneError(
            f"codes out of range [{-limit}, {limit}] for B={q.bits}: "
            f"found [{int(codes.min())}, {int(codes.max())}]"
        )
    p = plane_count(q.bits)
    n_mag = p - 1
    mag = np.abs(codes.astype(np.int64))
    planes = np.empty((p,) + codes.shape, dtype=np.uint8)
    planes[0] = (codes < 0).astype(np.uint8)
    for i in range(n_mag):
        shift = n_mag - 1 - i  # most significant magnitude plane first
        planes[1 + i] = ((mag >> shift) & 1).astype(np.uint8)
    return BitplaneSet(planes=planes, bits=q.bits)


def from_bitplanes(bp: BitplaneSet) -> QuantizedFeatureMap:
    p = plane_count(bp.bits)
    if bp.planes.shape[0] != p:
        raise BitplaneError(f"expected {p} planes for B={bp.bits}, got {bp.planes.shape[0]}")
    n_mag = p - 1
    mag = np.zeros(bp.planes.shape[1:], dtype=np.int64)
    for i in range(n_mag):
        shift = n_mag - 1 - i
        mag |= bp.planes[1 + i].astype(np.int64) << shift
    sign = np.where(bp.planes[0] > 0, -1, 1).astype(np.int64)
    return QuantizedFeatureMap(codes=(sign * mag).astype(np.int32), bits=bp.bits)
