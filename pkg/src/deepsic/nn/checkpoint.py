"""Binary checkpoint format for model parameters.

Layout (little-endian throughout):

    magic   5 bytes  "DSICW"
    version u8       currently 1
    count   u16      number of layer records
    records:
      kind u8        1=conv 2=batchnorm 3=fullyconnected 4=density
      conv only: stride u8, kernel u8, transposed u8
      then one block per tensor of the layer, in layer order:
        rank u8, dims u32 * rank, payload float32 * prod(dims)

Round trips are bit-exact: payloads are the raw float32 bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .layers import KIND_BATCHNORM, KIND_CONV, KIND_DENSITY, KIND_FC

MAGIC = b"DSICW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensor(out, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    out.append(struct.pack("<B", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(arr.tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def tensor(self):
        rank = self.u8()
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = self.take(4 * count)
        return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def serialize_layers(layers):
    """Serialize a sequence of layer objects to checkpoint bytes."""
    out = [MAGIC, struct.pack("<BH", VERSION, len(layers))]
    for layer in layers:
        out.append(struct.pack("<B", layer.kind))
        if layer.kind == KIND_CONV:
            out.append(struct.pack("<BBB", layer.stride, layer.kernel, 1 if layer.transposed else 0))
        for t in layer.tensors():
            _write_tensor(out, t.data)
    return b"".join(out)


def load_into_layers(data, layers):
    """Load checkpoint bytes into an existing layer sequence.

    The layer kinds, conv geometry, and every tensor shape must match the
    stored records exactly; mismatches raise :class:`CheckpointError` naming
    both sides.
    """
    r = _Reader(data)
    if r.take(5) != MAGIC:
        raise CheckpointError("bad checkpoint magic (expected DSICW)")
    version = r.u8()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = r.u16()
    if count != len(layers):
        raise CheckpointError(f"checkpoint has {count} layers, model expects {len(layers)}")
    for i, layer in enumerate(layers):
        kind = r.u8()
        if kind != layer.kind:
            raise CheckpointError(f"layer {i}: stored kind {kind} != model kind {layer.kind}")
        if kind == KIND_CONV:
            stride, kernel, transposed = r.u8(), r.u8(), r.u8()
            if (stride, kernel, bool(transposed)) != (layer.stride, layer.kernel, layer.transposed):
                raise CheckpointError(
                    f"layer {i}: stored conv geometry (stride={stride}, kernel={kernel}, "
                    f"transposed={bool(transposed)}) != model (stride={layer.stride}, "
                    f"kernel={layer.kernel}, transposed={layer.transposed})"
                )
        for t in layer.tensors():
            arr = r.tensor()
            if arr.shape != t.data.shape:
                raise CheckpointError(f"layer {i}: stored shape {arr.shape} != model shape {t.data.shape}")
            t.data = arr.astype(t.data.dtype)
    return layers


def read_structure(data):
    """Layer kinds, conv geometry, and tensor shapes without building a model."""
    r = _Reader(data)
    if r.take(5) != MAGIC:
        raise CheckpointError("bad checkpoint magic (expected DSICW)")
    version = r.u8()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    records = []
    tensors_per_kind = {KIND_CONV: 2, KIND_BATCHNORM: 4, KIND_FC: 2, KIND_DENSITY: 1}
    for _ in range(r.u16()):
        kind = r.u8()
        if kind not in tensors_per_kind:
            raise CheckpointError(f"unknown layer kind tag {kind}")
        rec = {"kind": kind}
        if kind == KIND_CONV:
            rec["stride"], rec["kernel"], rec["transposed"] = r.u8(), r.u8(), bool(r.u8())
        rec["shapes"] = [r.tensor().shape for _ in range(tensors_per_kind[kind])]
        records.append(rec)
    return records


def save(path, layers):
    data = serialize_layers(layers)
    with open(path, "wb") as fh:
        fh.write(data)


def load(path, layers):
    with open(path, "rb") as fh:
        data = fh.read()
    return load_into_layers(data, layers)
