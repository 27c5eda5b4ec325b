"""End-to-end image <-> blob pipeline shared by the CLI and the evaluator."""

from __future__ import annotations

import numpy as np

from . import container, quantization, rangecoder
from .bitplanes import from_bitplanes, to_bitplanes
from .container import CompressedBlob, SemanticPayload
from .networks import CodecModel, InputError, PRESETS, SemanticResult, classify

VARIANT_NAMES = {container.VARIANT_POST: "post", container.VARIANT_PRE: "pre"}
VARIANT_IDS = {v: k for k, v in VARIANT_NAMES.items()}


def preset_name_of(cfg) -> str:
    for name, candidate in PRESETS.items():
        if candidate == cfg:
            return name
    raise ValueError(f"configuration {cfg} is not one of the named presets {sorted(PRESETS)}; blobs only carry presets")


def pad_reflect(image, multiple):
    """Reflect-pad (3, H, W) up to the next multiple; returns (padded, orig_h, orig_w)."""
    _, h, w = image.shape
    th = -(-h // multiple) * multiple
    tw = -(-w // multiple) * multiple
    out = image
    while out.shape[1] < th or out.shape[2] < tw:
        ph = min(th - out.shape[1], out.shape[1] - 1)
        pw = min(tw - out.shape[2], out.shape[2] - 1)
        if ph == 0 and pw == 0:
            raise InputError(f"cannot reflect-pad a {h}x{w} image to {tw}x{th}")
        out = np.pad(out, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return out, h, w


def semantics_from_result(result: SemanticResult) -> SemanticPayload:
    ids, probs = zip(*result.top_k)
    quantized = [int(round(p * 255)) for p in probs]
    quantized = [min(255, max(0, q)) for q in quantized]
    for i in range(1, 5):  # keep the stored ranking non-increasing after rounding
        quantized[i] = min(quantized[i], quantized[i - 1])
    return SemanticPayload(class_id=result.class_id, top5_ids=ids, top5_probs=quantized)


def compress_array(image, model: CodecModel, variant="post") -> CompressedBlob:
    """Compress a float (3, H, W) image in [0, 1] into a container blob."""
    if variant not in VARIANT_IDS:
        raise ValueError(f"variant must be 'pre' or 'post', got {variant!r}")
    cfg = model.cfg
    preset_name = preset_name_of(cfg)
    padded, orig_h, orig_w = pad_reflect(np.asarray(image, dtype=np.float32), cfg.stride_product)
    feats = model.extractor(padded).data
    q = quantization.quantize(feats, cfg.bits)
    payload, crc = rangecoder.encode_payload(to_bitplanes(q))
    semantics = None
    if variant == "pre":
        result = classify(feats, model)
        if len(result.top_k) < 5:  # K < 5: pad the fixed-width slots
            pad = [(0, 0.0)] * (5 - len(result.top_k))
            result = SemanticResult(result.class_id, result.probabilities, result.top_k + pad)
        semantics = semantics_from_result(result)
    return CompressedBlob(
        variant=VARIANT_IDS[variant],
        width=padded.shape[2],
        height=padded.shape[1],
        orig_width=orig_w,
        orig_height=orig_h,
        preset_id=container.PRESET_IDS[preset_name],
        bits=cfg.bits,
        num_classes=model.num_classes,
        entropy_payload=payload,
        code_checksum=crc,
        semantics=semantics,
    )


def _check_blob_against_model(blob: CompressedBlob, model: CodecModel):
    expected = container.PRESET_IDS[preset_name_of(model.cfg)]
    if blob.preset_id != expected:
        raise ValueError(
            f"blob preset {blob.preset_name!r} does not match the checkpoint's preset "
            f"{container.PRESET_NAMES[expected]!r}"
        )
    if blob.bits != model.cfg.bits:
        raise ValueError(f"blob B={blob.bits} does not match the model's B={model.cfg.bits}")
    if blob.num_classes != model.num_classes:
        raise ValueError(f"blob K={blob.num_classes} does not match the model's K={model.num_classes}")


def decoded_features(blob: CompressedBlob) -> np.ndarray:
    """Entropy-decode and dequantize the blob's feature payload."""
    cfg = PRESETS[blob.preset_name]
    shape = cfg.feature_shape(blob.height, blob.width)
    bp = rangecoder.decode(container.entropy_block_bytes(blob), shape, blob.bits)
    return quantization.dequantize(from_bitplanes(bp))


def decompress_blob(blob: CompressedBlob, model: CodecModel, with_semantics=False):
    """Reconstruct the image (cropped to original dims); optionally classify.

    Returns ``(image, SemanticResult | SemanticPayload | None)``: embedded
    payloads are returned as stored for the pre variant, while the post
    variant runs the head on the decoded features when asked.
    """
    _check_blob_against_model(blob, model)
    feats = decoded_features(blob)
    image = model.reconstructor(feats).data
    image = image[:, : blob.orig_height, : blob.orig_width]
    semantics = None
    if with_semantics:
        if blob.variant == container.VARIANT_PRE:
            semantics = blob.semantics
        else:
            semantics = classify(feats, model)
    return image, semantics
