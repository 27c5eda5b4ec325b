"""Rate and quality measurement: PSNR, multi-scale SSIM, bits per pixel.

MS-SSIM follows the standard 5-scale construction: an 11x11 Gaussian window
(sigma 1.5), K1=0.01/K2=0.03, per-scale weights
(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), contrast-structure terms clamped
at zero, and 2x average-pool downsampling between scales. Color images are
reduced to luma (BT.601) first. Images too small for five scales fall back
to fewer scales with renormalized weights.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import codec, container
from .dataio import load_image

PSNR_CAP_DB = 100.0

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03
_LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    pass


def psnr(x, x_hat, peak=1.0):
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"psnr operands differ in shape: {x.shape} vs {x_hat.shape}")
    if peak <= 0:
        raise MetricError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(_LUMA, img, axes=1)
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 2:
        return img
    raise MetricError(f"expected (3, H, W), (1, H, W) or (H, W) image, got shape {img.shape}")


def _gaussian_window(size, sigma):
    offsets = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img, kernel):
    half = len(kernel) // 2
    out = correlate1d(img, kernel, axis=0)
    out = correlate1d(out, kernel, axis=1)
    return out[half:-half, half:-half]


def _ssim_means(a, b):
    k = _gaussian_window(_WINDOW_SIZE, _WINDOW_SIGMA)
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    luminance = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return float(np.mean(luminance * cs)), float(np.mean(cs))


def _downsample2(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(x, x_hat, scales=len(MSSSIM_WEIGHTS)):
    """Multi-scale structural similarity on the luma plane, clamped to [0, 1]."""
    a, b = _luma(x), _luma(x_hat)
    if a.shape != b.shape:
        raise MetricError(f"ms_ssim operands differ in shape: {a.shape} vs {b.shape}")
    min_dim = min(a.shape)
    if min_dim < _WINDOW_SIZE:
        raise MetricError(f"image min dim {min_dim} is below the {_WINDOW_SIZE}px window; too small for SSIM")
    usable = min(scales, int(np.log2(min_dim // _WINDOW_SIZE)) + 1)
    weights = np.asarray(MSSSIM_WEIGHTS[:usable])
    weights = weights / weights.sum()
    score = 1.0
    for level in range(usable):
        ssim, cs = _ssim_means(a, b)
        if level < usable - 1:
            score *= max(cs, 0.0) ** weights[level]
            a, b = _downsample2(a), _downsample2(b)
        else:
            score *= max(ssim, 0.0) ** weights[level]
    return float(np.clip(score, 0.0, 1.0))


def bpp(blob: container.CompressedBlob, width=None, height=None) -> float:
    """Bits per pixel of the serialized blob (header and semantics included)."""
    width = blob.orig_width if width is None else width
    height = blob.orig_height if height is None else height
    if width <= 0 or height <= 0:
        raise MetricError(f"pixel dims must be positive, got {width}x{height}")
    return len(container.serialize(blob)) * 8.0 / (width * height)


@dataclass
class RDPoint:
    """One operating point averaged over a corpus."""

    preset: str
    variant: str
    bpp: float
    psnr_db: float
    ms_ssim: float
    top1: float | None = None
    top5: float | None = None

    CSV_HEADER = "preset,variant,bpp,psnr,msssim,top1,top5"

    def csv_row(self):
        t1 = "" if self.top1 is None else f"{self.top1:.4f}"
        t5 = "" if self.top5 is None else f"{self.top5:.4f}"
        return f"{self.preset},{self.variant},{self.bpp:.6f},{self.psnr_db:.4f},{self.ms_ssim:.6f},{t1},{t5}"


def rd_csv(points):
    out = io.StringIO()
    out.write(RDPoint.CSV_HEADER + "\n")
    for p in points:
        out.write(p.csv_row() + "\n")
    return out.getvalue()


def evaluate_corpus(samples, model, variant="post", max_images=None, workers=1) -> RDPoint:
    """Average rate/quality/accuracy over labeled ``(path_or_array, label)`` samples.

    Runs the full codec per image: compress to a blob, measure its bpp,
    decode, and score the reconstruction; classification accuracy comes from
    the embedded label (pre) or the decode-side head (post).
    """
    samples = list(samples)
    if max_images is not None:
        samples = samples[:max_images]
    if not samples:
        raise MetricError("cannot evaluate an empty corpus")

    def one(sample):
        source, label = sample
        image = source if isinstance(source, np.ndarray) else load_image(source)
        blob = codec.compress_array(image, model, variant=variant)
        recon, semantics = codec.decompress_blob(blob, model, with_semantics=True)
        if variant == "pre":
            ranked = list(semantics.top5_ids)
        else:
            ranked = [i for i, _ in semantics.top_k]
        return (
            bpp(blob),
            psnr(image, recon),
            ms_ssim(image, recon),
            1.0 if ranked and ranked[0] == label else 0.0,
            1.0 if label in ranked[:5] else 0.0,
        )

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, samples))
    else:
        rows = [one(s) for s in samples]
    arr = np.asarray(rows, dtype=np.float64)
    return RDPoint(
        preset=codec.preset_name_of(model.cfg),
        variant=variant,
        bpp=float(arr[:, 0].mean()),
        psnr_db=float(arr[:, 1].mean()),
        ms_ssim=float(arr[:, 2].mean()),
        top1=float(arr[:, 3].mean()),
        top5=float(arr[:, 4].mean()),
    )
