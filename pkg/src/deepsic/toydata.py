"""Synthetic labeled imagery for desk-scale training and benchmarking.

``generate_toy_corpus`` writes a directory-per-class corpus of procedural
textures. Classes are defined by structure (orientation, periodicity,
radial/blob layout, noise bandwidth) with per-image variation in frequency,
phase, and palette, and they deliberately span smooth-to-noisy content so
compressed sizes vary widely across the corpus.

``generate_bench_images`` writes larger composite scenes (768x512 by default)
used by the end-to-end benchmark when no photographic test set is mounted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import save_image

CLASS_NAMES = (
    "waves_h",
    "waves_v",
    "waves_diag",
    "rings",
    "blobs",
    "gradient",
    "checker",
    "boxes",
    "clouds",
    "speckle",
)


def _grid(size):
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    return yy, xx


# anchor hue per class (jittered per image); classes also differ in structure
_CLASS_BASE_COLORS = np.array(
    [
        (0.85, 0.25, 0.25),
        (0.25, 0.75, 0.30),
        (0.25, 0.35, 0.85),
        (0.85, 0.75, 0.20),
        (0.75, 0.30, 0.80),
        (0.25, 0.80, 0.80),
        (0.90, 0.55, 0.25),
        (0.55, 0.45, 0.85),
        (0.45, 0.65, 0.45),
        (0.65, 0.55, 0.45),
    ],
    dtype=np.float32,
)


def _palette(rng, class_id=None):
    if class_id is None:
        c1 = rng.uniform(0.2, 1.0, 3)
    else:
        base = _CLASS_BASE_COLORS[class_id % len(_CLASS_BASE_COLORS)]
        c1 = np.clip(base + rng.uniform(-0.12, 0.12, 3), 0.0, 1.0)
    c0 = np.clip(c1 * rng.uniform(0.15, 0.4), 0.0, 1.0)
    return c0.astype(np.float32), c1.astype(np.float32)


def _lowpass(noise, passes):
    out = noise
    for _ in range(passes):
        out = (
            out
            + np.roll(out, 1, 0)
            + np.roll(out, -1, 0)
            + np.roll(out, 1, 1)
            + np.roll(out, -1, 1)
        ) / 5.0
    return out


def _pattern(class_id, size, rng):
    yy, xx = _grid(size)
    if class_id == 0:
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1.0, 2.5) * yy + rng.uniform(0, 2 * np.pi))
    elif class_id == 1:
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1.0, 2.5) * xx + rng.uniform(0, 2 * np.pi))
    elif class_id == 2:
        ang = rng.uniform(np.pi / 6, np.pi / 3)
        u = xx * np.cos(ang) + yy * np.sin(ang)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1.5, 3.0) * u + rng.uniform(0, 2 * np.pi))
    elif class_id == 3:
        cy, cx = rng.uniform(0.3, 0.7, 2)
        r = np.hypot(yy - cy, xx - cx)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 3.5) * r + rng.uniform(0, 2 * np.pi))
    elif class_id == 4:
        t = np.zeros_like(yy)
        for _ in range(rng.integers(3, 7)):
            cy, cx = rng.uniform(0.1, 0.9, 2)
            s = rng.uniform(0.05, 0.15)
            t += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        t = np.clip(t, 0, 1)
    elif class_id == 5:
        ang = rng.uniform(0, 2 * np.pi)
        u = xx * np.cos(ang) + yy * np.sin(ang)
        u = (u - u.min()) / (u.max() - u.min())
        t = u**rng.uniform(0.7, 1.5)
    elif class_id == 6:
        f = rng.uniform(2.0, 3.5)
        t = 0.5 + 0.5 * np.sign(
            np.sin(2 * np.pi * f * xx + rng.uniform(0, np.pi))
            * np.sin(2 * np.pi * f * yy + rng.uniform(0, np.pi))
        )
        t = _lowpass(t, 4)
    elif class_id == 7:
        cy, cx = rng.uniform(0.35, 0.65, 2)
        r = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 3.5) * r + rng.uniform(0, 2 * np.pi))
    elif class_id == 8:
        t = _lowpass(rng.random((size, size)), 10)
        t = (t - t.min()) / (t.max() - t.min() + 1e-9)
    else:
        t = _lowpass(rng.random((size, size)), 3)
        t = (t - t.min()) / (t.max() - t.min() + 1e-9)
        t = 0.35 + 0.3 * t  # bounded-contrast texture: noisy but reconstructable
    return t.astype(np.float32)


def make_class_image(class_id, size, rng):
    t = _pattern(class_id, size, rng)
    c0, c1 = _palette(rng, class_id)
    img = c0[:, None, None] + t[None] * (c1 - c0)[:, None, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_toy_corpus(root, per_class=200, size=128, seed=0, class_names=CLASS_NAMES):
    """Write a directory-per-class PNG corpus; returns the root path."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for class_id, name in enumerate(class_names):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            save_image(d / f"{name}_{i:04d}.png", make_class_image(class_id, size, rng))
    return root


def make_bench_image(size_hw, rng):
    """One composite scene: gradient base, geometric shapes, textured band."""
    h, w = size_hw
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    c0, c1 = _palette(rng)
    ang = rng.uniform(0, 2 * np.pi)
    base = (xx * np.cos(ang) + yy * np.sin(ang))
    base = (base - base.min()) / (base.max() - base.min())
    img = c0[:, None, None] + base[None] * (c1 - c0)[:, None, None]
    for _ in range(rng.integers(4, 9)):
        color = rng.uniform(0, 1, 3).astype(np.float32)
        cy, cx = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
        if rng.integers(0, 2):
            r = rng.uniform(0.04, 0.18)
            mask = (yy - cy) ** 2 + ((xx - cx) * w / h) ** 2 < r * r
        else:
            ry, rx = rng.uniform(0.04, 0.2, 2)
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        img[:, mask] = 0.3 * img[:, mask] + 0.7 * color[:, None]
    band0 = int(rng.uniform(0.1, 0.5) * h)
    band1 = band0 + int(rng.uniform(0.15, 0.35) * h)
    tex = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(8, 20) * xx[band0:band1] + 6 * yy[band0:band1])
    img[:, band0:band1] = 0.6 * img[:, band0:band1] + 0.4 * tex[None].astype(np.float32)
    img += rng.normal(0, 0.01, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_bench_images(directory, count=24, size_hw=(512, 768), seed=7):
    """Write ``count`` composite PNG scenes; returns the list of paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = directory / f"bench_{i + 1:02d}.png"
        save_image(p, make_bench_image(size_hw, rng))
        paths.append(p)
    return paths
