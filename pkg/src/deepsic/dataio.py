"""Image I/O, labeled-corpus ingestion, deterministic splits, patch sampling.

Corpus layout on disk is one directory per class (the directory name is the
class name); images are PNG or binary PPM. All randomness flows from explicit
seeds; a (directory, seed) pair always yields the same split and batches.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".ppm")


class UnsupportedFormatError(ValueError):
    pass


class CorruptFileError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


def _parse_ppm(data, path):
    # P6 with optional '#' comments; maxval 255 or 65535
    pos = 0
    fields = []
    if not data.startswith(b"P6"):
        raise UnsupportedFormatError(f"{path}: not a binary PPM (missing P6 signature)")
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFileError(f"{path}: truncated PPM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise CorruptFileError(f"{path}: malformed PPM header token {data[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0 or maxval not in (255, 65535):
        raise CorruptFileError(f"{path}: bad PPM geometry {width}x{height} maxval={maxval}")
    itemsize = 1 if maxval == 255 else 2
    need = width * height * 3 * itemsize
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise CorruptFileError(f"{path}: PPM raster truncated ({len(raster)} of {need} bytes)")
    if maxval == 255:
        arr = np.frombuffer(raster, dtype=np.uint8)
    else:
        arr = (np.frombuffer(raster, dtype=">u2") >> 8).astype(np.uint8)  # reduce to 8-bit
    return arr.reshape(height, width, 3)


def load_image(path):
    """Load a PNG or binary PPM as a float32 (3, H, W) tensor in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P6":
        hwc = _parse_ppm(data, path)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(io.BytesIO(data)) as img:
                if img.mode in ("I;16", "I;16B", "I"):
                    arr = np.asarray(img, dtype=np.uint32)
                    hwc = np.stack([(arr >> 8).astype(np.uint8)] * 3, axis=-1)
                else:
                    hwc = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise CorruptFileError(f"{path}: undecodable PNG ({exc})") from exc
    else:
        raise UnsupportedFormatError(f"{path}: unsupported image format (need PNG or binary PPM)")
    return (hwc.astype(np.float32) / 255.0).transpose(2, 0, 1)


def save_image(path, tensor):
    """Write a float (3, H, W) tensor in [0, 1] as PNG or PPM by extension."""
    path = Path(path)
    arr = np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) tensor, got shape {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if path.suffix.lower() == ".ppm":
        header = f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
        path.write_bytes(header + u8.tobytes())
    elif path.suffix.lower() == ".png":
        Image.fromarray(u8, mode="RGB").save(path, format="PNG")
    else:
        raise UnsupportedFormatError(f"{path}: unsupported output format (use .png or .ppm)")


@dataclass
class LabeledCorpus:
    root: Path
    samples: list  # (path, class_id)
    class_names: list
    seed: int = 0
    split_assignments: dict = field(default_factory=dict)  # index -> "train"|"val"|"test"

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.samples)

    def subset(self, split_name):
        """Sample list of one split; the whole corpus when splits are unset."""
        if not self.split_assignments:
            return list(self.samples)
        return [s for i, s in enumerate(self.samples) if self.split_assignments[i] == split_name]

    def write_labels(self, path=None):
        path = Path(path) if path else self.root / "labels.txt"
        path.write_text("".join(f"{i},{name}\n" for i, name in enumerate(self.class_names)))
        return path


def scan_corpus(root, seed=0) -> LabeledCorpus:
    """Index a directory-per-class corpus; ordering is sorted and stable."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    names, samples = [], []
    for class_id, d in enumerate(class_dirs):
        names.append(d.name)
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        samples.extend((p, class_id) for p in files)
    if not samples:
        raise EmptyCorpusError(f"no images found under {root} (expected root/<class>/*.png|*.ppm)")
    return LabeledCorpus(root=root, samples=samples, class_names=names, seed=seed)


def split(corpus: LabeledCorpus, fractions=(0.8, 0.1, 0.1), seed=0) -> LabeledCorpus:
    """Assign train/val/test per class, stratified and seed-deterministic."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    names = ("train", "val", "test")
    rng = np.random.default_rng(seed)
    assignments = {}
    for class_id in range(corpus.num_classes):
        idx = [i for i, (_, c) in enumerate(corpus.samples) if c == class_id]
        if len(idx) < len(fractions):
            warnings.warn(
                f"class {corpus.class_names[class_id]!r} has only {len(idx)} samples for "
                f"{len(fractions)} splits; some splits will be empty",
                stacklevel=2,
            )
        order = rng.permutation(len(idx))
        counts = [int(f * len(idx)) for f in fractions]
        # hand leftovers to the splits with the largest remainders
        leftovers = len(idx) - sum(counts)
        remainders = sorted(
            range(len(fractions)), key=lambda k: (fractions[k] * len(idx)) % 1.0, reverse=True
        )
        for k in range(leftovers):
            counts[remainders[k % len(fractions)]] += 1
        pos = 0
        for name, count in zip(names, counts):
            for j in order[pos : pos + count]:
                assignments[idx[j]] = name
            pos += count
    return LabeledCorpus(
        root=corpus.root,
        samples=corpus.samples,
        class_names=corpus.class_names,
        seed=seed,
        split_assignments=assignments,
    )


def _nearest_upscale(img, min_h, min_w):
    c, h, w = img.shape
    fy = -(-min_h // h)
    fx = -(-min_w // w)
    f = max(fy, fx)
    return np.repeat(np.repeat(img, f, axis=1), f, axis=2) if f > 1 else img


def sample_patches(corpus, size, count, seed, augment="flip", subset=None, cache=None):
    """Draw ``count`` labeled square patches of ``size`` pixels.

    Smaller source images are first upscaled by nearest neighbor; ``augment``
    is "flip" (random horizontal mirror) or "none". Returns
    ``(batch (count, 3, size, size) float32, labels (count,) int64)``.
    """
    samples = corpus.subset(subset) if isinstance(corpus, LabeledCorpus) else list(corpus)
    if subset is not None and not isinstance(corpus, LabeledCorpus):
        raise ValueError("subset selection requires a LabeledCorpus")
    if not samples:
        raise EmptyCorpusError("cannot sample patches from an empty corpus")
    if augment not in ("flip", "none"):
        raise ValueError(f"unknown augmentation {augment!r}")
    rng = np.random.default_rng(seed)
    batch = np.empty((count, 3, size, size), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    picks = rng.integers(0, len(samples), size=count)
    for slot, pick in enumerate(picks):
        path, class_id = samples[pick]
        if cache is not None and path in cache:
            img = cache[path]
        else:
            img = load_image(path)
            if cache is not None:
                cache[path] = img
        img = _nearest_upscale(img, size, size)
        _, h, w = img.shape
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        patch = img[:, top : top + size, left : left + size]
        if augment == "flip" and rng.integers(0, 2):
            patch = patch[:, :, ::-1]
        batch[slot] = patch
        labels[slot] = class_id
    return batch, labels
