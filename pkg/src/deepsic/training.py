"""Joint rate-distortion-semantics training.

One optimization step runs the extractor once and branches three ways:

* distortion path: straight-through quantized features -> reconstructor -> MSE
* rate path: noise-quantized features -> density model -> code-length estimate
* semantics path: the head sees clamped float features in the encoder-side
  ("pre") variant, or the straight-through dequantized features in the
  decoder-side ("post") variant

The total objective is ``R + lambda1 * D + lambda2 * L_sem``. The learning
rate decays by 5x at 50% and again at 80% of the step budget.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quantization
from .dataio import LabeledCorpus, sample_patches, scan_corpus, split
from .density import DensityModel, NumericalError, rate_term
from .networks import CodecModel, RateConfig, preset
from .nn.checkpoint import load_into_layers, serialize_layers
from .nn.optim import Adam
from .nn.tensor import Tensor, clamp, cross_entropy_logits, square, tmean

VARIANTS = ("pre", "post")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good snapshot."""

    def __init__(self, step, history, last_good_checkpoint):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint retained")
        self.step = step
        self.history = history
        self.last_good_checkpoint = last_good_checkpoint


@dataclass
class LossBreakdown:
    rate_bits: float  # R, estimated bits per image
    distortion: float  # D, mean squared error
    semantic: float  # L_sem, cross-entropy in nats
    lambda1: float
    lambda2: float
    total: float

    CSV_HEADER = "step,R,D,Lsem,L"

    def csv_row(self, step):
        return f"{step},{self.rate_bits:.6g},{self.distortion:.6g},{self.semantic:.6g},{self.total:.6g}"


def distortion(x, x_hat):
    """Mean squared error between two image tensors of identical shape."""
    shape_a = x.data.shape if isinstance(x, Tensor) else np.asarray(x).shape
    shape_b = x_hat.data.shape if isinstance(x_hat, Tensor) else np.asarray(x_hat).shape
    if shape_a != shape_b:
        raise ValueError(f"distortion operands differ in shape: {shape_a} vs {shape_b}")
    if isinstance(x, Tensor) or isinstance(x_hat, Tensor):
        diff = (x if isinstance(x, Tensor) else Tensor(x)) - (x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat))
        return tmean(square(diff))
    d = np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)
    return float(np.mean(d * d))


def semantic_loss(logits, labels):
    """Cross-entropy of the classification logits, in nats (stable fused form)."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.data.ndim == 1:
        logits = logits.reshape((1, -1))
        labels = np.asarray([labels])
    return cross_entropy_logits(logits, np.asarray(labels))


def total_loss(rate_bits, dist, sem, lambda1, lambda2) -> LossBreakdown:
    """Combine the three scalar terms into the weighted training objective."""
    r = float(rate_bits.data) if isinstance(rate_bits, Tensor) else float(rate_bits)
    d = float(dist.data) if isinstance(dist, Tensor) else float(dist)
    s = float(sem.data) if isinstance(sem, Tensor) else float(sem)
    return LossBreakdown(
        rate_bits=r,
        distortion=d,
        semantic=s,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        total=r + float(lambda1) * d + float(lambda2) * s,
    )


@dataclass
class TrainConfig:
    corpus: object  # path or LabeledCorpus
    rate_cfg: RateConfig = field(default_factory=lambda: preset("mid"))
    variant: str = "post"
    lambda1: float = 100000.0
    lambda2: float = 10.0
    lr: float = 0.003
    batch: int = 32
    steps: int = 20000
    seed: int = 0
    num_classes: int | None = None
    patch_size: int = 128
    augment: str = "flip"
    bypass_quantizer: bool = False
    snapshot_every: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch < 2:
            raise ConfigError("batch size must be >= 2 (batch statistics need it)")
        if self.steps < 1:
            raise ConfigError("steps must be positive")


_CONFIG_KEYS = {
    "preset": str,
    "variant": str,
    "lambda1": float,
    "lambda2": float,
    "lr": float,
    "batch": int,
    "steps": int,
    "seed": int,
    "corpus": str,
    "K": int,
}


def parse_config_file(path) -> TrainConfig:
    """Read the key=value training configuration format."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} (known: {sorted(_CONFIG_KEYS)})")
        try:
            values[key] = _CONFIG_KEYS[key](val)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {val!r} for {key}") from None
    if "corpus" not in values:
        raise ConfigError(f"{path}: missing required key 'corpus'")
    return TrainConfig(
        corpus=values["corpus"],
        rate_cfg=preset(values.get("preset", "mid")),
        variant=values.get("variant", "post"),
        lambda1=values.get("lambda1", 100000.0),
        lambda2=values.get("lambda2", 10.0),
        lr=values.get("lr", 0.003),
        batch=values.get("batch", 32),
        steps=values.get("steps", 20000),
        seed=values.get("seed", 0),
        num_classes=values.get("K"),
    )


@dataclass
class TrainResult:
    model: CodecModel
    density: DensityModel
    history: list
    corpus: LabeledCorpus

    def history_csv(self):
        out = io.StringIO()
        out.write(LossBreakdown.CSV_HEADER + "\n")
        for step, entry in enumerate(self.history):
            out.write(entry.csv_row(step) + "\n")
        return out.getvalue()


def model_layers(model: CodecModel, density: DensityModel):
    return model.layers() + [density]


def save_checkpoint(path, model, density):
    Path(path).write_bytes(serialize_layers(model_layers(model, density)))


def load_checkpoint(path_or_bytes, cfg: RateConfig, num_classes) -> tuple:
    """Rebuild (model, density) for a configuration and load stored weights."""
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    model = CodecModel(cfg, num_classes, seed=0)
    density = DensityModel(cfg.feature_channels, cfg.bits)
    load_into_layers(data, model_layers(model, density))
    return model, density


def _resolve_corpus(config) -> LabeledCorpus:
    corpus = config.corpus
    if not isinstance(corpus, LabeledCorpus):
        corpus = scan_corpus(corpus, seed=config.seed)
    if not corpus.split_assignments:
        corpus = split(corpus, (0.8, 0.1, 0.1), seed=config.seed)
    if config.num_classes is not None and corpus.num_classes != config.num_classes:
        raise ConfigError(
            f"configured K={config.num_classes} but corpus has {corpus.num_classes} classes"
        )
    return corpus


def train(config: TrainConfig, progress=None) -> TrainResult:
    """Run the joint training loop; deterministic for a fixed config."""
    corpus = _resolve_corpus(config)
    cfg = config.rate_cfg
    model = CodecModel(cfg, corpus.num_classes, seed=config.seed)
    density = DensityModel(cfg.feature_channels, cfg.bits)
    params = model.params() + density.params()
    opt = Adam(params, lr=config.lr)
    cache = {}
    history = []
    snapshot = serialize_layers(model_layers(model, density))
    decay_points = {int(config.steps * 0.5), int(config.steps * 0.8)}
    for step in range(config.steps):
        if step in decay_points and step > 0:
            opt.lr = opt.lr / 5.0
        batch, labels = sample_patches(
            corpus,
            config.patch_size,
            config.batch,
            seed=[config.seed, step],
            augment=config.augment,
            subset="train",
            cache=cache,
        )
        x = Tensor(batch)
        try:
            feats = clamp(model.extractor(x, train=True), -quantization.CLAMP, quantization.CLAMP)
            if config.bypass_quantizer:
                decoded = feats
                noisy = feats
            else:
                decoded = quantization.quantize_ste(feats, cfg.bits)
                noisy = quantization.quantize_noise(feats, cfg.bits, np.random.default_rng([config.seed, step, 1]))
            x_hat = model.reconstructor(decoded, train=True)
            head_input = feats if config.variant == "pre" else decoded
            logits = model.head.logits(head_input, train=True)

            r = rate_term(noisy, density)
            d = distortion(x, x_hat)
            s = semantic_loss(logits, labels)
        except (quantization.QuantizationError, NumericalError) as exc:
            raise TrainingDiverged(step, history, snapshot) from exc
        loss = r + config.lambda1 * d + config.lambda2 * s
        entry = total_loss(r, d, s, config.lambda1, config.lambda2)
        if not np.isfinite(entry.total):
            raise TrainingDiverged(step, history, snapshot)
        history.append(entry)

        loss.backward()
        opt.step()
        opt.zero_grad()
        if (step + 1) % config.snapshot_every == 0:
            snapshot = serialize_layers(model_layers(model, density))
        if progress is not None:
            progress(step, entry)
    return TrainResult(model=model, density=density, history=history, corpus=corpus)
