"""The three task networks: feature extractor, reconstructor, semantic head.

Topology is fully determined by a :class:`RateConfig` and the class count K,
so checkpoints carry no structural metadata beyond per-layer geometry.

The extractor runs four stages of strided convolution + batch norm +
leaky-rectifier (slope 0.2), kernels 7/5/3/3, with an additive skip from the
previous stage wherever a stage keeps both resolution and channel count. The
reconstructor mirrors it with transposed convolutions; each stage sums the
learned upsampling path with a nearest-neighbor interpolation of its input
(where channels allow) before the nonlinearity, and the final stage is linear
with its output clamped to the valid image range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import functional as F
from .nn.layers import BatchNorm2d, Conv2d, Linear
from .nn.tensor import Tensor, ShapeError, as_tensor, clamp, leaky_relu, softmax

STAGE_KERNELS = (7, 5, 3, 3)
LEAK = 0.2


class InputError(ValueError):
    """The input image cannot be coded under the given configuration."""


@dataclass(frozen=True)
class RateConfig:
    """Stride/channel/bit-depth configuration of one operating point."""

    strides: tuple = (4, 2, 2, 1)
    channels: tuple = (128, 128, 128, 128)
    bits: int = 6

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.strides) != 4 or len(self.channels) != 4:
            raise ValueError(f"expected 4 stage strides and channels, got {self.strides} / {self.channels}")
        if any(s not in (1, 2, 4) for s in self.strides):
            raise ValueError(f"stage strides must be in {{1, 2, 4}}, got {self.strides}")
        if any(c <= 0 for c in self.channels):
            raise ValueError(f"channel counts must be positive, got {self.channels}")
        if self.bits < 2:
            raise ValueError(f"quantizer bits must be >= 2, got {self.bits}")

    @property
    def stride_product(self):
        return int(np.prod(self.strides))

    @property
    def feature_channels(self):
        return self.channels[-1]

    def feature_shape(self, height, width):
        if height % self.stride_product or width % self.stride_product:
            raise InputError(
                f"image dims {width}x{height} not divisible by the stride product "
                f"{self.stride_product}; pad the image first"
            )
        return (self.feature_channels, height // self.stride_product, width // self.stride_product)


PRESETS = {
    "lo": RateConfig(strides=(4, 2, 2, 2)),
    "mid": RateConfig(strides=(4, 2, 2, 1)),
    "hi": RateConfig(strides=(4, 2, 1, 1)),
}


def preset(name) -> RateConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class SemanticResult:
    """Classifier output: argmax id, full distribution, ranked top-k."""

    class_id: int
    probabilities: np.ndarray
    top_k: list  # (class id, probability), probability-descending

    @classmethod
    def from_probs(cls, probs, k=5):
        probs = np.asarray(probs, dtype=np.float64)
        order = np.argsort(-probs, kind="stable")[:k]
        return cls(
            class_id=int(np.argmax(probs)),
            probabilities=probs,
            top_k=[(int(i), float(probs[i])) for i in order],
        )


class FeatureExtractor:
    def __init__(self, cfg: RateConfig, rng):
        self.cfg = cfg
        in_ch = 3
        self.convs, self.norms = [], []
        for kernel, stride, out_ch in zip(STAGE_KERNELS, cfg.strides, cfg.channels):
            self.convs.append(Conv2d(in_ch, out_ch, kernel, stride, rng))
            self.norms.append(BatchNorm2d(out_ch))
            in_ch = out_ch

    def __call__(self, x, train=False):
        a = as_tensor(x)
        squeeze = a.data.ndim == 3
        if squeeze:
            a = a.reshape((1,) + a.data.shape)
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out = norm(conv(a), train=train)
            # residual feed of the previous stage where the shape is preserved
            if self.cfg.strides[i] == 1 and conv.weight.shape[0] == conv.weight.shape[1]:
                out = out + a
            a = leaky_relu(out, LEAK)
        return a.reshape(a.data.shape[1:]) if squeeze else a

    def layers(self):
        out = []
        for conv, norm in zip(self.convs, self.norms):
            out.extend([conv, norm])
        return out


class Reconstructor:
    def __init__(self, cfg: RateConfig, rng):
        self.cfg = cfg
        strides = cfg.strides[::-1]
        kernels = STAGE_KERNELS[::-1]
        in_chs = cfg.channels[::-1]
        out_chs = cfg.channels[-2::-1] + (3,)
        self.deconvs = [
            Conv2d(ic, oc, k, s, rng, transposed=True)
            for ic, oc, k, s in zip(in_chs, out_chs, kernels, strides)
        ]
        # start the clamped output stage at mid-gray so gradients flow
        self.deconvs[-1].bias.data[:] = 0.5
        self.strides = strides

    def __call__(self, features, train=False):
        a = as_tensor(features)
        squeeze = a.data.ndim == 3
        if squeeze:
            a = a.reshape((1,) + a.data.shape)
        last = len(self.deconvs) - 1
        for i, deconv in enumerate(self.deconvs):
            out = deconv(a)
            if deconv.weight.shape[0] == deconv.weight.shape[1]:
                out = out + F.upsample_nearest(a, self.strides[i])
            a = leaky_relu(out, LEAK) if i != last else clamp(out, 0.0, 1.0)
        return a.reshape(a.data.shape[1:]) if squeeze else a

    def layers(self):
        return list(self.deconvs)


class SemanticHead:
    """Two strided conv stages, global average pooling, two FC layers."""

    def __init__(self, feature_channels, num_classes, rng):
        self.num_classes = num_classes
        self.conv1 = Conv2d(feature_channels, 64, 3, 2, rng)
        self.norm1 = BatchNorm2d(64)
        self.conv2 = Conv2d(64, 32, 3, 2, rng)
        self.norm2 = BatchNorm2d(32)
        self.fc1 = Linear(32, 64, rng)
        self.fc2 = Linear(64, num_classes, rng)

    def logits(self, features, train=False):
        a = as_tensor(features)
        if a.data.ndim == 3:
            a = a.reshape((1,) + a.data.shape)
        a = leaky_relu(self.norm1(self.conv1(a), train=train), LEAK)
        a = leaky_relu(self.norm2(self.conv2(a), train=train), LEAK)
        a = F.global_avg_pool(a)
        a = leaky_relu(self.fc1(a), LEAK)
        return self.fc2(a)

    def __call__(self, features, train=False):
        return softmax(self.logits(features, train=train))

    def layers(self):
        return [self.conv1, self.norm1, self.conv2, self.norm2, self.fc1, self.fc2]


class CodecModel:
    """Bundle of the extractor f, reconstructor g, and semantic head h."""

    def __init__(self, cfg: RateConfig, num_classes, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.num_classes = num_classes
        self.extractor = FeatureExtractor(cfg, rng)
        self.reconstructor = Reconstructor(cfg, rng)
        self.head = SemanticHead(cfg.feature_channels, num_classes, rng)

    def layers(self):
        return self.extractor.layers() + self.reconstructor.layers() + self.head.layers()

    def params(self):
        out = []
        for layer in self.layers():
            out.extend(layer.params())
        return out


def extract_features(x, model: CodecModel, train=False):
    """Run the feature extractor; validates channel count and divisibility."""
    x = as_tensor(x)
    shape = x.data.shape
    if shape[-3] != 3:
        raise InputError(f"expected 3 input channels, got shape {shape}")
    model.cfg.feature_shape(shape[-2], shape[-1])
    return model.extractor(x, train=train)


def reconstruct(features, model: CodecModel, train=False):
    """Run the reconstructor on (de)quantized features."""
    features = as_tensor(features)
    if features.data.shape[-3] != model.cfg.feature_channels:
        raise ShapeError(
            f"feature shape {features.data.shape} does not match configured "
            f"channel count {model.cfg.feature_channels}"
        )
    return model.reconstructor(features, train=train)


def classify(features, model: CodecModel) -> SemanticResult:
    """Inference-mode classification of one feature map."""
    features = as_tensor(features)
    if features.data.shape[-3] != model.cfg.feature_channels:
        raise ShapeError(
            f"feature shape {features.data.shape} does not match configured "
            f"channel count {model.cfg.feature_channels}"
        )
    probs = model.head(features, train=False).data
    return SemanticResult.from_probs(probs[0] if probs.ndim == 2 else probs)
