"""Parameterized layers used by the codec networks.

Each layer owns its parameter tensors and knows how to run its forward pass
in train or inference mode. Layers are deliberately thin; topology lives in
:mod:`deepsic.networks`.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor

KIND_CONV = 1
KIND_BATCHNORM = 2
KIND_FC = 3
KIND_DENSITY = 4


class Conv2d:
    kind = KIND_CONV

    def __init__(self, in_channels, out_channels, kernel, stride, rng, transposed=False):
        self.stride = int(stride)
        self.kernel = int(kernel)
        self.transposed = transposed
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = Tensor(rng.normal(0.0, std, (out_channels, in_channels, kernel, kernel)).astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)

    def __call__(self, x, train=False):
        if self.transposed:
            return F.conv_transpose2d(x, self.weight, self.bias, self.stride)
        return F.conv2d(x, self.weight, self.bias, self.stride)

    def params(self):
        return [self.weight, self.bias]

    def tensors(self):
        return [self.weight, self.bias]


class BatchNorm2d:
    kind = KIND_BATCHNORM

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=np.float32))
        self.running_var = Tensor(np.ones(channels, dtype=np.float32))

    def __call__(self, x, train=False):
        if train:
            out, mean, var = F.batch_norm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mean
            self.running_var.data = (1 - m) * self.running_var.data + m * var
            return out
        return F.batch_norm_infer(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data, self.eps)

    def params(self):
        return [self.gamma, self.beta]

    def tensors(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


class Linear:
    kind = KIND_FC

    def __init__(self, in_features, out_features, rng):
        std = np.sqrt(2.0 / in_features)
        self.weight = Tensor(rng.normal(0.0, std, (out_features, in_features)).astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def __call__(self, x, train=False):
        return F.linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]

    def tensors(self):
        return [self.weight, self.bias]
