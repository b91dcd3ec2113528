import numpy as np

from pkcam.tensor import ops
from pkcam.tensor.module import Module
from pkcam.tensor.module import he_normal
from pkcam.tensor.module import parameter
from pkcam.tensor.tensor import Tensor


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int | None = None,
        bias: bool = False,
    ) -> None:
        self.stride = stride
        self.pad = (kernel - 1) // 2 if pad is None else pad
        fan_in = in_channels * kernel * kernel
        self.weight = he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, stride=self.stride, pad=self.pad, bias=self.bias)


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ) -> None:
        if zero_init:
            self.weight = parameter(np.zeros((out_features, in_features)))
        else:
            self.weight = he_normal(rng, (out_features, in_features), in_features)
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.fc(x, self.weight, self.bias)


class NormLite(Module):
    """Learned per-channel scale and shift; stands in for batch norm without running stats."""

    def __init__(self, channels: int) -> None:
        self.scale = parameter(np.ones((1, channels, 1, 1)))
        self.shift = parameter(np.zeros((1, channels, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.scale + self.shift
