"""Baseline channel-attention mechanisms split into context modeling, transform and fusion.

Each mechanism exposes the three stages separately so PKCAM can reuse the transform
stage alone on an already-squeezed channel descriptor.
"""

from dataclasses import dataclass

import numpy as np

from pkcam.attention.config import AttentionKind
from pkcam.attention.config import AttentionSpec
from pkcam.errors import DimensionError
from pkcam.tensor import ops
from pkcam.tensor.layers import Linear
from pkcam.tensor.module import Module
from pkcam.tensor.module import parameter
from pkcam.tensor.tensor import Tensor


@dataclass(frozen=True)
class ChannelScales:
    values: Tensor
    gated: bool


def broadcast_channels(z: Tensor) -> Tensor:
    n, c = z.shape
    return z.reshape(n, c, 1, 1)


class ChannelAttention(Module):
    kind: AttentionKind

    def context(self, x: Tensor) -> Tensor:
        return ops.gap2d(x)

    def transform(self, y: Tensor) -> Tensor:
        raise NotImplementedError

    def scales(self, x: Tensor) -> ChannelScales:
        return ChannelScales(ops.sigmoid(self.transform(self.context(x))), gated=True)

    def forward(self, x: Tensor) -> Tensor:
        return x * broadcast_channels(self.scales(x).values)


class SqueezeExcitation(ChannelAttention):
    kind = AttentionKind.SE

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator) -> None:
        AttentionSpec(kind=self.kind, reduction=reduction).check_channels(channels)
        self.down = Linear(channels, channels // reduction, rng)
        self.up = Linear(channels // reduction, channels, rng)

    def transform(self, y: Tensor) -> Tensor:
        return self.up(ops.relu(self.down(y)))


class EfficientChannelAttention(ChannelAttention):
    kind = AttentionKind.ECA

    def __init__(self, kernel: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(kernel)
        self.kernel = parameter(rng.uniform(-bound, bound, size=kernel))

    def transform(self, y: Tensor) -> Tensor:
        (k,) = self.kernel.shape
        return ops.conv1d(y, self.kernel, pad=(k - 1) // 2)


class StyleRecalibration(ChannelAttention):
    """Style pooling (mean, std) integrated by a per-channel weight over the styles."""

    kind = AttentionKind.SRM

    def __init__(self, channels: int, styles: int = 2) -> None:
        self.styles = styles
        self.weight = parameter(np.zeros((channels, styles)))

    def context(self, x: Tensor) -> Tensor:
        return ops.stack([ops.gap2d(x), ops.std2d(x)], axis=2)

    def transform(self, y: Tensor) -> Tensor:
        if y.ndim == 2:
            y = y.reshape(y.shape[0], y.shape[1], 1)
        if y.shape[2] != self.styles:
            raise DimensionError(
                f"SRM: axis 2 (styles) is {y.shape[2]}, module integrates {self.styles}"
            )
        return (y * self.weight).sum(axis=2)


class GlobalContext(ChannelAttention):
    """Softmax-pooled spatial context, bottleneck transform, additive fusion."""

    kind = AttentionKind.GC

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator) -> None:
        AttentionSpec(kind=self.kind, reduction=reduction).check_channels(channels)
        scale = np.sqrt(1.0 / channels)
        self.context_weight = parameter(rng.normal(0.0, scale, (1, channels, 1, 1)))
        self.context_bias = parameter(np.zeros(1))
        self.down = Linear(channels, channels // reduction, rng)
        self.up = Linear(channels // reduction, channels, rng, zero_init=True)

    def attention_map(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        logits = ops.conv2d(x, self.context_weight, bias=self.context_bias)
        return ops.softmax(logits.reshape(n, h * w), axis=1)

    def context(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        weights = self.attention_map(x).reshape(n, h * w, 1)
        return (x.reshape(n, c, h * w) @ weights).reshape(n, c)

    def transform(self, y: Tensor) -> Tensor:
        return self.up(ops.relu(self.down(y)))

    def scales(self, x: Tensor) -> ChannelScales:
        return ChannelScales(self.transform(self.context(x)), gated=False)

    def forward(self, x: Tensor) -> Tensor:
        return x + broadcast_channels(self.scales(x).values)


def build_mechanism(
    spec: AttentionSpec,
    channels: int,
    rng: np.random.Generator,
    styles: int = 2,
) -> ChannelAttention:
    spec.check_channels(channels)
    match spec.kind:
        case AttentionKind.SE:
            return SqueezeExcitation(channels, spec.reduction, rng)
        case AttentionKind.ECA:
            return EfficientChannelAttention(spec.kernel_size(channels), rng)
        case AttentionKind.SRM:
            return StyleRecalibration(channels, styles)
        case AttentionKind.GC:
            return GlobalContext(channels, spec.reduction, rng)
    raise ValueError(f"unsupported mechanism {spec.kind}")


def mechanism_parameters(spec: AttentionSpec, channels: int, styles: int = 2) -> int:
    """Learnable scalar count of a standalone mechanism on `channels` channels."""
    match spec.kind:
        case AttentionKind.SE:
            hidden = channels // spec.reduction
            return 2 * channels * hidden + hidden + channels
        case AttentionKind.ECA:
            return spec.kernel_size(channels)
        case AttentionKind.SRM:
            return styles * channels
        case AttentionKind.GC:
            hidden = channels // spec.reduction
            return channels + 1 + 2 * channels * hidden + hidden + channels
    raise ValueError(f"unsupported mechanism {spec.kind}")
