"""Previous-knowledge channel attention.

The module recalibrates the current block output x₀ with scales S built from two paths:

* local: the transform of a baseline mechanism applied to GAP(x₀) (LCCI);
* global: earlier stage outputs are channel-aligned to C₀, squeezed into a stack
  of R+1 channel descriptors, mixed across the stack (previous-knowledge
  interaction) and passed through a baseline transform (GCCI).

Both paths emit logits; a single sigmoid is applied after fusion so S stays in (0, 1).
"""

from collections.abc import Sequence

import numpy as np

from pkcam.attention.config import AttentionKind
from pkcam.attention.config import Fusion
from pkcam.attention.config import Interaction
from pkcam.attention.config import Paths
from pkcam.attention.config import PKCAMConfig
from pkcam.attention.zoo import ChannelAttention
from pkcam.attention.zoo import broadcast_channels
from pkcam.attention.zoo import build_mechanism
from pkcam.attention.zoo import mechanism_parameters
from pkcam.errors import ConfigError
from pkcam.errors import ContractError
from pkcam.tensor import ops
from pkcam.tensor.module import Module
from pkcam.tensor.module import parameter
from pkcam.tensor.tensor import Tensor


class FeatureCache:
    """Stage outputs of the current forward pass, oldest first, at most `capacity` kept."""

    def __init__(self, capacity: int) -> None:
        if capacity < 0:
            raise ContractError(f"cache capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._entries: list[tuple[str, Tensor]] = []

    def push(self, block_id: str, features: Tensor) -> None:
        if self._entries and features.shape[0] != self._entries[0][1].shape[0]:
            raise ContractError(
                f"cache entry {block_id} has batch {features.shape[0]}, "
                f"cache holds batch {self._entries[0][1].shape[0]}"
            )
        if self.capacity == 0:
            return
        self._entries.append((block_id, features))
        del self._entries[: -self.capacity]

    def recent(self, count: int) -> list[Tensor]:
        """Returns the `count` most recent entries, most recent first."""
        if count > len(self._entries):
            raise ContractError(f"need {count} cached predecessors, cache has {len(self._entries)}")
        return [features for _, features in reversed(self._entries)][:count]

    @property
    def entries(self) -> list[tuple[str, Tensor]]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def align_channels(previous: Sequence[Tensor], channels: int) -> list[Tensor]:
    """Repeats each N×C_i×H×W entry along channels and truncates it to exactly C₀."""
    aligned = []
    for features in previous:
        width = features.shape[1]
        if width > channels:
            raise ContractError(
                f"cannot align {width} channels down to {channels}; widths must not shrink"
            )
        if width == channels:
            aligned.append(features)
        else:
            aligned.append(ops.take(features, np.arange(channels) % width, axis=1))
    return aligned


def squeeze_stack(current: Tensor, aligned: Sequence[Tensor]) -> Tensor:
    """GAP of x₀ and of every aligned predecessor, stacked into N×(1+len)×C₀."""
    if not aligned:
        raise ContractError("the global path needs at least one aligned predecessor")
    channels = current.shape[1]
    for features in aligned:
        if features.shape[1] != channels:
            raise ContractError(
                f"predecessor has {features.shape[1]} channels, expected {channels}"
            )
    return ops.stack([ops.gap2d(current)] + [ops.gap2d(f) for f in aligned], axis=1)


def pk_interact(stack: Tensor, mode: Interaction, weight: Tensor | None = None) -> Tensor:
    """Mixes the N×rows×C₀ stack into one N×C₀ descriptor."""
    n, rows, channels = stack.shape
    expected = {
        Interaction.FULL_FC: (channels, rows * channels),
        Interaction.DEPTHWISE: (rows, channels),
        Interaction.CONV1D_OVER_R: (rows,),
    }.get(mode)
    if expected is not None and (weight is None or weight.shape != expected):
        got = None if weight is None else list(weight.shape)
        raise ContractError(f"{mode} interaction needs weight of shape {list(expected)}, got {got}")
    match mode:
        case Interaction.FULL_FC:
            return ops.fc(stack.reshape(n, rows * channels), weight)
        case Interaction.DEPTHWISE:
            return (stack * weight).sum(axis=1)
        case Interaction.SUM:
            return stack.sum(axis=1)
        case Interaction.CONV1D_OVER_R:
            return (stack * weight.reshape(1, rows, 1)).sum(axis=1)
    raise ValueError(f"unknown interaction {mode}")


def interaction_parameters(mode: Interaction, rows: int, channels: int) -> int:
    return {
        Interaction.FULL_FC: rows * channels * channels,
        Interaction.DEPTHWISE: rows * channels,
        Interaction.SUM: 0,
        Interaction.CONV1D_OVER_R: rows,
    }[mode]


class PreviousKnowledgeInteraction(Module):
    def __init__(
        self,
        mode: Interaction,
        rows: int,
        channels: int,
        rng: np.random.Generator,
    ) -> None:
        self.mode = mode
        match mode:
            case Interaction.FULL_FC:
                scale = np.sqrt(1.0 / (rows * channels))
                self.weight = parameter(rng.normal(0.0, scale, (channels, rows * channels)))
            case Interaction.DEPTHWISE:
                self.weight = parameter(np.full((rows, channels), 1.0 / rows))
            case Interaction.CONV1D_OVER_R:
                self.weight = parameter(np.full(rows, 1.0 / rows))
            case Interaction.SUM:
                self.weight = None

    def forward(self, stack: Tensor) -> Tensor:
        return pk_interact(stack, self.mode, self.weight)


def _require_scale_backend(backend: ChannelAttention) -> None:
    if backend.kind == AttentionKind.GC:
        raise ConfigError("GC cannot serve as a PKCAM backend: it has no scale transform")


def gcci(y: Tensor, backend: ChannelAttention) -> Tensor:
    """Global cross-channel interaction: the backend transform on the aggregated Y (logits)."""
    _require_scale_backend(backend)
    return backend.transform(y)


def lcci(x0: Tensor, backend: ChannelAttention) -> Tensor:
    """Local cross-channel interaction: backend context then transform on x₀ (logits)."""
    _require_scale_backend(backend)
    return backend.transform(backend.context(x0))


def fuse_scales(
    z1: Tensor,
    z2: Tensor,
    mode: Fusion,
    weight: Tensor | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    """S = σ(φ(z₁, z₂)) for global logits z₁ and local logits z₂."""
    if z1.shape != z2.shape:
        raise ContractError(f"fusion inputs differ in shape: {list(z1.shape)} vs {list(z2.shape)}")
    match mode:
        case Fusion.SUM:
            fused = z1 + z2
        case Fusion.CONV1D_K2:
            if weight is None or weight.shape != (2,):
                raise ContractError("conv1d_k2 fusion needs exactly two weights")
            fused = z1 * ops.take(weight, [0], axis=0) + z2 * ops.take(weight, [1], axis=0)
        case Fusion.FULL_FC:
            if weight is None:
                raise ContractError("full_fc fusion needs a weight matrix")
            fused = ops.fc(ops.concat([z1, z2], axis=1), weight, bias)
        case _:
            raise ValueError(f"unknown fusion {mode}")
    return ops.sigmoid(fused)


def fusion_parameters(mode: Fusion, channels: int) -> int:
    return {
        Fusion.SUM: 0,
        Fusion.CONV1D_K2: 2,
        Fusion.FULL_FC: 2 * channels * channels + channels,
    }[mode]


class ScaleFusion(Module):
    def __init__(self, mode: Fusion, channels: int, rng: np.random.Generator) -> None:
        self.mode = mode
        self.weight = None
        self.bias = None
        match mode:
            case Fusion.CONV1D_K2:
                self.weight = parameter(np.ones(2))
            case Fusion.FULL_FC:
                scale = np.sqrt(1.0 / (2 * channels))
                self.weight = parameter(rng.normal(0.0, scale, (channels, 2 * channels)))
                self.bias = parameter(np.zeros(channels))

    def forward(self, z1: Tensor, z2: Tensor) -> Tensor:
        return fuse_scales(z1, z2, self.mode, self.weight, self.bias)


def effective_paths(config: PKCAMConfig, predecessors: int) -> Paths:
    return config.paths if predecessors else Paths.LOCAL


def pkcam_parameters(config: PKCAMConfig, channels: int, predecessors: int) -> int:
    paths = effective_paths(config, predecessors)
    count = 0
    if paths != Paths.GLOBAL:
        count += mechanism_parameters(config.lcci, channels, styles=2)
    if paths != Paths.LOCAL:
        count += interaction_parameters(config.interaction, 1 + predecessors, channels)
        count += mechanism_parameters(config.gcci, channels, styles=1)
    if paths == Paths.BOTH:
        count += fusion_parameters(config.fusion, channels)
    return count


class PKCAM(Module):
    needs_cache = True

    def __init__(
        self,
        channels: int,
        config: PKCAMConfig,
        predecessor_channels: Sequence[int],
        rng: np.random.Generator,
    ) -> None:
        config.check_backends()
        if len(predecessor_channels) > config.coverage:
            raise ContractError(
                f"{len(predecessor_channels)} predecessors exceed coverage R={config.coverage}"
            )
        for width in predecessor_channels:
            if width > channels:
                raise ContractError(f"predecessor width {width} exceeds current width {channels}")
        self.channels = channels
        self.config = config
        self.predecessor_channels = list(predecessor_channels)
        self.paths = effective_paths(config, len(self.predecessor_channels))

        self.local_attention = None
        self.interaction = None
        self.global_attention = None
        self.fusion = None
        if self.paths != Paths.GLOBAL:
            self.local_attention = build_mechanism(config.lcci, channels, rng, styles=2)
        if self.paths != Paths.LOCAL:
            rows = 1 + len(self.predecessor_channels)
            self.interaction = PreviousKnowledgeInteraction(config.interaction, rows, channels, rng)
            self.global_attention = build_mechanism(config.gcci, channels, rng, styles=1)
        if self.paths == Paths.BOTH:
            self.fusion = ScaleFusion(config.fusion, channels, rng)

    def global_logits(self, x0: Tensor, cache: FeatureCache) -> Tensor:
        previous = cache.recent(len(self.predecessor_channels))
        for features, width in zip(previous, self.predecessor_channels):
            if features.shape[1] != width:
                raise ContractError(
                    f"cached predecessor has {features.shape[1]} channels, expected {width}"
                )
        stack = squeeze_stack(x0, align_channels(previous, self.channels))
        return gcci(self.interaction(stack), self.global_attention)

    def scales(self, x0: Tensor, cache: FeatureCache) -> Tensor:
        match self.paths:
            case Paths.LOCAL:
                return ops.sigmoid(lcci(x0, self.local_attention))
            case Paths.GLOBAL:
                return ops.sigmoid(self.global_logits(x0, cache))
        return self.fusion(self.global_logits(x0, cache), lcci(x0, self.local_attention))

    def forward(self, x0: Tensor, cache: FeatureCache) -> Tensor:
        return x0 * broadcast_channels(self.scales(x0, cache))
