import numpy as np

from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.attention.pkcam import PKCAM
from pkcam.attention.pkcam import FeatureCache
from pkcam.attention.zoo import build_mechanism
from pkcam.backbone.graph import BlockKind
from pkcam.backbone.graph import BlockSpec
from pkcam.backbone.graph import LayerGraph
from pkcam.backbone.graph import Placement
from pkcam.backbone.graph import Policy
from pkcam.backbone.graph import Stem
from pkcam.backbone.graph import plan_backbone
from pkcam.complexity import placement_parameters
from pkcam.errors import ContractError
from pkcam.errors import DimensionError
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener
from pkcam.tensor import ops
from pkcam.tensor.layers import Conv2d
from pkcam.tensor.layers import Linear
from pkcam.tensor.layers import NormLite
from pkcam.tensor.module import Module
from pkcam.tensor.module import ModuleList
from pkcam.tensor.tensor import Tensor


class StemLayer(Module):
    def __init__(self, kind: Stem, in_channels: int, width: int, rng: np.random.Generator) -> None:
        self.kind = kind
        if kind == Stem.IMAGENET:
            self.conv = Conv2d(in_channels, width, 7, rng, stride=2)
        else:
            self.conv = Conv2d(in_channels, width, 3, rng)
        self.norm = NormLite(width)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.norm(self.conv(x)))
        if self.kind == Stem.IMAGENET:
            x = ops.max_pool2d(x, kernel=3, stride=2, pad=1)
        return x


class Projection(Module):
    def __init__(self, spec: BlockSpec, rng: np.random.Generator) -> None:
        self.conv = Conv2d(spec.in_channels, spec.out_channels, 1, rng, stride=spec.stride)
        self.norm = NormLite(spec.out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


def build_attention(placement: Placement, channels: int, rng: np.random.Generator) -> Module:
    if placement.kind == AttentionKind.PKCAM:
        return PKCAM(channels, placement.pkcam, placement.predecessors, rng)
    return build_mechanism(placement.mechanism, channels, rng)


class ResidualBlock(Module):
    """Residual unit; attention recalibrates the branch before the skip addition."""

    def __init__(self, spec: BlockSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        self.build_branch(rng)
        self.shortcut = Projection(spec, rng) if spec.projection else None
        self.attention = None
        if spec.attention is not None:
            self.attention = build_attention(spec.attention, spec.out_channels, rng)

    def build_branch(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def branch(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor, cache: FeatureCache) -> Tensor:
        out = self.branch(x)
        if isinstance(self.attention, PKCAM):
            out = self.attention(out, cache)
        elif self.attention is not None:
            out = self.attention(out)
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.relu(out + skip)


class BasicBlock(ResidualBlock):
    def build_branch(self, rng: np.random.Generator) -> None:
        spec = self.spec
        self.conv1 = Conv2d(spec.in_channels, spec.width, 3, rng, stride=spec.stride)
        self.norm1 = NormLite(spec.width)
        self.conv2 = Conv2d(spec.width, spec.out_channels, 3, rng)
        self.norm2 = NormLite(spec.out_channels)

    def branch(self, x: Tensor) -> Tensor:
        x = ops.relu(self.norm1(self.conv1(x)))
        return self.norm2(self.conv2(x))


class Bottleneck(ResidualBlock):
    def build_branch(self, rng: np.random.Generator) -> None:
        spec = self.spec
        self.conv1 = Conv2d(spec.in_channels, spec.width, 1, rng)
        self.norm1 = NormLite(spec.width)
        self.conv2 = Conv2d(spec.width, spec.width, 3, rng, stride=spec.stride)
        self.norm2 = NormLite(spec.width)
        self.conv3 = Conv2d(spec.width, spec.out_channels, 1, rng)
        self.norm3 = NormLite(spec.out_channels)

    def branch(self, x: Tensor) -> Tensor:
        x = ops.relu(self.norm1(self.conv1(x)))
        x = ops.relu(self.norm2(self.conv2(x)))
        return self.norm3(self.conv3(x))


BLOCKS: dict[BlockKind, type[ResidualBlock]] = {
    BlockKind.BASIC: BasicBlock,
    BlockKind.BOTTLENECK: Bottleneck,
}


class ResidualNetwork(Module):
    def __init__(
        self,
        graph: LayerGraph,
        rng: np.random.Generator,
        zero_init_head: bool = False,
    ) -> None:
        self.graph = graph
        self.stem = StemLayer(graph.stem, graph.in_channels, graph.stem_width, rng)
        self.blocks = ModuleList(BLOCKS[graph.block](spec, rng) for spec in graph.blocks)
        self.head = Linear(graph.features, graph.classes, rng, zero_init=zero_init_head)
        self.audit()

    def audit(self) -> None:
        """Checks every attention module against the cost model's formula for its placement."""
        for spec, block in zip(self.graph.blocks, self.blocks):
            if block.attention is None:
                continue
            expected = placement_parameters(spec.attention, spec.out_channels)
            actual = block.attention.num_parameters()
            if actual != expected:
                raise ContractError(
                    f"{spec.block_id}: {spec.attention.kind} attention holds {actual} "
                    f"parameters, the cost model expects {expected}"
                )

    def attention_modules(self) -> dict[str, Module]:
        return {
            spec.block_id: block.attention
            for spec, block in zip(self.graph.blocks, self.blocks)
            if block.attention is not None
        }

    def features(self, x: Tensor, cache: FeatureCache | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.graph.in_channels:
            raise DimensionError(
                f"backbone input must be N×{self.graph.in_channels}×H×W, got {list(x.shape)}"
            )
        if cache is None:
            cache = FeatureCache(self.graph.cache_capacity)
        h = self.stem(x)
        for spec, block in zip(self.graph.blocks, self.blocks):
            h = block(h, cache)
            if spec.endpoint:
                cache.push(spec.block_id, h)
        return ops.gap2d(h)

    def forward(self, x: Tensor, cache: FeatureCache | None = None) -> Tensor:
        return self.head(self.features(x, cache))


def build_backbone(
    depth: str | int = "tiny",
    attention: AttentionConfig | None = None,
    policy: Policy = Policy.LAST_BLOCK,
    *,
    rng: np.random.Generator | None = None,
    zero_init_head: bool = False,
    listener: Listener = NULL_LISTENER,
    **layout,
) -> ResidualNetwork:
    """Plans the graph (see `plan_backbone` for the layout keywords) and allocates its weights."""
    graph = plan_backbone(depth, attention, policy, listener=listener, **layout)
    return ResidualNetwork(graph, rng or np.random.default_rng(0), zero_init_head=zero_init_head)
