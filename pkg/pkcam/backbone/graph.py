"""Pure description of a residual backbone: stages, blocks and attention placement.

A `LayerGraph` carries no weights. The cost analyser works on it directly, so full-size
ResNet-18/34/50 graphs can be costed without allocating their parameters.
"""

from enum import StrEnum

from cleo.io.outputs.output import Verbosity
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import model_validator

from pkcam.attention.config import MECHANISMS
from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.attention.config import AttentionSpec
from pkcam.attention.config import Paths
from pkcam.attention.config import PKCAMConfig
from pkcam.errors import ConfigError
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener


class BlockKind(StrEnum):
    BASIC = "basic"
    BOTTLENECK = "bottleneck"


class Stem(StrEnum):
    IMAGENET = "imagenet"
    COMPACT = "compact"


class Policy(StrEnum):
    ALL_BLOCKS = "all"
    LAST_BLOCK = "last"


EXPANSION = {BlockKind.BASIC: 1, BlockKind.BOTTLENECK: 4}

STANDARD_DEPTHS: dict[str, tuple[BlockKind, tuple[int, ...]]] = {
    "18": (BlockKind.BASIC, (2, 2, 2, 2)),
    "34": (BlockKind.BASIC, (3, 4, 6, 3)),
    "50": (BlockKind.BOTTLENECK, (3, 4, 6, 3)),
}
STANDARD_WIDTHS = (64, 128, 256, 512)
TINY_STAGES = (1, 1)
TINY_WIDTHS = (8, 16)


class StageSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    blocks: int = Field(ge=1)
    width: int = Field(ge=1)
    stride: int = Field(1, ge=1)


class Placement(BaseModel):
    """Attention attached to one block: a baseline mechanism or PKCAM with its predecessors."""

    model_config = ConfigDict(frozen=True)

    kind: AttentionKind
    mechanism: AttentionSpec | None = None
    pkcam: PKCAMConfig | None = None
    predecessors: tuple[int, ...] = ()

    @model_validator(mode="after")
    def _one_payload(self) -> "Placement":
        if self.kind == AttentionKind.PKCAM and self.pkcam is None:
            raise ValueError("a PKCAM placement needs its PKCAM config")
        if self.kind in MECHANISMS and self.mechanism is None:
            raise ValueError(f"a {self.kind} placement needs its mechanism spec")
        return self

    @property
    def paths(self) -> Paths | None:
        if self.pkcam is None:
            return None
        return self.pkcam.paths if self.predecessors else Paths.LOCAL


class BlockSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_id: str
    stage: int
    index: int
    in_channels: int
    width: int
    out_channels: int
    stride: int
    endpoint: bool
    attention: Placement | None = None

    @property
    def projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


class LayerGraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    depth: str
    block: BlockKind
    stem: Stem
    in_channels: int = 3
    stem_width: int
    stages: tuple[StageSpec, ...]
    policy: Policy
    attention: AttentionConfig
    classes: int = Field(ge=1)
    blocks: tuple[BlockSpec, ...]

    @model_validator(mode="after")
    def _widths_never_shrink(self) -> "LayerGraph":
        widths = [stage.width for stage in self.stages]
        if any(b < a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"stage widths must be non-decreasing, got {widths}")
        return self

    @property
    def features(self) -> int:
        return self.blocks[-1].out_channels

    @property
    def cache_capacity(self) -> int:
        return max((len(b.attention.predecessors) for b in self.blocks if b.attention), default=0)

    def attended(self) -> list[BlockSpec]:
        return [b for b in self.blocks if b.attention is not None]


def _placement(
    attention: AttentionConfig,
    policy: Policy,
    last_in_stage: bool,
    channels: int,
    predecessors: tuple[int, ...],
) -> Placement | None:
    match attention.kind:
        case AttentionKind.NONE:
            return None
        case AttentionKind.PKCAM if policy == Policy.ALL_BLOCKS or last_in_stage:
            config = attention.pkcam
            config.check_backends()
            paths = config.paths if predecessors else Paths.LOCAL
            if paths != Paths.GLOBAL:
                config.lcci.check_channels(channels)
            if paths != Paths.LOCAL:
                config.gcci.check_channels(channels)
            return Placement(kind=AttentionKind.PKCAM, pkcam=config, predecessors=predecessors)
        case AttentionKind.PKCAM:
            spec = attention.lca
        case _:
            spec = attention.standalone()
    spec.check_channels(channels)
    return Placement(kind=spec.kind, mechanism=spec)


def plan_backbone(
    depth: str | int = "tiny",
    attention: AttentionConfig | None = None,
    policy: Policy = Policy.LAST_BLOCK,
    *,
    stages: tuple[int, ...] | None = None,
    widths: tuple[int, ...] | None = None,
    block: BlockKind | None = None,
    stem: Stem | None = None,
    classes: int = 1000,
    in_channels: int = 3,
    listener: Listener = NULL_LISTENER,
) -> LayerGraph:
    """Lays out the blocks of a standard (18/34/50) or tiny residual network.

    `stages` and `widths` override the per-stage block counts and base widths; the first
    stage keeps the stem resolution and every later stage halves it.
    """
    depth = str(depth)
    attention = attention or AttentionConfig()
    if depth == "tiny":
        default_block, default_stages = BlockKind.BASIC, TINY_STAGES
        default_widths, default_stem = TINY_WIDTHS, Stem.COMPACT
    elif depth in STANDARD_DEPTHS:
        default_block, default_stages = STANDARD_DEPTHS[depth]
        default_widths, default_stem = STANDARD_WIDTHS, Stem.IMAGENET
    else:
        raise ConfigError(f"unknown depth {depth!r}; expected tiny, 18, 34 or 50")

    block = block or default_block
    stem = stem or default_stem
    stages = tuple(stages or default_stages)
    widths = tuple(widths or default_widths)
    if len(stages) != len(widths):
        raise ConfigError(f"{len(stages)} stage block counts but {len(widths)} widths")

    coverage = attention.pkcam.coverage
    stem_width = widths[0]
    stage_specs = []
    blocks = []
    endpoints: list[int] = []
    channels = stem_width
    for s, (count, width) in enumerate(zip(stages, widths)):
        stride = 1 if s == 0 else 2
        stage_specs.append(StageSpec(blocks=count, width=width, stride=stride))
        out_channels = width * EXPANSION[block]
        predecessors = tuple(reversed(endpoints))[:coverage]
        for i in range(count):
            block_id = f"stage{s + 1}.block{i + 1}"
            last = i == count - 1
            placement = _placement(attention, policy, last, out_channels, predecessors)
            if placement is not None and placement.kind == AttentionKind.PKCAM:
                if not predecessors and attention.pkcam.paths != Paths.LOCAL:
                    listener(
                        f"{block_id}: no preceding stage to aggregate, PKCAM runs local only",
                        Verbosity.VERBOSE.value,
                    )
            blocks.append(
                BlockSpec(
                    block_id=block_id,
                    stage=s,
                    index=i,
                    in_channels=channels,
                    width=width,
                    out_channels=out_channels,
                    stride=stride if i == 0 else 1,
                    endpoint=last,
                    attention=placement,
                )
            )
            channels = out_channels
        endpoints.append(out_channels)

    try:
        return LayerGraph(
            depth=depth,
            block=block,
            stem=stem,
            in_channels=in_channels,
            stem_width=stem_width,
            stages=tuple(stage_specs),
            policy=policy,
            attention=attention,
            classes=classes,
            blocks=tuple(blocks),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
