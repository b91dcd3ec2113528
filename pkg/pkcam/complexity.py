"""Static parameter and FLOP counts over a `LayerGraph`.

Counting rules:

* a multiply-accumulate is one FLOP under `mac1` and two under `mac2`;
* convolution: C_out·C_in·kh·kw·H'·W' MACs, fc: D_in·D_out MACs plus D_out bias adds;
* elementwise ops (norm scale and shift, relu, sigmoid, residual add, recalibration
  multiply) are one FLOP per element; global pooling is H·W adds per channel and max
  pooling one comparison per window element.
"""

from collections.abc import Iterator
from enum import StrEnum

from pydantic import BaseModel
from pydantic import ConfigDict

from pkcam.attention.config import AttentionKind
from pkcam.attention.config import AttentionSpec
from pkcam.attention.config import Fusion
from pkcam.attention.config import Interaction
from pkcam.attention.config import Paths
from pkcam.attention.pkcam import pkcam_parameters
from pkcam.attention.zoo import mechanism_parameters
from pkcam.backbone.graph import BlockKind
from pkcam.backbone.graph import BlockSpec
from pkcam.backbone.graph import LayerGraph
from pkcam.backbone.graph import Placement
from pkcam.backbone.graph import Stem
from pkcam.errors import DimensionError
from pkcam.numpy_ext import output_size


class Convention(StrEnum):
    MAC1 = "mac1"
    MAC2 = "mac2"


class CostRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer: str
    params: int
    flops: int = 0


class CostTotals(BaseModel):
    """Fields are declared in the key order of the JSON totals line."""

    convention: Convention
    flops: int
    input_shape: tuple[int, int, int, int] | None
    params: int


class CostReport(BaseModel):
    rows: list[CostRow]
    input_shape: tuple[int, int, int, int] | None = None
    convention: Convention = Convention.MAC1

    @property
    def params(self) -> int:
        return sum(row.params for row in self.rows)

    @property
    def flops(self) -> int:
        return sum(row.flops for row in self.rows)

    def totals(self) -> CostTotals:
        return CostTotals(
            params=self.params,
            flops=self.flops,
            input_shape=self.input_shape,
            convention=self.convention,
        )

    def row(self, layer: str) -> CostRow:
        for row in self.rows:
            if row.layer == layer:
                return row
        raise KeyError(layer)

    def to_csv(self) -> str:
        lines = ["layer,params,flops"]
        lines += [f"{row.layer},{row.params},{row.flops}" for row in self.rows]
        return "\n".join(lines) + "\n"

    def totals_json(self) -> str:
        return self.totals().model_dump_json()


def placement_parameters(placement: Placement, channels: int) -> int:
    """Audited parameter count of the attention module a placement describes."""
    if placement.kind == AttentionKind.PKCAM:
        return pkcam_parameters(placement.pkcam, channels, len(placement.predecessors))
    return mechanism_parameters(placement.mechanism, channels)


class _Counter:
    """Accumulates one row; flops stay 0 when only parameters are counted."""

    def __init__(self, mac: int, spatial: bool) -> None:
        self.mac = mac
        self.spatial = spatial
        self.params = 0
        self.flops = 0

    def macs(self, count: int) -> None:
        if self.spatial:
            self.flops += self.mac * count

    def elementwise(self, count: int) -> None:
        if self.spatial:
            self.flops += count


def _transform_cost(counter: _Counter, spec: AttentionSpec, channels: int, styles: int) -> None:
    match spec.kind:
        case AttentionKind.SE | AttentionKind.GC:
            hidden = channels // spec.reduction
            counter.macs(2 * channels * hidden)
            counter.elementwise(hidden + channels + hidden)
        case AttentionKind.ECA:
            counter.macs(channels * spec.kernel_size(channels))
        case AttentionKind.SRM:
            counter.macs(styles * channels)


def _context_cost(counter: _Counter, spec: AttentionSpec, channels: int, hw: int) -> None:
    counter.elementwise(channels * hw)
    if spec.kind == AttentionKind.SRM:
        counter.elementwise(3 * channels * hw)
    elif spec.kind == AttentionKind.GC:
        counter.macs(channels * hw)
        counter.elementwise(hw + 3 * hw)


def _attention_cost(
    counter: _Counter,
    placement: Placement,
    channels: int,
    hw: int,
    predecessor_hw: list[int],
) -> None:
    counter.params += placement_parameters(placement, channels)
    if placement.kind != AttentionKind.PKCAM:
        spec = placement.mechanism
        _context_cost(counter, spec, channels, hw)
        _transform_cost(counter, spec, channels, styles=2)
        # gate then recalibrate, or the additive fusion of GC
        counter.elementwise(channels + channels * hw)
        return

    config = placement.pkcam
    paths = placement.paths
    if paths != Paths.GLOBAL:
        _context_cost(counter, config.lcci, channels, hw)
        _transform_cost(counter, config.lcci, channels, styles=2)
    if paths != Paths.LOCAL:
        rows = 1 + len(placement.predecessors)
        counter.elementwise(channels * hw + sum(channels * p for p in predecessor_hw))
        match config.interaction:
            case Interaction.FULL_FC:
                counter.macs(rows * channels * channels)
            case Interaction.DEPTHWISE | Interaction.CONV1D_OVER_R:
                counter.macs(rows * channels)
            case Interaction.SUM:
                counter.elementwise((rows - 1) * channels)
        _transform_cost(counter, config.gcci, channels, styles=1)
    if paths == Paths.BOTH:
        match config.fusion:
            case Fusion.SUM:
                counter.elementwise(channels)
            case Fusion.CONV1D_K2:
                counter.macs(2 * channels)
            case Fusion.FULL_FC:
                counter.macs(2 * channels * channels)
                counter.elementwise(channels)
    counter.elementwise(channels + channels * hw)


def _conv(counter: _Counter, c_in: int, c_out: int, kernel: int, out_hw: int) -> None:
    counter.params += c_out * c_in * kernel * kernel
    counter.macs(c_out * c_in * kernel * kernel * out_hw)


def _norm(counter: _Counter, channels: int, hw: int, relu: bool) -> None:
    counter.params += 2 * channels
    counter.elementwise(2 * channels * hw + (channels * hw if relu else 0))


def _walk(
    graph: LayerGraph,
    input_shape: tuple[int, int, int, int] | None,
    mac: int,
) -> Iterator[CostRow]:
    spatial = input_shape is not None
    n, c, h, w = input_shape or (1, graph.in_channels, 1, 1)
    if c != graph.in_channels:
        raise DimensionError(
            f"input axis 1 (channels) is {c}, the backbone expects {graph.in_channels}"
        )

    def shrink(size: int, kernel: int, stride: int, pad: int, what: str) -> int:
        if not spatial:
            return 1
        out = output_size(size, kernel, stride, pad)
        if out < 1:
            raise DimensionError(f"input {h}x{w} is too small for {what}")
        return out

    counter = _Counter(mac, spatial)
    if graph.stem == Stem.IMAGENET:
        h, w = shrink(h, 7, 2, 3, "the stem"), shrink(w, 7, 2, 3, "the stem")
        _conv(counter, c, graph.stem_width, 7, h * w)
        _norm(counter, graph.stem_width, h * w, relu=True)
        h, w = shrink(h, 3, 2, 1, "the stem pool"), shrink(w, 3, 2, 1, "the stem pool")
        counter.elementwise(9 * graph.stem_width * h * w)
    else:
        _conv(counter, c, graph.stem_width, 3, h * w)
        _norm(counter, graph.stem_width, h * w, relu=True)
    yield CostRow(layer="stem", params=counter.params, flops=n * counter.flops)

    endpoint_hw: list[int] = []
    for block in graph.blocks:
        counter = _Counter(mac, spatial)
        in_hw = h * w
        h = shrink(h, 3, block.stride, 1, block.block_id)
        w = shrink(w, 3, block.stride, 1, block.block_id)
        _block_cost(counter, graph.block, block, in_hw, h * w)
        yield CostRow(layer=block.block_id, params=counter.params, flops=n * counter.flops)

        if block.attention is not None:
            counter = _Counter(mac, spatial)
            previous = list(reversed(endpoint_hw))[: len(block.attention.predecessors)]
            _attention_cost(counter, block.attention, block.out_channels, h * w, previous)
            yield CostRow(
                layer=f"{block.block_id}.attention",
                params=counter.params,
                flops=n * counter.flops,
            )
        if block.endpoint:
            endpoint_hw.append(h * w)

    counter = _Counter(mac, spatial)
    features = graph.features
    counter.params += features * graph.classes + graph.classes
    counter.elementwise(features * h * w + graph.classes)
    counter.macs(features * graph.classes)
    yield CostRow(layer="head", params=counter.params, flops=n * counter.flops)


def _block_cost(
    counter: _Counter,
    kind: BlockKind,
    block: BlockSpec,
    in_hw: int,
    out_hw: int,
) -> None:
    if kind == BlockKind.BASIC:
        _conv(counter, block.in_channels, block.width, 3, out_hw)
        _norm(counter, block.width, out_hw, relu=True)
        _conv(counter, block.width, block.out_channels, 3, out_hw)
        _norm(counter, block.out_channels, out_hw, relu=False)
    else:
        _conv(counter, block.in_channels, block.width, 1, in_hw)
        _norm(counter, block.width, in_hw, relu=True)
        _conv(counter, block.width, block.width, 3, out_hw)
        _norm(counter, block.width, out_hw, relu=True)
        _conv(counter, block.width, block.out_channels, 1, out_hw)
        _norm(counter, block.out_channels, out_hw, relu=False)
    if block.projection:
        _conv(counter, block.in_channels, block.out_channels, 1, out_hw)
        _norm(counter, block.out_channels, out_hw, relu=False)
    # residual add and the closing relu
    counter.elementwise(2 * block.out_channels * out_hw)


def count_params(graph: LayerGraph) -> CostReport:
    return CostReport(rows=list(_walk(graph, None, mac=1)))


def count_flops(
    graph: LayerGraph,
    input_shape: tuple[int, int, int, int],
    convention: Convention = Convention.MAC1,
) -> CostReport:
    if len(input_shape) != 4 or min(input_shape) < 1:
        raise DimensionError(f"input shape must be N,C,H,W with positive sizes, got {input_shape}")
    mac = 1 if convention == Convention.MAC1 else 2
    return CostReport(
        rows=list(_walk(graph, tuple(input_shape), mac)),
        input_shape=tuple(input_shape),
        convention=convention,
    )
