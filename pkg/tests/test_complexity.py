import json

import pytest

from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.attention.config import Fusion
from pkcam.attention.config import Interaction
from pkcam.backbone.graph import Policy
from pkcam.backbone.graph import Stem
from pkcam.backbone.graph import plan_backbone
from pkcam.complexity import Convention
from pkcam.complexity import count_flops
from pkcam.complexity import count_params
from pkcam.complexity import placement_parameters
from pkcam.errors import DimensionError

PKCAM_ATTENTION = AttentionConfig(kind=AttentionKind.PKCAM)
IMAGENET = (1, 3, 224, 224)


def pkcam_variant(**pkcam) -> AttentionConfig:
    return AttentionConfig(kind=AttentionKind.PKCAM, pkcam=pkcam)


@pytest.mark.parametrize(
    "depth,attention,millions",
    [
        (18, None, 11.14),
        (34, None, 20.78),
        (50, None, 24.37),
        (50, AttentionConfig(kind=AttentionKind.SE), 26.77),
    ],
)
def test_published_parameter_counts(
    depth: int, attention: AttentionConfig | None, millions: float
) -> None:
    params = count_params(plan_backbone(depth, attention)).params
    assert params / 1e6 == pytest.approx(millions, rel=0.05)


def test_resnet18_has_the_familiar_parameter_count() -> None:
    assert count_params(plan_backbone(18)).params == 11_689_512


@pytest.mark.parametrize("depth,gflops", [(18, 1.699), (34, 3.427), (50, 3.86)])
def test_published_flop_counts(depth: int, gflops: float) -> None:
    flops = count_flops(plan_backbone(depth), IMAGENET).flops
    assert flops / 1e9 == pytest.approx(gflops, rel=0.10)


def test_small_input_flops_with_compact_stem() -> None:
    graph = plan_backbone(18, stem=Stem.COMPACT, classes=200)
    assert count_flops(graph, (1, 3, 64, 64)).flops / 1e9 == pytest.approx(2.075, rel=0.15)


def test_flops_scale_with_batch() -> None:
    graph = plan_backbone(18, PKCAM_ATTENTION)
    one = count_flops(graph, (1, 3, 64, 64)).flops
    assert count_flops(graph, (4, 3, 64, 64)).flops == 4 * one


def test_mac2_doubles_only_the_multiply_accumulates() -> None:
    graph = plan_backbone("tiny", classes=10)
    mac1 = count_flops(graph, (1, 3, 16, 16))
    mac2 = count_flops(graph, (1, 3, 16, 16), Convention.MAC2)
    assert mac1.flops < mac2.flops < 2 * mac1.flops
    features = graph.features
    assert mac2.row("head").flops - mac1.row("head").flops == features * 10


@pytest.mark.parametrize("depth", [18, 34, 50])
def test_pkcam_footprint_is_negligible(depth: int) -> None:
    vanilla = plan_backbone(depth)
    attended = plan_backbone(depth, PKCAM_ATTENTION, Policy.LAST_BLOCK)
    delta = count_params(attended).params - count_params(vanilla).params
    audited = sum(placement_parameters(b.attention, b.out_channels) for b in attended.attended())
    assert delta == audited
    assert 0 < delta < 0.001 * count_params(vanilla).params
    if depth == 18:
        assert delta < 0.0001 * count_params(vanilla).params


def test_eca_everywhere_adds_its_kernel_taps() -> None:
    eca = AttentionConfig(kind=AttentionKind.ECA)
    graph = plan_backbone(18, eca)
    taps = sum(b.attention.mechanism.kernel_size(b.out_channels) for b in graph.blocks)
    assert count_params(graph).params - count_params(plan_backbone(18)).params == taps
    assert taps == 3 + 3 + 5 + 5 + 5 + 5 + 5 + 5


def test_fusion_and_interaction_ordering() -> None:
    def params(**pkcam) -> int:
        return count_params(plan_backbone(18, pkcam_variant(**pkcam))).params

    fc_fusion = params(fusion=Fusion.FULL_FC)
    assert fc_fusion > params(fusion=Fusion.CONV1D_K2)
    assert fc_fusion > params(fusion=Fusion.SUM)

    fc_interaction = params(interaction=Interaction.FULL_FC)
    others = [params(interaction=i) for i in Interaction if i != Interaction.FULL_FC]
    assert all(fc_interaction > other for other in others)
    assert params(interaction=Interaction.SUM) == min(others)


def test_attention_rows_are_reported_separately() -> None:
    graph = plan_backbone(18, PKCAM_ATTENTION)
    report = count_flops(graph, IMAGENET)
    row = report.row("stage4.block2.attention")
    assert row.params == placement_parameters(graph.blocks[-1].attention, 512)
    assert row.flops > 0
    with pytest.raises(KeyError):
        report.row("stage1.block1.attention.missing")


def test_parameters_do_not_depend_on_input_size() -> None:
    graph = plan_backbone("tiny", PKCAM_ATTENTION, classes=8)
    small = count_flops(graph, (1, 3, 8, 8))
    large = count_flops(graph, (2, 3, 32, 32))
    assert small.params == large.params == count_params(graph).params
    assert small.flops < large.flops


def test_report_formats() -> None:
    report = count_flops(plan_backbone("tiny", classes=4), (1, 3, 16, 16))
    lines = report.to_csv().splitlines()
    assert lines[0] == "layer,params,flops"
    assert lines[1].startswith("stem,")
    assert lines[-1].startswith("head,")
    totals = json.loads(report.totals_json())
    assert list(totals) == ["convention", "flops", "input_shape", "params"]
    assert totals["params"] == report.params
    assert totals["input_shape"] == [1, 3, 16, 16]
    assert totals["convention"] == "mac1"


def test_bad_input_shapes() -> None:
    graph = plan_backbone(18)
    with pytest.raises(DimensionError):
        count_flops(graph, (1, 3, 224))
    with pytest.raises(DimensionError, match="axis 1"):
        count_flops(graph, (1, 1, 224, 224))
    with pytest.raises(DimensionError):
        count_flops(graph, (1, 3, 0, 224))
