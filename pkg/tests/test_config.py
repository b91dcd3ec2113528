from pathlib import Path

import pytest

from pkcam.attention.config import AttentionKind
from pkcam.attention.config import Interaction
from pkcam.backbone.graph import BlockKind
from pkcam.backbone.graph import Stem
from pkcam.errors import ConfigError
from pkcam.services.config import DEFAULT_DATA
from pkcam.services.config import RunConfig
from pkcam.services.config import parse_key_values


def test_defaults() -> None:
    config = RunConfig()
    assert config.depth == "tiny"
    assert config.stages == (1, 1)
    assert config.widths == (8, 16)
    assert config.attention == AttentionKind.NONE
    assert config.lr == 0.1
    assert config.epochs == 50
    assert config.seed == 1
    assert config.data == DEFAULT_DATA


def test_parse_key_values_skips_comments_and_blanks() -> None:
    text = "# header\n\nbackbone.depth = tiny   # inline\n  pkcam.R=2\n"
    assert parse_key_values(text) == {"backbone.depth": "tiny", "pkcam.R": "2"}


def test_bad_lines_name_source_and_line() -> None:
    with pytest.raises(ConfigError, match="run.cfg:2: duplicate key"):
        parse_key_values("pkcam.R = 1\npkcam.R = 2\n", "run.cfg")
    with pytest.raises(ConfigError, match="run.cfg:1: expected 'key = value'"):
        parse_key_values("just words\n", "run.cfg")


def test_quick_fixture(fixtures_dir: Path) -> None:
    config = RunConfig.load(fixtures_dir / "configs" / "quick.cfg")
    assert config.classes == 4
    assert config.attention == AttentionKind.PKCAM
    assert config.coverage == 1
    assert config.interaction == Interaction.CONV1D_OVER_R
    assert config.epochs == 2
    assert config.data.startswith("synthetic:")


def test_unknown_key_is_rejected(fixtures_dir: Path) -> None:
    with pytest.raises(ConfigError, match="unknown key 'train.epoch'"):
        RunConfig.load(fixtures_dir / "configs" / "unknown_key.cfg")


def test_invalid_values_are_rejected() -> None:
    with pytest.raises(ConfigError, match="optim.lr"):
        RunConfig.from_text("optim.lr = -1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("backbone.widths = 8,0\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("backbone.depth = 101\n")


def test_missing_file_is_a_config_error(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read config"):
        RunConfig.load(tmp_path / "absent.cfg")


def test_standard_depth_fills_the_layout() -> None:
    config = RunConfig.from_text("backbone.depth = 50\n")
    assert config.stages == (3, 4, 6, 3)
    assert config.widths == (64, 128, 256, 512)
    assert config.block == BlockKind.BOTTLENECK
    assert config.stem == Stem.IMAGENET

    overridden = RunConfig.from_text("backbone.depth = 18\nbackbone.stem = compact\n")
    assert overridden.stem == Stem.COMPACT
    assert overridden.stages == (2, 2, 2, 2)


def test_text_round_trip() -> None:
    config = RunConfig.from_text(
        "backbone.widths = 4, 8\n"
        "attention.kind = pkcam\n"
        "pkcam.fusion = full_fc\n"
        "train.flip = true\n"
    )
    text = config.to_text()
    assert "backbone.widths = 4,8\n" in text
    assert "train.flip = true\n" in text
    assert RunConfig.from_text(text) == config


def test_with_values_accepts_both_names() -> None:
    config = RunConfig()
    changed = config.with_values(epochs=3, **{"pkcam.R": 2})
    assert (changed.epochs, changed.coverage) == (3, 2)
    assert config.epochs == 50
    with pytest.raises(ConfigError):
        config.with_values(epochs=0)


def test_plan_uses_the_configured_layout() -> None:
    config = RunConfig.from_text(
        "backbone.widths = 4,8\nbackbone.classes = 3\nattention.kind = eca\n"
    )
    graph = config.plan()
    assert graph.classes == 3
    assert [b.out_channels for b in graph.blocks] == [4, 8]
    assert all(b.attention.kind == AttentionKind.ECA for b in graph.blocks)
