from pathlib import Path

import numpy as np
import pytest

from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.backbone.checkpoint import MAGIC
from pkcam.backbone.checkpoint import Checkpoint
from pkcam.backbone.network import build_backbone
from pkcam.errors import ContractError
from pkcam.errors import FormatError
from pkcam.services.config import RunConfig
from pkcam.tensor.tensor import Tensor

SNAPSHOT = "backbone.depth = tiny\nattention.kind = pkcam\n"


def test_round_trip_restores_identical_logits(tmp_path: Path, rng: np.random.Generator) -> None:
    attention = AttentionConfig(kind=AttentionKind.PKCAM)
    trained = build_backbone("tiny", attention, classes=4, rng=np.random.default_rng(1))
    for p in trained.parameters():
        p.assign_(rng.normal(size=p.shape))

    path = tmp_path / "model.ckpt"
    Checkpoint.of(trained, SNAPSHOT, seed=7, epoch=12, channel_means=(0.25, 0.5, 0.125)).save(path)
    loaded = Checkpoint.load(path)
    assert loaded.snapshot == SNAPSHOT
    assert loaded.seed == 7
    assert loaded.epoch == 12
    assert loaded.channel_means == (0.25, 0.5, 0.125)

    fresh = build_backbone("tiny", attention, classes=4, rng=np.random.default_rng(2))
    loaded.restore(fresh)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    assert fresh(x).numpy().tobytes() == trained(x).numpy().tobytes()


def test_snapshot_rebuilds_the_config() -> None:
    config = RunConfig(**{"attention.kind": "pkcam", "pkcam.R": 2})
    model = build_backbone("tiny", config.attention_config(), classes=config.classes)
    loaded = Checkpoint.from_bytes(Checkpoint.of(model, config.to_text()).to_bytes())
    assert RunConfig.from_text(loaded.snapshot) == config


def test_empty_payload_fails_at_offset_zero() -> None:
    with pytest.raises(FormatError, match=r"at byte 0") as exc:
        Checkpoint.from_bytes(b"")
    assert exc.value.offset == 0


def test_bad_magic() -> None:
    with pytest.raises(FormatError, match="magic"):
        Checkpoint.from_bytes(b"NOTCKPT" + bytes(16))


def test_unsupported_version() -> None:
    payload = bytearray(Checkpoint(SNAPSHOT, {}).to_bytes())
    payload[len(MAGIC)] = 9
    with pytest.raises(FormatError, match="version 9") as exc:
        Checkpoint.from_bytes(bytes(payload))
    assert exc.value.offset == len(MAGIC)


def test_truncated_parameter_data() -> None:
    payload = Checkpoint(SNAPSHOT, {"w": np.ones((2, 3))}).to_bytes()
    with pytest.raises(FormatError, match="truncated data of w"):
        Checkpoint.from_bytes(payload[:-8])


def test_parameter_name_must_be_utf8() -> None:
    payload = bytearray(Checkpoint(SNAPSHOT, {"w": np.ones(1)}).to_bytes())
    # name byte, rank, one dim and one float64 close the payload
    name_at = len(payload) - (1 + 4 + 4 + 8)
    payload[name_at] = 0xFF
    with pytest.raises(FormatError, match="parameter name is not UTF-8") as exc:
        Checkpoint.from_bytes(bytes(payload))
    assert exc.value.offset == name_at


def test_restore_into_another_architecture_fails() -> None:
    small = build_backbone("tiny", widths=(4, 8), classes=4)
    large = build_backbone("tiny", widths=(8, 16), classes=4)
    with pytest.raises(ContractError):
        Checkpoint.of(small, SNAPSHOT).restore(large)
