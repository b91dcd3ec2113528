import itertools
from pathlib import Path

import numpy as np
import pytest

from pkcam.backbone.checkpoint import Checkpoint
from pkcam.errors import ConfigError
from pkcam.errors import TrainingDiverged
from pkcam.services.config import RunConfig
from pkcam.services.dataset import synthetic
from pkcam.services.metrics import CSV_HEADER
from pkcam.services.metrics import Split
from pkcam.services.trainer import CHECKPOINT
from pkcam.services.trainer import METRICS_CSV
from pkcam.services.trainer import RESOLVED_CONFIG
from pkcam.services.trainer import Trainer
from pkcam.services.trainer import build_model
from pkcam.services.trainer import evaluate
from pkcam.services.trainer import evaluate_checkpoint
from pkcam.tensor import ops
from pkcam.tensor.optim import SGD
from pkcam.tensor.optim import StepLR
from pkcam.tensor.tensor import Tensor
from tests.conftest import RecordingListener


@pytest.fixture
def quick(fixtures_dir: Path) -> RunConfig:
    return RunConfig.load(fixtures_dir / "configs" / "quick.cfg")


def test_step_schedule() -> None:
    schedule = StepLR(SGD([], lr=0.1), step=30, gamma=0.1)
    assert schedule.lr_at(0) == 0.1
    assert schedule.lr_at(29) == 0.1
    assert schedule.lr_at(30) == pytest.approx(0.01)
    assert schedule.lr_at(65) == pytest.approx(0.001)


def test_sgd_step_applies_momentum_and_decay() -> None:
    p = Tensor([1.0], requires_grad=True)
    optimizer = SGD([p], lr=0.5, momentum=0.9, weight_decay=0.1)
    p.grad = np.array([1.0])
    optimizer.step()
    np.testing.assert_allclose(p.data, [1.0 - 0.5 * 1.1])
    p.grad = np.array([1.0])
    optimizer.step()
    velocity = 0.9 * 1.1 + 1.0 + 0.1 * (1.0 - 0.55)
    np.testing.assert_allclose(p.data, [0.45 - 0.5 * velocity])


def test_run_writes_its_outputs(
    tmp_path: Path, quick: RunConfig, listener: RecordingListener
) -> None:
    result = Trainer(quick, tmp_path, listener).run()

    assert (tmp_path / RESOLVED_CONFIG).read_text() == quick.to_text()
    lines = (tmp_path / METRICS_CSV).read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert [line.split(",")[:2] for line in lines[1:]] == [
        ["1", "train"],
        ["2", "train"],
        ["2", "eval"],
    ]
    assert result.checkpoint == tmp_path / CHECKPOINT
    assert Checkpoint.load(result.checkpoint).epoch == 2
    assert [record.split for record in listener.records] == [Split.TRAIN, Split.TRAIN, Split.EVAL]
    assert result.record == listener.records[-1]


def test_top5_is_perfect_with_few_classes(tmp_path: Path, quick: RunConfig) -> None:
    result = Trainer(quick, tmp_path).run()
    assert result.record.top5 == 1.0
    for line in (tmp_path / METRICS_CSV).read_text().splitlines()[1:]:
        assert line.split(",")[4] == "1.000000"


def test_runs_are_reproducible(tmp_path: Path, quick: RunConfig) -> None:
    Trainer(quick, tmp_path / "first").run()
    Trainer(quick, tmp_path / "second").run()
    for name in (METRICS_CSV, CHECKPOINT):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_evaluating_the_checkpoint_matches_the_final_record(
    tmp_path: Path, quick: RunConfig
) -> None:
    result = Trainer(quick, tmp_path).run()
    assert evaluate_checkpoint(result.checkpoint) == result.record


def test_flip_augmentation_still_trains(tmp_path: Path, quick: RunConfig) -> None:
    result = Trainer(quick.with_values(flip=True, epochs=1), tmp_path).run()
    assert np.isfinite(result.record.loss)


def test_random_model_sits_at_chance() -> None:
    config = RunConfig.from_text("attention.kind = pkcam\n")
    model = build_model(config)
    bundle = synthetic(classes=8, per_class=16, height=16, width=16, seed=1)
    labels = np.random.default_rng(99).permutation(bundle.labels.astype(np.int64))
    record = evaluate(model, bundle.normalized(), labels)
    # 99% binomial interval for 128 draws at p = 1/8
    assert 6 <= round(record.top1 * 128) <= 26


def test_divergence_keeps_the_last_good_checkpoint(
    tmp_path: Path, quick: RunConfig, monkeypatch: pytest.MonkeyPatch
) -> None:
    original = ops.cross_entropy
    calls = itertools.count()

    def exploding(logits: Tensor, labels) -> Tensor:
        loss = original(logits, labels)
        # two batches per epoch, so the third call is the first of epoch 2
        return Tensor(float("nan")) if next(calls) >= 2 else loss

    monkeypatch.setattr(ops, "cross_entropy", exploding)
    with pytest.raises(TrainingDiverged) as exc:
        Trainer(quick, tmp_path).run()
    assert exc.value.epoch == 2
    assert Checkpoint.load(tmp_path / CHECKPOINT).epoch == 1
    assert len((tmp_path / METRICS_CSV).read_text().splitlines()) == 2


def test_class_count_must_match_the_data(tmp_path: Path, quick: RunConfig) -> None:
    with pytest.raises(ConfigError, match="4 classes"):
        Trainer(quick.with_values(classes=3), tmp_path).run()


def test_evaluation_leaves_parameters_alone(quick: RunConfig) -> None:
    model = build_model(quick)
    before = {name: values.copy() for name, values in model.state().items()}
    bundle = synthetic(classes=4, per_class=2, height=8, width=8, seed=3)
    evaluate(model, bundle.normalized(), bundle.labels.astype(np.int64))
    after = model.state()
    assert all(np.array_equal(before[name], after[name]) for name in before)
