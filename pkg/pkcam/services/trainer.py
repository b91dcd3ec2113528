import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from cleo.io.outputs.output import Verbosity

from pkcam.backbone.checkpoint import Checkpoint
from pkcam.backbone.network import ResidualNetwork
from pkcam.errors import ConfigError
from pkcam.errors import DataError
from pkcam.errors import NumericError
from pkcam.errors import TrainingDiverged
from pkcam.services.config import RunConfig
from pkcam.services.dataset import DatasetBundle
from pkcam.services.dataset import batches
from pkcam.services.dataset import flip_horizontal
from pkcam.services.dataset import ingest
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener
from pkcam.services.metrics import MetricsLog
from pkcam.services.metrics import MetricsRecord
from pkcam.services.metrics import Split
from pkcam.services.metrics import topk_hits
from pkcam.tensor import ops
from pkcam.tensor.optim import SGD
from pkcam.tensor.optim import StepLR
from pkcam.tensor.tensor import GradTape
from pkcam.tensor.tensor import Tensor

RESOLVED_CONFIG = "resolved.cfg"
METRICS_CSV = "metrics.csv"
CHECKPOINT = "model.ckpt"
EVAL_BATCH = 64


@dataclass
class TrainResult:
    record: MetricsRecord
    checkpoint: Path
    model: ResidualNetwork


def build_model(config: RunConfig, listener: Listener = NULL_LISTENER) -> ResidualNetwork:
    return ResidualNetwork(config.plan(listener), np.random.default_rng(config.seed))


def check_classes(model: ResidualNetwork, bundle: DatasetBundle) -> None:
    if bundle.classes != model.graph.classes:
        raise ConfigError(
            f"dataset has {bundle.classes} classes, the model classifies {model.graph.classes}"
        )


def evaluate(
    model: ResidualNetwork,
    inputs: np.ndarray,
    labels: np.ndarray,
    epoch: int = 0,
    split: Split = Split.EVAL,
) -> MetricsRecord:
    """Mean loss and top-1/top-5 over fixed-order batches; parameters are left untouched."""
    if not len(labels):
        raise DataError("nothing to evaluate: no labelled images")
    total_loss = 0.0
    top1 = 0
    top5 = 0
    for index in batches(len(labels), EVAL_BATCH):
        logits = model(Tensor(inputs[index]))
        total_loss += ops.cross_entropy(logits, labels[index]).item() * len(index)
        top1 += topk_hits(logits.numpy(), labels[index], 1)
        top5 += topk_hits(logits.numpy(), labels[index], 5)
    count = len(labels)
    return MetricsRecord(
        epoch=epoch,
        split=split,
        loss=total_loss / count,
        top1=top1 / count,
        top5=top5 / count,
    )


def evaluate_checkpoint(
    path: Path,
    data: str | None = None,
    listener: Listener = NULL_LISTENER,
) -> MetricsRecord:
    """Rebuilds the model from the checkpoint's config snapshot and evaluates it on `data`."""
    try:
        checkpoint = Checkpoint.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    config = RunConfig.from_text(checkpoint.snapshot, source=f"{path} snapshot")
    model = build_model(config, listener)
    checkpoint.restore(model)
    bundle = ingest(data or config.data, listener)
    check_classes(model, bundle)
    means = np.asarray(checkpoint.channel_means) if checkpoint.channel_means else None
    record = evaluate(model, bundle.normalized(means), bundle.labels, epoch=checkpoint.epoch)
    listener.metrics(record)
    return record


class Trainer:
    """Deterministic single-process SGD run writing its config, metrics and checkpoints."""

    def __init__(
        self,
        config: RunConfig,
        out_dir: Path,
        listener: Listener = NULL_LISTENER,
    ) -> None:
        self.config = config
        self.out_dir = out_dir
        self.listener = listener

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT

    def save_checkpoint(
        self,
        model: ResidualNetwork,
        bundle: DatasetBundle,
        epoch: int,
    ) -> None:
        checkpoint = Checkpoint.of(
            model,
            self.config.to_text(),
            seed=self.config.seed,
            epoch=epoch,
            channel_means=tuple(bundle.channel_means),
        )
        staging = self.checkpoint_path.with_suffix(".tmp")
        checkpoint.save(staging)
        staging.replace(self.checkpoint_path)
        self.listener(f"epoch {epoch}: checkpoint {self.checkpoint_path}", Verbosity.VERBOSE.value)

    def run(self) -> TrainResult:
        config = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / RESOLVED_CONFIG).write_text(config.to_text(), encoding="utf8")

        bundle = ingest(config.data, self.listener)
        model = build_model(config, self.listener)
        check_classes(model, bundle)
        self.listener(
            f"{model.num_parameters()} parameters, {len(bundle)} training images",
            Verbosity.VERBOSE.value,
        )

        inputs = bundle.normalized()
        labels = bundle.labels.astype(np.int64)
        rng = np.random.default_rng(config.seed)
        optimizer = SGD(model.parameters(), config.lr, config.momentum, config.weight_decay)
        schedule = StepLR(optimizer, config.lr_step, config.lr_gamma)
        log = MetricsLog(self.out_dir / METRICS_CSV)

        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            lr = schedule.apply(epoch - 1)
            self.listener(f"epoch {epoch}: lr {lr:g}", Verbosity.DEBUG.value)
            total_loss, top1, top5 = 0.0, 0, 0
            for index in batches(len(labels), config.batch_size, rng):
                x = inputs[index]
                if config.flip:
                    x = flip_horizontal(x, rng)
                try:
                    with GradTape():
                        logits = model(Tensor(x))
                        loss = ops.cross_entropy(logits, labels[index])
                        if not math.isfinite(loss.item()):
                            raise NumericError(f"loss is {loss.item()}")
                        loss.backward()
                except NumericError as exc:
                    raise TrainingDiverged(
                        f"training diverged at epoch {epoch} ({exc}); "
                        f"last good checkpoint kept at {self.checkpoint_path}",
                        epoch,
                    ) from exc
                optimizer.step()
                optimizer.zero_grad()
                total_loss += loss.item() * len(index)
                top1 += topk_hits(logits.numpy(), labels[index], 1)
                top5 += topk_hits(logits.numpy(), labels[index], 5)

            record = MetricsRecord(
                epoch=epoch,
                split=Split.TRAIN,
                loss=total_loss / len(labels),
                top1=top1 / len(labels),
                top5=top5 / len(labels),
                seconds=time.perf_counter() - started if config.wall_clock else 0.0,
            )
            log.append(record)
            self.listener.metrics(record)
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                self.save_checkpoint(model, bundle, epoch)

        final = evaluate(model, inputs, labels, epoch=config.epochs)
        log.append(final)
        self.listener.metrics(final)
        return TrainResult(record=final, checkpoint=self.checkpoint_path, model=model)
