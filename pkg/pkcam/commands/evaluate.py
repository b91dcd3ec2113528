from pathlib import Path

from cleo.helpers import option

from pkcam.commands.base import PkcamCommand
from pkcam.errors import ConfigError
from pkcam.services.trainer import evaluate_checkpoint


class EvalCommand(PkcamCommand):
    name = "eval"
    description = "Evaluate a checkpoint on a dataset."

    options = [
        option(
            long_name="ckpt",
            short_name="k",
            description="Checkpoint written by train.",
            flag=False,
        ),
        option(
            long_name="data",
            short_name="d",
            description="Dataset: synthetic:..., a directory of class folders or a raw bundle. "
            "Defaults to the checkpoint's data.path.",
            flag=False,
        ),
    ]

    def handle(self) -> int:
        return self.guarded(self.evaluate)

    def evaluate(self) -> None:
        if self.option("ckpt") is None:
            raise ConfigError("--ckpt is required")
        evaluate_checkpoint(Path(self.option("ckpt")), self.option("data"), self.listener)
