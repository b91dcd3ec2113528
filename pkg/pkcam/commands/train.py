from pathlib import Path

from cleo.helpers import option

from pkcam.commands.base import PkcamCommand
from pkcam.errors import ConfigError
from pkcam.services.config import RunConfig
from pkcam.services.trainer import Trainer


class TrainCommand(PkcamCommand):
    name = "train"
    description = "Train a backbone from a run config."

    options = [
        option(
            long_name="config",
            short_name="c",
            description="Run config file (key = value lines).",
            flag=False,
        ),
        option(
            long_name="seed",
            short_name="s",
            description="Override train.seed.",
            flag=False,
        ),
        option(
            long_name="out",
            short_name="o",
            description="Directory for resolved.cfg, metrics.csv and the checkpoint.",
            flag=False,
            default="run",
        ),
    ]

    def handle(self) -> int:
        return self.guarded(self.train)

    def train(self) -> None:
        if self.option("config") is None:
            raise ConfigError("--config is required")
        config = RunConfig.load(Path(self.option("config")))
        if self.option("seed") is not None:
            config = config.with_values(seed=self.option("seed"))

        result = Trainer(config, Path(self.option("out")), self.listener).run()
        self.line(f"checkpoint: {result.checkpoint}")
