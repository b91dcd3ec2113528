import os
from pathlib import Path

from cleo.helpers import option

from pkcam.commands.base import PkcamCommand
from pkcam.errors import EXIT_FAILURE
from pkcam.errors import ConfigError
from pkcam.services.config import RunConfig
from pkcam.services.gradcheck import CSV_HEADER
from pkcam.services.gradcheck import gradcheck


class GradcheckCommand(PkcamCommand):
    name = "gradcheck"
    description = "Compare analytic gradients with central finite differences, per module."

    options = [
        option(
            long_name="config",
            short_name="c",
            description="Run config of a small model (at most 10000 parameters).",
            flag=False,
        ),
    ]

    def handle(self) -> int:
        return self.guarded(self.check)

    def check(self) -> int:
        if self.option("config") is None:
            raise ConfigError("--config is required")
        rows = gradcheck(RunConfig.load(Path(self.option("config"))), self.listener)
        self.line(CSV_HEADER)
        for row in rows:
            self.line(row.csv_row())
        failed = [row.module for row in rows if row.status == "FAIL"]
        if failed:
            self.line_error(f"gradient mismatch in {', '.join(failed)}", style="error")
            return EXIT_FAILURE
        return os.EX_OK
