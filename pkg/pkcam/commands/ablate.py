from pathlib import Path

from cleo.helpers import option

from pkcam.commands.base import PkcamCommand
from pkcam.errors import ConfigError
from pkcam.services.ablation import AblationMatrix
from pkcam.services.ablation import run_ablation
from pkcam.services.ablation import to_csv


class AblateCommand(PkcamCommand):
    name = "ablate"
    description = "Sweep PKCAM interaction, fusion and path variants; print a CSV row per cell."

    options = [
        option(
            long_name="matrix",
            short_name="m",
            description="Matrix file: run config keys plus matrix.interactions, "
            "matrix.fusions, matrix.paths and matrix.train.",
            flag=False,
        ),
        option(
            long_name="out",
            short_name="o",
            description="Keep each cell's run and ablation.csv in this directory.",
            flag=False,
        ),
    ]

    def handle(self) -> int:
        return self.guarded(self.ablate)

    def ablate(self) -> None:
        if self.option("matrix") is None:
            raise ConfigError("--matrix is required")
        matrix = AblationMatrix.load(Path(self.option("matrix")))
        out_dir = Path(self.option("out")) if self.option("out") else None

        csv = to_csv(run_ablation(matrix, out_dir, self.listener))
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "ablation.csv").write_text(csv, encoding="utf8")
        self.io.write(csv)
