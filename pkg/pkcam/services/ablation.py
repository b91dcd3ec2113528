"""Sweeps PKCAM interaction, fusion and path choices over one base run config."""

import itertools
import tempfile
from pathlib import Path
from typing import Any

from cleo.io.outputs.output import Verbosity
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import ValidationError

from pkcam.attention.config import AttentionKind
from pkcam.attention.config import Fusion
from pkcam.attention.config import Interaction
from pkcam.attention.config import Paths
from pkcam.complexity import count_flops
from pkcam.complexity import count_params
from pkcam.errors import ConfigError
from pkcam.services.config import RunConfig
from pkcam.services.config import describe_validation
from pkcam.services.config import parse_key_values
from pkcam.services.dataset import ingest
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener
from pkcam.services.trainer import Trainer

MATRIX_PREFIX = "matrix."
CSV_HEADER = "interaction,fusion,paths,params,flops,top1"


class AblationRow(BaseModel):
    interaction: Interaction
    fusion: Fusion
    paths: Paths
    params: int
    flops: int
    top1: float | None = None

    def csv_row(self) -> str:
        top1 = "" if self.top1 is None else f"{self.top1:.6f}"
        return (
            f"{self.interaction},{self.fusion},{self.paths},"
            f"{self.params},{self.flops},{top1}"
        )


class AblationMatrix(BaseModel):
    """Axes left empty stay at the base config's value; at least one axis must be given."""

    model_config = ConfigDict(extra="forbid")

    base: RunConfig
    interactions: tuple[Interaction, ...] = ()
    fusions: tuple[Fusion, ...] = ()
    paths: tuple[Paths, ...] = ()
    train: bool = True

    @staticmethod
    def from_text(text: str, source: str = "<matrix>") -> "AblationMatrix":
        values = parse_key_values(text, source)
        axes: dict[str, Any] = {}
        for key in [k for k in values if k.startswith(MATRIX_PREFIX)]:
            name = key.removeprefix(MATRIX_PREFIX)
            raw = values.pop(key)
            if name == "train":
                axes[name] = raw
            else:
                axes[name] = tuple(part.strip() for part in raw.split(",") if part.strip())
        base = RunConfig.from_values(values, source)
        try:
            matrix = AblationMatrix(base=base, **axes)
        except ValidationError as exc:
            raise ConfigError(describe_validation(exc, source)) from exc
        if not (matrix.interactions or matrix.fusions or matrix.paths):
            raise ConfigError(f"{source}: the matrix names no interactions, fusions or paths")
        if base.attention != AttentionKind.PKCAM:
            raise ConfigError(f"{source}: ablation needs attention.kind = pkcam")
        return matrix

    @staticmethod
    def load(path: Path) -> "AblationMatrix":
        try:
            text = path.read_text(encoding="utf8")
        except OSError as exc:
            raise ConfigError(f"cannot read matrix {path}: {exc.strerror}") from exc
        return AblationMatrix.from_text(text, source=str(path))

    def cells(self) -> list[RunConfig]:
        axes = itertools.product(
            self.interactions or (self.base.interaction,),
            self.fusions or (self.base.fusion,),
            self.paths or (self.base.paths,),
        )
        return [
            self.base.with_values(interaction=i, fusion=f, paths=p) for i, f, p in axes
        ]


def run_ablation(
    matrix: AblationMatrix,
    out_dir: Path | None = None,
    listener: Listener = NULL_LISTENER,
) -> list[AblationRow]:
    bundle = ingest(matrix.base.data, listener)
    _, channels, height, width = bundle.shape
    cells = matrix.cells()
    rows = []
    with tempfile.TemporaryDirectory() as scratch:
        root = out_dir or Path(scratch)
        for number, config in enumerate(cells, start=1):
            label = f"{config.interaction}/{config.fusion}/{config.paths}"
            listener(f"cell {number}/{len(cells)}: {label}")
            graph = config.plan()
            top1 = None
            if matrix.train:
                cell_dir = root / f"cell-{number:02d}"
                top1 = Trainer(config, cell_dir, listener).run().record.top1
            rows.append(
                AblationRow(
                    interaction=config.interaction,
                    fusion=config.fusion,
                    paths=config.paths,
                    params=count_params(graph).params,
                    flops=count_flops(graph, (1, channels, height, width)).flops,
                    top1=top1,
                )
            )
    if matrix.train:
        ranked = sorted(rows, key=lambda row: -row.top1)
        ordering = " > ".join(f"{r.interaction}/{r.fusion}/{r.paths}" for r in ranked)
        listener(f"top-1 ordering: {ordering}")
    listener(f"{len(rows)} cells", Verbosity.VERBOSE.value)
    return rows


def to_csv(rows: list[AblationRow]) -> str:
    return "\n".join([CSV_HEADER] + [row.csv_row() for row in rows]) + "\n"
