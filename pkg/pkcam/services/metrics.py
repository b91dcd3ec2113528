from enum import StrEnum
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import model_validator

CSV_HEADER = "epoch,split,loss,top1,top5,seconds"


class Split(StrEnum):
    TRAIN = "train"
    EVAL = "eval"


class MetricsRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int = Field(ge=0)
    split: Split
    loss: float
    top1: float = Field(ge=0.0, le=1.0)
    top5: float = Field(ge=0.0, le=1.0)
    seconds: float = 0.0

    @model_validator(mode="after")
    def _top1_within_top5(self) -> "MetricsRecord":
        if self.top1 > self.top5:
            raise ValueError(f"top1 {self.top1} exceeds top5 {self.top5}")
        return self

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.split},{self.loss:.6f},"
            f"{self.top1:.6f},{self.top5:.6f},{self.seconds:.3f}"
        )

    def describe(self) -> str:
        return (
            f"epoch {self.epoch:>3} {self.split:<5} loss {self.loss:.4f} "
            f"top1 {self.top1:.4f} top5 {self.top5:.4f}"
        )


class MetricsLog:
    """Append-only metrics CSV; opening it truncates any previous run."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self.path.write_text(CSV_HEADER + "\n", encoding="utf8")

    def append(self, record: MetricsRecord) -> None:
        with self.path.open("a", encoding="utf8") as stream:
            stream.write(record.csv_row() + "\n")


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> int:
    """Rows whose label is among the k largest logits; ties resolve towards lower class ids."""
    k = min(k, logits.shape[1])
    ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return int((ranked == labels[:, None]).any(axis=1).sum())
