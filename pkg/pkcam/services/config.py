"""Run configuration read from flat ``key = value`` text.

Keys are dotted (``backbone.depth``, ``pkcam.R``, ``optim.lr`` ...); ``#`` starts a
comment and list values are comma separated. Unknown keys are rejected.
"""

from pathlib import Path
from typing import Any
from typing import Literal

from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import field_validator
from pydantic import model_validator

from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.attention.config import AttentionSpec
from pkcam.attention.config import Fusion
from pkcam.attention.config import Interaction
from pkcam.attention.config import Paths
from pkcam.attention.config import PKCAMConfig
from pkcam.backbone.graph import STANDARD_DEPTHS
from pkcam.backbone.graph import STANDARD_WIDTHS
from pkcam.backbone.graph import TINY_STAGES
from pkcam.backbone.graph import TINY_WIDTHS
from pkcam.backbone.graph import BlockKind
from pkcam.backbone.graph import LayerGraph
from pkcam.backbone.graph import Policy
from pkcam.backbone.graph import Stem
from pkcam.backbone.graph import plan_backbone
from pkcam.errors import ConfigError
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener

DEFAULT_DATA = "synthetic:classes=8,per_class=16,height=16,width=16,seed=1"


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def describe_validation(exc: ValidationError, source: str) -> str:
    problems = []
    for error in exc.errors():
        where = ".".join(str(part) for part in error["loc"]) or "config"
        if error["type"] == "extra_forbidden":
            problems.append(f"unknown key {where!r}")
        else:
            problems.append(f"{where}: {error['msg']}")
    return f"{source}: " + "; ".join(problems)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return ""
    return str(value)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    depth: Literal["tiny", "18", "34", "50"] = Field("tiny", alias="backbone.depth")
    stages: tuple[int, ...] = Field(TINY_STAGES, alias="backbone.stages")
    widths: tuple[int, ...] = Field(TINY_WIDTHS, alias="backbone.widths")
    block: BlockKind = Field(BlockKind.BASIC, alias="backbone.block")
    stem: Stem = Field(Stem.COMPACT, alias="backbone.stem")
    classes: int = Field(8, ge=1, alias="backbone.classes")

    attention: AttentionKind = Field(AttentionKind.NONE, alias="attention.kind")
    reduction: int = Field(16, ge=1, alias="attention.reduction")
    kernel: int | Literal["adaptive"] = Field("adaptive", alias="attention.kernel")
    policy: Policy = Field(Policy.LAST_BLOCK, alias="attention.policy")
    lca: AttentionKind = Field(AttentionKind.ECA, alias="attention.lca")

    coverage: int = Field(1, ge=0, alias="pkcam.R")
    interaction: Interaction = Field(Interaction.CONV1D_OVER_R, alias="pkcam.interaction")
    fusion: Fusion = Field(Fusion.CONV1D_K2, alias="pkcam.fusion")
    paths: Paths = Field(Paths.BOTH, alias="pkcam.paths")
    gcci: AttentionKind = Field(AttentionKind.ECA, alias="pkcam.gcci")
    lcci: AttentionKind = Field(AttentionKind.ECA, alias="pkcam.lcci")

    lr: float = Field(0.1, gt=0.0, alias="optim.lr")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, alias="optim.momentum")
    weight_decay: float = Field(1e-4, ge=0.0, alias="optim.weight_decay")
    lr_step: int = Field(30, ge=1, alias="optim.lr_step")
    lr_gamma: float = Field(0.1, gt=0.0, alias="optim.lr_gamma")

    epochs: int = Field(50, ge=1, alias="train.epochs")
    batch_size: int = Field(32, ge=1, alias="train.batch_size")
    seed: int = Field(1, ge=0, alias="train.seed")
    checkpoint_every: int = Field(10, ge=1, alias="train.checkpoint_every")
    flip: bool = Field(False, alias="train.flip")
    wall_clock: bool = Field(False, alias="train.wall_clock")

    data: str = Field(DEFAULT_DATA, alias="data.path")

    @model_validator(mode="before")
    @classmethod
    def _depth_defaults(cls, values: Any) -> Any:
        if not isinstance(values, dict):
            return values
        values = dict(values)
        depth = str(values.get("backbone.depth", values.get("depth", "tiny")))
        if depth in STANDARD_DEPTHS:
            block, stages = STANDARD_DEPTHS[depth]
            defaults = {
                "stages": stages,
                "widths": STANDARD_WIDTHS,
                "block": block,
                "stem": Stem.IMAGENET,
            }
            for name, default in defaults.items():
                alias = f"backbone.{name}"
                if name not in values and alias not in values:
                    values[alias] = default
        return values

    @field_validator("stages", "widths", mode="before")
    @classmethod
    def _comma_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    @field_validator("stages", "widths")
    @classmethod
    def _positive(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or min(value) < 1:
            raise ValueError(f"expected a non-empty list of positive integers, got {value}")
        return value

    @staticmethod
    def from_values(values: dict[str, Any], source: str = "<config>") -> "RunConfig":
        try:
            return RunConfig.model_validate(values)
        except ValidationError as exc:
            raise ConfigError(describe_validation(exc, source)) from exc

    @staticmethod
    def from_text(text: str, source: str = "<config>") -> "RunConfig":
        return RunConfig.from_values(parse_key_values(text, source), source)

    @staticmethod
    def load(path: Path) -> "RunConfig":
        try:
            text = path.read_text(encoding="utf8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return RunConfig.from_text(text, source=str(path))

    def values(self) -> dict[str, Any]:
        return self.model_dump(by_alias=True)

    def with_values(self, **overrides: Any) -> "RunConfig":
        """Revalidated copy; keys are dotted names or field names."""
        values = self.values()
        for key, value in overrides.items():
            field = RunConfig.model_fields.get(key)
            values[field.alias if field else key] = value
        return RunConfig.from_values(values)

    def to_text(self) -> str:
        return "".join(f"{key} = {_format(value)}\n" for key, value in self.values().items())

    def attention_config(self) -> AttentionConfig:
        try:
            return AttentionConfig(
                kind=self.attention,
                reduction=self.reduction,
                kernel=self.kernel,
                lca=self._mechanism(self.lca),
                pkcam=PKCAMConfig(
                    coverage=self.coverage,
                    interaction=self.interaction,
                    fusion=self.fusion,
                    gcci=self._mechanism(self.gcci),
                    lcci=self._mechanism(self.lcci),
                    paths=self.paths,
                ),
            )
        except ValidationError as exc:
            raise ConfigError(describe_validation(exc, "attention")) from exc

    def _mechanism(self, kind: AttentionKind) -> AttentionSpec:
        return AttentionSpec(kind=kind, reduction=self.reduction, kernel=self.kernel)

    def plan(self, listener: Listener = NULL_LISTENER) -> LayerGraph:
        return plan_backbone(
            self.depth,
            self.attention_config(),
            self.policy,
            stages=self.stages,
            widths=self.widths,
            block=self.block,
            stem=self.stem,
            classes=self.classes,
            listener=listener,
        )
