import math
from enum import StrEnum
from typing import Literal

from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import field_validator
from pydantic import model_validator

from pkcam.errors import ConfigError


class AttentionKind(StrEnum):
    NONE = "none"
    SE = "se"
    ECA = "eca"
    SRM = "srm"
    GC = "gc"
    PKCAM = "pkcam"


MECHANISMS = (AttentionKind.SE, AttentionKind.ECA, AttentionKind.SRM, AttentionKind.GC)


class Interaction(StrEnum):
    FULL_FC = "full_fc"
    DEPTHWISE = "depthwise"
    SUM = "sum"
    CONV1D_OVER_R = "conv1d_over_r"


class Fusion(StrEnum):
    SUM = "sum"
    CONV1D_K2 = "conv1d_k2"
    FULL_FC = "full_fc"


class Paths(StrEnum):
    LOCAL = "local"
    GLOBAL = "global"
    BOTH = "both"


def adaptive_kernel(channels: int) -> int:
    """ECA kernel rule |log2(C)/2 + 1/2| rounded to an odd size, never below 3."""
    t = int(abs((math.log2(channels) + 1) / 2))
    kernel = t if t % 2 else t + 1
    return max(kernel, 3)


class AttentionSpec(BaseModel):
    """One baseline mechanism with its hyper-parameters."""

    model_config = ConfigDict(frozen=True)

    kind: AttentionKind = AttentionKind.ECA
    reduction: int = Field(16, ge=1)
    kernel: int | Literal["adaptive"] = "adaptive"

    @field_validator("kind")
    @classmethod
    def _mechanism_only(cls, kind: AttentionKind) -> AttentionKind:
        if kind not in MECHANISMS:
            raise ValueError(f"{kind} is not a baseline mechanism")
        return kind

    @field_validator("kernel")
    @classmethod
    def _odd_kernel(cls, kernel: int | str) -> int | str:
        if isinstance(kernel, int) and (kernel < 1 or kernel % 2 == 0):
            raise ValueError(f"ECA kernel must be a positive odd size, got {kernel}")
        return kernel

    def kernel_size(self, channels: int) -> int:
        return adaptive_kernel(channels) if self.kernel == "adaptive" else int(self.kernel)

    def check_channels(self, channels: int) -> None:
        reduced = self.kind in (AttentionKind.SE, AttentionKind.GC)
        if reduced and channels % self.reduction != 0:
            raise ConfigError(
                f"{self.kind.upper()} needs channels divisible by the reduction ratio; "
                f"got C={channels}, r={self.reduction}"
            )


class PKCAMConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    coverage: int = Field(1, ge=0)
    interaction: Interaction = Interaction.CONV1D_OVER_R
    fusion: Fusion = Fusion.CONV1D_K2
    gcci: AttentionSpec = AttentionSpec(kind=AttentionKind.ECA)
    lcci: AttentionSpec = AttentionSpec(kind=AttentionKind.ECA)
    paths: Paths = Paths.BOTH

    @model_validator(mode="after")
    def _coverage_for_global_path(self) -> "PKCAMConfig":
        if self.paths != Paths.LOCAL and self.coverage < 1:
            raise ValueError("coverage R must be >= 1 unless paths = local")
        return self

    def check_backends(self) -> None:
        for role, spec in (("gcci", self.gcci), ("lcci", self.lcci)):
            if spec.kind == AttentionKind.GC:
                raise ConfigError(
                    f"GC cannot serve as the {role} backend: its additive fusion does not "
                    "produce channel scales"
                )


class AttentionConfig(BaseModel):
    """Which attention every residual block gets.

    `kind` selects none, a standalone baseline mechanism (built from `reduction` and
    `kernel`) or PKCAM; `lca` is the local attention used on non-PKCAM blocks when
    PKCAM sits on the last block of each stage only.
    """

    model_config = ConfigDict(frozen=True)

    kind: AttentionKind = AttentionKind.NONE
    reduction: int = Field(16, ge=1)
    kernel: int | Literal["adaptive"] = "adaptive"
    lca: AttentionSpec = AttentionSpec(kind=AttentionKind.ECA)
    pkcam: PKCAMConfig = PKCAMConfig()

    def standalone(self) -> AttentionSpec:
        return AttentionSpec(kind=self.kind, reduction=self.reduction, kernel=self.kernel)
