from cleo.helpers import option
from pydantic import ValidationError

from pkcam.attention.config import AttentionConfig
from pkcam.attention.config import AttentionKind
from pkcam.attention.config import PKCAMConfig
from pkcam.backbone.graph import Policy
from pkcam.backbone.graph import plan_backbone
from pkcam.commands.base import PkcamCommand
from pkcam.complexity import Convention
from pkcam.complexity import count_flops
from pkcam.errors import ConfigError
from pkcam.services.config import describe_validation


def parse_ints(value: str | None, what: str) -> tuple[int, ...] | None:
    if value is None:
        return None
    try:
        return tuple(int(part) for part in value.split(","))
    except ValueError as exc:
        raise ConfigError(f"{what} must be comma-separated integers, got {value!r}") from exc


def parse_choice(enum, value: str, what: str):
    try:
        return enum(value)
    except ValueError as exc:
        choices = ", ".join(member.value for member in enum)
        raise ConfigError(f"{what} must be one of {choices}; got {value!r}") from exc


class CostCommand(PkcamCommand):
    name = "cost"
    description = "Report per-layer parameters and FLOPs of a backbone as CSV plus JSON totals."

    options = [
        option("depth", None, "Backbone depth: 18, 34, 50 or tiny.", flag=False, default="18"),
        option(
            "attention",
            None,
            "Attention: none, se, eca, srm, gc or pkcam.",
            flag=False,
            default="none",
        ),
        option("policy", None, "PKCAM placement: all or last.", flag=False, default="last"),
        option("convention", None, "FLOP convention: mac1 or mac2.", flag=False, default="mac1"),
        option("input-shape", None, "Input shape N,C,H,W.", flag=False, default="1,3,224,224"),
        option("classes", None, "Classifier width.", flag=False, default="1000"),
        option("reduction", None, "SE/GC reduction ratio.", flag=False, default="16"),
        option("interaction", None, "PKCAM interaction.", flag=False, default="conv1d_over_r"),
        option("fusion", None, "PKCAM fusion.", flag=False, default="conv1d_k2"),
        option("coverage", None, "PKCAM coverage R.", flag=False, default="1"),
        option("stages", None, "Blocks per stage, e.g. 2,2,2,2.", flag=False),
        option("widths", None, "Base width per stage, e.g. 64,128,256,512.", flag=False),
    ]

    def handle(self) -> int:
        return self.guarded(self.report)

    def report(self) -> None:
        input_shape = parse_ints(self.option("input-shape"), "--input-shape")
        if len(input_shape) != 4:
            raise ConfigError(f"--input-shape needs N,C,H,W, got {self.option('input-shape')}")
        (classes,) = parse_ints(self.option("classes"), "--classes")
        try:
            attention = AttentionConfig(
                kind=parse_choice(AttentionKind, self.option("attention"), "--attention"),
                reduction=self.option("reduction"),
                pkcam=PKCAMConfig(
                    coverage=self.option("coverage"),
                    interaction=self.option("interaction"),
                    fusion=self.option("fusion"),
                ),
            )
        except ValidationError as exc:
            raise ConfigError(describe_validation(exc, "cost options")) from exc

        graph = plan_backbone(
            self.option("depth"),
            attention,
            parse_choice(Policy, self.option("policy"), "--policy"),
            stages=parse_ints(self.option("stages"), "--stages"),
            widths=parse_ints(self.option("widths"), "--widths"),
            classes=classes,
            in_channels=input_shape[1],
            listener=self.listener,
        )
        convention = parse_choice(Convention, self.option("convention"), "--convention")
        report = count_flops(graph, input_shape, convention)
        self.io.write(report.to_csv())
        self.line(report.totals_json())
