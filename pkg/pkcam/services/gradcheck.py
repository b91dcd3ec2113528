"""Central finite differences against the tape's analytic gradients."""

from collections.abc import Callable
from collections.abc import Iterable
from typing import Literal

import numpy as np
from cleo.io.outputs.output import Verbosity
from pydantic import BaseModel

from pkcam.errors import ConfigError
from pkcam.services.config import RunConfig
from pkcam.services.dataset import ingest
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener
from pkcam.services.trainer import build_model
from pkcam.services.trainer import check_classes
from pkcam.tensor import ops
from pkcam.tensor.module import Module
from pkcam.tensor.tensor import GradTape
from pkcam.tensor.tensor import Tensor

EPSILON = 1e-5
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-5
# smaller steps re-probe entries whose difference straddled a relu kink
RETRY_STEPS = (1e-6, 1e-7)
MAX_PARAMETERS = 10_000
GRADCHECK_BATCH = 2

CSV_HEADER = "module,parameters,max_rel_err,status"


class GradcheckRow(BaseModel):
    module: str
    parameters: int
    max_rel_err: float | None
    status: Literal["ok", "FAIL", "vacuous"]

    def csv_row(self) -> str:
        error = "" if self.max_rel_err is None else f"{self.max_rel_err:.3e}"
        return f"{self.module},{self.parameters},{error},{self.status}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), ERROR_FLOOR)


def numeric_gradient(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    eps: float = EPSILON,
    listener: Listener = NULL_LISTENER,
    name: str = "parameter",
    indices: Iterable[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central differences of `loss_fn` w.r.t. `param`; entries outside `indices` stay 0."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape) if indices is None else indices:
        probe = base.copy()
        probe[index] = base[index] + eps
        param.assign_(probe)
        upper = loss_fn().item()
        probe[index] = base[index] - eps
        param.assign_(probe)
        lower = loss_fn().item()
        grad[index] = (upper - lower) / (2.0 * eps)
        listener(f"{name}{list(index)}: {grad[index]:.6e}", Verbosity.DEBUG.value)
    param.assign_(base)
    return grad


def reported_modules(model: Module) -> list[tuple[str, Module]]:
    """Modules owning parameters directly, plus parameter-free modules reported as vacuous."""
    return [
        (name or "model", module)
        for name, module in model.named_modules()
        if module.own_parameters() or module.num_parameters() == 0
    ]


def check_gradients(
    model: Module,
    loss_fn: Callable[[], Tensor],
    eps: float = EPSILON,
    tolerance: float = TOLERANCE,
    listener: Listener = NULL_LISTENER,
) -> list[GradcheckRow]:
    """One row per reported module with the worst relative error over its own parameters."""
    model.zero_grad()
    with GradTape():
        loss_fn().backward()
    analytic = {
        id(p): np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        for p in model.parameters()
    }
    model.zero_grad()

    rows = []
    for name, module in reported_modules(model):
        params = module.own_parameters()
        if not params:
            rows.append(GradcheckRow(module=name, parameters=0, max_rel_err=None, status="vacuous"))
            continue
        worst = 0.0
        for i, param in enumerate(params):
            expected = analytic[id(param)]
            numeric = numeric_gradient(loss_fn, param, eps, listener, f"{name}#{i}")
            errors = relative_error(expected, numeric)
            for step in RETRY_STEPS:
                suspect = [tuple(index) for index in np.argwhere(errors >= tolerance)]
                if not suspect:
                    break
                retry = numeric_gradient(loss_fn, param, step, listener, f"{name}#{i}", suspect)
                retried = relative_error(expected, retry)
                for index in suspect:
                    errors[index] = min(errors[index], retried[index])
            worst = max(worst, float(errors.max()))
        rows.append(
            GradcheckRow(
                module=name,
                parameters=int(sum(p.size for p in params)),
                max_rel_err=worst,
                status="ok" if worst < tolerance else "FAIL",
            )
        )
        listener(rows[-1].csv_row(), Verbosity.VERBOSE.value)
    return rows


def gradcheck(config: RunConfig, listener: Listener = NULL_LISTENER) -> list[GradcheckRow]:
    """Checks the configured backbone on the first images of its dataset."""
    model = build_model(config, listener)
    count = model.num_parameters()
    if count > MAX_PARAMETERS:
        raise ConfigError(
            f"gradcheck needs a small config: {count} parameters exceed {MAX_PARAMETERS}"
        )
    bundle = ingest(config.data, listener)
    check_classes(model, bundle)
    inputs = Tensor(bundle.normalized()[:GRADCHECK_BATCH])
    labels = bundle.labels[:GRADCHECK_BATCH].astype(np.int64)

    def loss() -> Tensor:
        return ops.cross_entropy(model(inputs), labels)

    return check_gradients(model, loss, listener=listener)
