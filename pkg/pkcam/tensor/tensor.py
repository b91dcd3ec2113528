from __future__ import annotations

from collections.abc import Callable, Sequence
from contextvars import ContextVar
from dataclasses import dataclass

import numpy as np

from pkcam.errors import ContractError
from pkcam.errors import DimensionError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_ACTIVE_TAPE: ContextVar[GradTape | None] = ContextVar("pkcam_active_tape", default=None)


def _frozen(array: np.ndarray) -> np.ndarray:
    if array.ndim and 0 in array.shape:
        raise DimensionError(f"tensor dimensions must be at least 1, got shape {array.shape}")
    array.flags.writeable = False
    return array


class Tensor:
    """Dense float64 array in row-major order with an optional gradient.

    The stored array is read-only; the only sanctioned mutation is `assign_`, used by
    optimisers, checkpoint loading and finite-difference probes.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = _frozen(np.array(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: GradTape | None = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        if not array.flags.c_contiguous:
            array = np.ascontiguousarray(array)
        out.data = _frozen(array)
        out.requires_grad = requires_grad
        out.grad = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def assign_(self, values) -> None:
        array = np.array(values, dtype=np.float64)
        if array.shape != self.data.shape:
            raise ContractError(f"cannot assign shape {array.shape} to tensor of {self.shape}")
        array.flags.writeable = False
        self.data = array

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ContractError("tensor was not produced under an active GradTape")
        self._tape.backward(self)

    # -- operators --

    def __add__(self, other) -> Tensor:
        from pkcam.tensor import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        from pkcam.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other) -> Tensor:
        from pkcam.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other) -> Tensor:
        from pkcam.tensor import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        from pkcam.tensor import ops

        return ops.neg(self)

    def __matmul__(self, other) -> Tensor:
        from pkcam.tensor import ops

        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> Tensor:
        from pkcam.tensor import ops

        return ops.reshape(self, shape)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from pkcam.tensor import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from pkcam.tensor import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass(frozen=True)
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class GradTape:
    """Ordered record of differentiable ops executed while the tape is active.

    Usage::

        with GradTape() as tape:
            loss = model(x).sum()
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> GradTape:
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        if self._consumed:
            raise ContractError("tape already ran backward; record a new forward pass")
        output._tape = self
        self._records.append(_Record(output, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise ContractError("backward was already called on this tape; re-run the forward pass")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owners: dict[int, Tensor] = {id(loss): loss}
        for record in reversed(self._records):
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            _accumulate(record.output, grad_out)
            input_grads = record.backward(grad_out)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                owners[key] = tensor
                grads[key] = grads[key] + grad if key in grads else grad

        for key, grad in grads.items():
            _accumulate(owners[key], grad)
        for record in self._records:
            for tensor in record.inputs:
                if tensor.requires_grad and tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def active_tape() -> GradTape | None:
    return _ACTIVE_TAPE.get()
