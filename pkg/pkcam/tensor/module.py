from __future__ import annotations

from collections.abc import Iterable
from collections.abc import Iterator

import numpy as np

from pkcam.errors import ContractError
from pkcam.tensor.tensor import Tensor


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))


class Module:
    """Container of learnable tensors and sub-modules.

    Parameters are the `requires_grad` tensors assigned as attributes; sub-modules are
    `Module` attributes or `ModuleList`s. Iteration follows attribute assignment order,
    so parameter names and order are stable across runs.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, Module | Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full_name = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full_name, value
            else:
                yield from value.named_parameters(prefix=f"{full_name}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix.rstrip("."), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def own_parameters(self) -> list[Tensor]:
        return [v for _, v in self._children() if isinstance(v, Tensor)]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise ContractError(
                f"parameter set mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}"
            )
        for name, tensor in expected.items():
            if tuple(state[name].shape) != tensor.shape:
                raise ContractError(
                    f"parameter {name}: stored shape {list(state[name].shape)}, "
                    f"model shape {list(tensor.shape)}"
                )
            tensor.assign_(state[name])


class ModuleList(Module):
    def __init__(self, modules: Iterable[Module] = ()) -> None:
        self._items: list[Module] = list(modules)

    def _children(self) -> Iterator[tuple[str, Module | Tensor]]:
        for index, module in enumerate(self._items):
            yield str(index), module

    def append(self, module: Module) -> None:
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]
