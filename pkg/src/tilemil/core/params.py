"""Dataclass-based parameter containers with dotted names."""
from __future__ import annotations

from dataclasses import fields, is_dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor


def leaf(data, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return leaf(rng.uniform(-bound, bound, size=shape), dtype)


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParamGroup):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class ParamGroup:
    """Mixin for dataclasses whose Tensor fields are learnable."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        assert is_dataclass(self)
        for f in fields(self):
            yield from _walk(getattr(self, f.name), prefix + f.name)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in own.items():
            if state[name].shape != t.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {t.shape}")
            t.data = np.array(state[name], dtype=t.dtype)

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())
