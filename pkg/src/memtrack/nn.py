"""Parameter containers on top of :mod:`memtrack.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import checkpoint
from .tensor import Tensor, conv2d, get_default_dtype, relu


class Module:
    """Attribute-walking parameter registry.

    Parameters are ``Tensor`` attributes with ``requires_grad``; submodules
    are ``Module`` attributes or lists of them. A tensor reachable under two
    names (shared weights) is reported once, under the first name found.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix: str):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value._walk(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def to_dtype(self, dtype) -> None:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None

    def save(self, path, meta=None) -> None:
        checkpoint.save_arrays(path, self.state_dict(), meta)


class Conv2d(Module):
    """Square-kernel convolution with fan-in scaled uniform init.

    ``gain`` multiplies the variance-1/fan_in bound; use sqrt(2) ahead of a relu.
    """

    def __init__(self, cin, cout, k, stride=1, pad=0, bias=True, rng=None, gain=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = cin * k * k
        bound = gain * np.sqrt(3.0 / fan_in)
        dtype = get_default_dtype()
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype) if bias else None
        self.stride = stride
        self.pad = pad

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvReLU(Conv2d):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None):
        super().__init__(cin, cout, k, stride, pad, bias=True, rng=rng, gain=np.sqrt(2.0))

    def linear(self, x: Tensor) -> Tensor:
        """Pre-activation output."""
        return super().__call__(x)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.linear(x))
