from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.nets import tape as T
from src.nets.tape import Parameter, Tensor


class Module:
    """Base class for anything owning parameters.

    Parameters and sub-modules are discovered from instance attributes (and
    lists of modules) in attribute-definition order, which makes parameter
    names stable: ``revnet.blocks.3.conv1.weight``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_") or attr == "logger":
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def freeze(self):
        for p in self.parameters():
            p.freeze()

    def unfreeze(self):
        for p in self.parameters():
            p.unfreeze()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "", strict: bool = True):
        """Copy arrays into parameters by name.

        Raises:
            KeyError: if ``strict`` and a parameter is missing from ``state``
            ValueError: on a shape mismatch
        """
        for name, p in self.named_parameters(prefix):
            if name not in state:
                if strict:
                    raise KeyError(f"Missing parameter in state: {name}")
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"Shape mismatch for {name}: expected {p.shape}, got {value.shape}")
            p.value = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.value = p.value.astype(dtype)
        return self


def he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Linear(Module):
    """Affine map ``x @ W + b`` with W of shape (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero_init: bool = False,
                 name: str = "linear"):
        if zero_init:
            weight = np.zeros((n_in, n_out))
        else:
            weight = he_normal(rng, (n_in, n_out), n_in)
        self.weight = Parameter(weight, name=f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.bias")

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, zero_last: bool = False,
                 name: str = "mlp"):
        if len(sizes) < 2:
            raise ValueError(f"MLP needs at least input and output sizes, got {sizes}")
        n = len(sizes) - 1
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, zero_init=zero_last and i == n - 1, name=f"{name}.{i}")
            for i in range(n)
        ]

    def __call__(self, x):
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h


class ResidualMLP(MLP):
    """``x + MLP(x)``; with a zero last layer this starts as the identity."""

    def __init__(self, width: int, hidden: int, rng: np.random.Generator, name: str = "residual"):
        super().__init__([width, hidden, width], rng, zero_last=True, name=name)

    def __call__(self, x):
        return T.add(x, super().__call__(x))


class Conv2d(Module):
    """Square-kernel convolution on H x W x C tensors."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3,
                 stride: int = 1, padding: Optional[int] = None, zero_init: bool = False,
                 name: str = "conv"):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        shape = (kernel, kernel, c_in, c_out)
        weight = np.zeros(shape) if zero_init else he_normal(rng, shape, kernel * kernel * c_in)
        self.weight = Parameter(weight, name=f"{name}.weight")
        self.bias = Parameter(np.zeros(c_out), name=f"{name}.bias")

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))
