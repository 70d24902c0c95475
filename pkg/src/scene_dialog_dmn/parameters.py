from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from scene_dialog_dmn.errors import DimensionError
from scene_dialog_dmn.tensor import Tensor, matmul, tile_rows, transpose


class ParameterStore:
    """
    Named trainable tensors keyed by dot-separated paths ("decoder.lstm.W").

    Every draw comes from one seeded generator in registration order, so two
    stores built the same way with the same seed hold identical values.
    """

    def __init__(self, seed: int = 0) -> None:
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    @property
    def rng(self) -> np.random.Generator:
        return self._rng

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"Parameter {name} is already registered")
        tensor.name = name
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def uniform(self, name: str, shape: Sequence[int], fan: int) -> Tensor:
        bound = 1.0 / math.sqrt(max(fan, 1))
        values = self._rng.uniform(-bound, bound, size=tuple(shape))
        return self.register(name, Tensor(values))

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        return self.register(name, Tensor(np.zeros(tuple(shape))))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def num_values(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def freeze(self) -> None:
        for tensor in self._params.values():
            tensor.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._params) - set(state))
        unexpected = sorted(set(state) - set(self._params))
        if missing or unexpected:
            raise ValueError(
                f"Checkpoint does not match model: missing={missing} unexpected={unexpected}"
            )
        for name, values in state.items():
            target = self._params[name]
            if tuple(values.shape) != target.shape:
                raise DimensionError(
                    f"Checkpoint tensor {name} has shape {tuple(values.shape)}, model expects {target.shape}"
                )
            target.data = np.array(values, dtype=np.float64)


class Affine:
    """y = W x + b with W of shape (out, in)."""

    def __init__(self, W: Tensor, b: Tensor) -> None:
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise DimensionError(f"Affine: incompatible W {W.shape} and b {b.shape}")
        self.W = W
        self.b = b

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, d_in: int, d_out: int, fan: int) -> "Affine":
        return cls(
            store.uniform(f"{prefix}.W", (d_out, d_in), fan),
            store.uniform(f"{prefix}.b", (d_out,), fan),
        )

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(self.W, x) + self.b

    def rows(self, X: Tensor) -> Tensor:
        """Apply to every row of an (n, in) matrix."""
        return matmul(X, transpose(self.W)) + tile_rows(self.b, X.shape[0])
