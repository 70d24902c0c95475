from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from scene_dialog_dmn.errors import ContractError, DimensionError, DomainError, InputError

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
GradFn = Callable[[np.ndarray], tuple[Union[np.ndarray, None], ...]]

# Pre-activations closer than this to the relu kink count as boundary hits.
RELU_BOUNDARY_EPS = 1e-6

_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@dataclass
class BoundaryCounter:
    relu_calls: int = 0
    boundary_hits: int = 0


@contextmanager
def boundary_monitor() -> Iterator[BoundaryCounter]:
    counter = BoundaryCounter()
    previous = getattr(_local, "boundary", None)
    _local.boundary = counter
    try:
        yield counter
    finally:
        _local.boundary = previous


@dataclass
class _Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward: GradFn


class Tensor:
    """
    Dense float64 array that records the operation which produced it.

    Shapes are explicit: binary ops require equal shapes and never broadcast.
    `grad` accumulates across backward passes until `zero_grad()` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        arr = np.array(data, dtype=np.float64)
        if any(dim == 0 for dim in arr.shape):
            raise DimensionError(f"Tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._node = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other: float) -> "Tensor":
        return add_scalar(self, float(other))

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        return add_scalar(scalar_mul(self, -1.0), float(other))

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scalar_mul(self, float(other))

    def __rmul__(self, other: float) -> "Tensor":
        return scalar_mul(self, float(other))

    def __neg__(self) -> "Tensor":
        return scalar_mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: int | slice) -> "Tensor":
        return take(self, key)

    def __len__(self) -> int:
        return self.shape[0] if self.shape else 1


def as_tensor(value: "Tensor | ArrayLike") -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], op: str, grad_fn: GradFn) -> Tensor:
    out = Tensor._wrap(np.asarray(data, dtype=np.float64))
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op=op, inputs=inputs, backward=grad_fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul: operands must be 1-D or 2-D, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if a_data.ndim == 2 and b_data.ndim == 2:
            return g @ b_data.T, a_data.T @ g
        if a_data.ndim == 2:
            return np.outer(g, b_data), a_data.T @ g
        if b_data.ndim == 2:
            return b_data @ g, np.outer(a_data, g)
        return g * b_data, g * a_data

    return _result(a_data @ b_data, (a, b), "matmul", grad_fn)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError(f"dot: expected vectors, got {a.shape} and {b.shape}")
    return matmul(a, b)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {x.shape}")
    return _result(x.data.T, (x,), "transpose", lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    target = tuple(int(dim) for dim in shape)
    if int(np.prod(target)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {target}")
    original = x.shape
    return _result(x.data.reshape(target), (x,), "reshape", lambda g: (g.reshape(original),))


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("hadamard", a, b)
    a_data, b_data = a.data, b.data
    return _result(a_data * b_data, (a, b), "hadamard", lambda g: (g * b_data, g * a_data))


def scalar_mul(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), "scalar_mul", lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + c, (x,), "add_scalar", lambda g: (g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    counter: BoundaryCounter | None = getattr(_local, "boundary", None)
    if counter is not None:
        counter.relu_calls += 1
        counter.boundary_hits += int(np.count_nonzero(np.abs(x.data) <= RELU_BOUNDARY_EPS))
    # Subgradient 0 at exactly 0.
    mask = (x.data > 0.0).astype(np.float64)
    return _result(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), "exp", lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise DomainError(f"log: input has non-positive entries (min {float(np.min(x.data))!r})")
    x_data = x.data
    return _result(np.log(x_data), (x,), "log", lambda g: (g / x_data,))


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
}
_BINARY: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "hadamard": hadamard,
    "add": add,
    "sub": sub,
}


def elementwise(op: str, *inputs: Tensor | float) -> Tensor:
    """Dispatch one of tanh, relu, sigmoid, exp, log, hadamard, add, sub, scalar-mul."""
    if op in _UNARY:
        if len(inputs) != 1:
            raise ContractError(f"{op} takes one input, got {len(inputs)}")
        return _UNARY[op](as_tensor(inputs[0]))
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two inputs, got {len(inputs)}")
        return _BINARY[op](as_tensor(inputs[0]), as_tensor(inputs[1]))
    if op == "scalar-mul":
        if len(inputs) != 2 or not isinstance(inputs[0], Tensor):
            raise ContractError("scalar-mul takes (tensor, number)")
        return scalar_mul(inputs[0], float(inputs[1]))  # type: ignore[arg-type]
    raise ContractError(f"Unknown elementwise op: {op}")


# ---------------------------------------------------------------------------
# Fused cells
# ---------------------------------------------------------------------------


def lstm_gates(z: Tensor, c: Tensor) -> Tensor:
    """
    Pointwise half of an LSTM step as one node.

    `z` stacks the i, f, g, o pre-activations (4H,); the result is
    [h_next ; c_next] (2H,).
    """
    if c.ndim != 1 or z.shape != (4 * c.shape[0],):
        raise DimensionError(f"lstm_gates: pre-activations {z.shape} do not fit cell {c.shape}")
    H = c.shape[0]
    zd, c_prev = z.data, c.data
    i = 0.5 * (1.0 + np.tanh(0.5 * zd[0:H]))
    f = 0.5 * (1.0 + np.tanh(0.5 * zd[H : 2 * H]))
    g = np.tanh(zd[2 * H : 3 * H])
    o = 0.5 * (1.0 + np.tanh(0.5 * zd[3 * H : 4 * H]))
    c_next = f * c_prev + i * g
    tc = np.tanh(c_next)

    def grad_fn(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gh, gc = grad[:H], grad[H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                gh * tc * o * (1.0 - o),
            ]
        )
        return dz, dc * f

    return _result(np.concatenate([o * tc, c_next]), (z, c), "lstm_gates", grad_fn)


def gated_blend(candidate: Tensor, previous: Tensor, gate: Tensor) -> Tensor:
    """gate * candidate + (1 - gate) * previous for a single-valued gate."""
    _require_same_shape("gated_blend", candidate, previous)
    if gate.size != 1:
        raise DimensionError(f"gated_blend: gate must hold one value, got shape {gate.shape}")
    value = float(gate.data.reshape(-1)[0])
    cand, prev = candidate.data, previous.data
    gate_shape = gate.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return g * value, g * (1.0 - value), np.full(gate_shape, float(np.sum(g * (cand - prev))))

    return _result(value * cand + (1.0 - value) * prev, (candidate, previous, gate), "gated_blend", grad_fn)


# ---------------------------------------------------------------------------
# Reductions and normalisation
# ---------------------------------------------------------------------------


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if x.ndim == 0:
        raise DimensionError(f"{op}: needs at least one axis, got a scalar")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "softmax")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), "softmax", grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "log_softmax")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return _result(y, (x,), "log_softmax", grad_fn)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _result(
            np.sum(x.data),
            (x,),
            "sum",
            lambda g: (np.full(shape, float(g)),),
        )
    axis = _check_axis(x, axis, "sum")

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis),)

    return _result(np.sum(x.data, axis=axis), (x,), "sum", grad_fn)


def mean(x: Tensor) -> Tensor:
    return scalar_mul(sum(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# Structural
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat: needs at least one part")
    ndim = parts[0].ndim
    if ndim == 0:
        raise DimensionError("concat: cannot concatenate scalars")
    axis = axis % ndim
    for part in parts:
        if part.ndim != ndim:
            raise DimensionError(f"concat: rank mismatch {parts[0].shape} vs {part.shape}")
        for dim in range(ndim):
            if dim != axis and part.shape[dim] != parts[0].shape[dim]:
                raise DimensionError(
                    f"concat: non-axis dimensions differ {parts[0].shape} vs {part.shape}"
                )
    if len(parts) == 1:
        return parts[0]
    offsets = np.cumsum([part.shape[axis] for part in parts])[:-1]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(g, offsets, axis=axis))

    data = np.concatenate([part.data for part in parts], axis=axis)
    return _result(data, tuple(parts), "concat", grad_fn)


def stack(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("stack: needs at least one part")
    for part in parts:
        _require_same_shape("stack", parts[0], part)
    count = len(parts)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(g[i] for i in range(count))

    return _result(np.stack([part.data for part in parts]), tuple(parts), "stack", grad_fn)


def take(x: Tensor, key: int | slice) -> Tensor:
    """Index or contiguously slice the first axis."""
    if x.ndim == 0:
        raise DimensionError("take: cannot index a scalar")
    if isinstance(key, slice):
        start, stop, step = key.indices(x.shape[0])
        if step != 1 or stop <= start:
            raise DimensionError(f"take: slice {key} is empty or strided for shape {x.shape}")
    elif not -x.shape[0] <= key < x.shape[0]:
        raise DimensionError(f"take: index {key} out of range for shape {x.shape}")
    shape = x.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _result(x.data[key], (x,), "take", grad_fn)


def tile_rows(x: Tensor, n: int) -> Tensor:
    """Stack `n` copies of vector `x` into an (n, d) matrix."""
    if x.ndim != 1:
        raise DimensionError(f"tile_rows: expected a vector, got {x.shape}")
    if n < 1:
        raise DimensionError(f"tile_rows: row count must be positive, got {n}")
    return _result(np.tile(x.data, (n, 1)), (x,), "tile_rows", lambda g: (g.sum(axis=0),))


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if len(ids) == 0:
        raise InputError("embedding_lookup: no token ids given")
    index = np.asarray(ids, dtype=np.int64)
    if np.any(index < 0) or np.any(index >= table.shape[0]):
        raise InputError(f"embedding_lookup: token id out of range [0, {table.shape[0]})")
    shape = table.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(table.data[index], (table,), "embedding_lookup", grad_fn)


# ---------------------------------------------------------------------------
# Reverse mode
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Tensors reachable from a root, inputs before outputs."""

    order: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            tensor, expanded = stack_.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack_.append((tensor, True))
            if tensor._node is not None:
                for parent in reversed(tensor._node.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack_.append((parent, False))
        return cls(order=order)

    def replay(self, seed: np.ndarray) -> None:
        if not self.order:
            return
        grads: dict[int, np.ndarray] = {id(self.order[-1]): seed}
        for tensor in reversed(self.order):
            g = grads.get(id(tensor))
            if g is None or tensor._node is None:
                continue
            parent_grads = tensor._node.backward(g)
            for parent, pg in zip(tensor._node.inputs, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.array(pg, dtype=np.float64).reshape(parent.shape)
        for tensor in self.order:
            g = grads.get(id(tensor))
            if g is None:
                continue
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


def backward(root: Tensor) -> None:
    if root.size != 1:
        raise ContractError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    Tape.record(root).replay(np.ones(root.shape))
