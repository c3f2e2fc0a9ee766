"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive records its operands and a local backward rule on the
result tensor.  ``backward`` walks the recorded graph in reverse
topological order (a :class:`GradientTape`) and accumulates gradients
into every leaf marked ``requires_grad``.

Broadcasting is deliberately limited to two cases so each backward rule
stays auditable: a scalar operand, or a 1-D row vector whose length
matches the last axis of the other operand (bias addition).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(dim < 1 for dim in arr.shape):
            raise ValueError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    out._op = op
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# --------------------------------------------------------------------------
# broadcasting helpers


def _broadcast_kind(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1 and b.ndim <= 1:
        return "b_scalar"
    if a.size == 1 and a.ndim <= 1:
        return "a_scalar"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "b_row"
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return "a_row"
    raise ValueError(f"incompatible shapes {a.shape} and {b.shape}: only scalar or row-vector broadcasting")


def _reduce_to(g: np.ndarray, kind: str, which: str, shape) -> np.ndarray:
    if kind == "same":
        return g
    if kind == f"{which}_scalar":
        return np.full(shape, g.sum())
    if kind == f"{which}_row":
        return g.reshape(-1, shape[0]).sum(axis=0)
    return g


# --------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, kind, "a", a.shape), _reduce_to(g, kind, "b", b.shape)

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    out = a.data - b.data

    def backward(g):
        return _reduce_to(g, kind, "a", a.shape), _reduce_to(-g, kind, "b", b.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    out = a.data * b.data

    def backward(g):
        return (
            _reduce_to(g * b.data, kind, "a", a.shape),
            _reduce_to(g * a.data, kind, "b", b.shape),
        )

    return _make(out, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a non-differentiable python constant."""
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(x.data * c, (x,), backward, "scale")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    v = x.data
    inner = GELU_C * (v + GELU_K * v * v * v)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        return (g * _gelu_grad(v, t),)

    return _make(out, (x,), backward, "gelu")


def _gelu_grad(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    dinner = GELU_C * (1.0 + 3.0 * GELU_K * v * v)
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), backward, "tanh")


# --------------------------------------------------------------------------
# shape primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` either shares them or is a
    plain 2-D matrix applied to every batch element.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    shared_b = b.ndim == 2 and a.ndim > 2
    if not shared_b and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if shared_b:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), backward, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def backward(g):
        return (g.reshape(original),)

    return _make(x.data.reshape(tuple(shape)), (x,), backward, "reshape")


def getitem(x: Tensor, key) -> Tensor:
    out = np.array(x.data[key], dtype=np.float64)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(x.shape, float(np.asarray(g).reshape(-1)[0])),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward, "sum")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; backward scatters into the looked-up rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)][0])
        raise IndexError(f"embedding index {bad} out of range for table with {vocab} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(out, (table,), backward, "embedding_lookup")


# --------------------------------------------------------------------------
# normalisation primitives


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax.  Entries equal to -inf map to exactly 0."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma * xhat + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits."""
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    z = logits.data
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        return (g * (sigmoid_np(z) - y) / n,)

    return _make(np.asarray(losses.mean()), (logits,), backward, "bce_with_logits")


def sigmoid_np(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# --------------------------------------------------------------------------
# reverse pass


class GradientTape:
    """Recorded operations in topological order (operands before results)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "GradientTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def run(self, output: Tensor, seed: np.ndarray) -> dict[Tensor, np.ndarray]:
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if not node.is_leaf else grads.get(id(node))
            if g is None or node.is_leaf:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        result: dict[Tensor, np.ndarray] = {}
        for leaf in self.leaves():
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            g = g.reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            result[leaf] = g
        return result


def backward(output: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar ``output`` for every reachable leaf."""
    if output.data.size != 1:
        raise ValueError(f"backward() needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ValueError("output is not connected to any leaf that requires grad")
    tape = GradientTape.from_output(output)
    return tape.run(output, np.ones_like(output.data))


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# --------------------------------------------------------------------------
# verification


def numerical_grad(f: Callable[[Tensor], Tensor], x: Tensor, index, step: float = 1e-5) -> float:
    """Central difference of ``f`` along one coordinate of ``x`` (restored afterwards)."""
    original = x.data[index]
    try:
        x.data[index] = original + step
        fp = float(f(x).data.reshape(-1)[0])
        x.data[index] = original - step
        fm = float(f(x).data.reshape(-1)[0])
    finally:
        x.data[index] = original
    return (fp - fm) / (2.0 * step)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor absorbs finite-difference noise on ~0 gradients."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    indices: Iterable | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between ``backward`` and central differences.

    Checks every coordinate of ``x`` unless ``indices`` restricts the set.
    """
    was = x.requires_grad
    x.requires_grad = True
    try:
        x.grad = None
        out = f(x)
        analytic = backward(out).get(x) if out.requires_grad else None
        if analytic is None:
            analytic = np.zeros_like(x.data)
        if indices is None:
            indices = np.ndindex(*x.shape)
        worst = 0.0
        for idx in indices:
            num = numerical_grad(f, x, idx, step)
            worst = max(worst, relative_error(float(analytic[idx]), num, floor))
        return worst
    finally:
        x.requires_grad = was
        x.grad = None
