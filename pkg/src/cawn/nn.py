"""A small tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them; :meth:`Tensor.backward` runs those closures in
reverse topological order. Only the operations the walk encoder needs are
provided, with numpy broadcasting handled by summing gradients back down
to the operand shapes.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, name: str = "", _parents=(), _backward=None):
        values = np.asarray(values)
        self.values = values if values.dtype.kind == "f" else values.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.values.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.values.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior grads are dead once propagated
                node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(values)
    return Tensor(values, True, "", tuple(parents), backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.values + b.values, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.values - b.values, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), back)


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of rank >= 2 and ``b`` of rank 2 or matching batch rank."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                b._accumulate(a.values.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _result(a.values @ b.values, (a, b), back)


def affine(x, W, b) -> Tensor:
    """``x @ W + b``; ``W`` is ``(in, out)``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"affine: input {x.shape} does not match weight {W.shape}")
    if b.shape[-1] != W.shape[1]:
        raise ValueError(f"affine: bias {b.shape} does not match weight {W.shape}")
    return add(matmul(x, W), b)


def _unary(x, f, df) -> Tensor:
    x = as_tensor(x)
    out = f(x.values)

    def back(g):
        x._accumulate(g * df(x.values, out))

    return _result(out, (x,), back)


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(v.dtype))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    return _unary(x, _sigmoid, lambda v, o: o * (1.0 - o))


def cos(x) -> Tensor:
    return _unary(x, np.cos, lambda v, o: -np.sin(v))


def sin(x) -> Tensor:
    return _unary(x, np.sin, lambda v, o: np.cos(v))


def softplus(x) -> Tensor:
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda v, o: _sigmoid(v))


def identity(x) -> Tensor:
    return as_tensor(x)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(out), (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.values.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def add_n(xs: Sequence) -> Tensor:
    """Elementwise sum of equally shaped tensors."""
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("add_n needs at least one operand")
    out = xs[0]
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ValueError(f"add_n: shape {x.shape} differs from {out.shape}")
        out = add(out, x)
    return out


def mean_n(xs: Sequence) -> Tensor:
    return mul(add_n(xs), 1.0 / len(xs))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def back(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.values.reshape(shape), (x,), back)


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)

    def back(g):
        x._accumulate(np.swapaxes(g, a1, a2))

    return _result(np.swapaxes(x.values, a1, a2), (x,), back)


def take(x, index, axis: int) -> Tensor:
    """Integer index along one axis (the axis is dropped)."""
    x = as_tensor(x)
    out = np.take(x.values, index, axis=axis)

    def back(g):
        full = np.zeros_like(x.values)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        x._accumulate(full)

    return _result(out, (x,), back)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(
            r != o for i, (r, o) in enumerate(zip(ref, other)) if i != axis % len(ref)
        ):
            raise ValueError(f"concat: shape {x.shape} incompatible with {xs[0].shape} on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    out = np.concatenate([x.values for x in xs], axis=axis)

    def back(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for x, piece in zip(xs, pieces):
            if x.requires_grad:
                x._accumulate(piece)

    return _result(out, xs, back)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), back)


def dropout(x, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross entropy of ``sigmoid(logits)`` against 0/1 labels."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    return mean(sub(softplus(logits), mul(logits, Tensor(y))))


def gru_cell(x, h, w: dict) -> Tensor:
    """Gated recurrent update.

    ``w`` holds ``W_z, U_z, b_z`` (update gate), ``W_r, U_r, b_r`` (reset
    gate) and ``W_n, U_n, b_n`` (candidate). Returns
    ``(1 - z) * n + z * h``.
    """
    z = sigmoid(add(affine(x, w["W_z"], w["b_z"]), matmul(h, w["U_z"])))
    r = sigmoid(add(affine(x, w["W_r"], w["b_r"]), matmul(h, w["U_r"])))
    n = tanh(add(affine(x, w["W_n"], w["b_n"]), mul(r, matmul(h, w["U_n"]))))
    return add(mul(sub(1.0, z), n), mul(z, h))


def tanh_cell(x, h, w: dict) -> Tensor:
    """Plain recurrent update ``tanh(x W + h U + b)``."""
    return tanh(add(affine(x, w["W_n"], w["b_n"]), matmul(h, w["U_n"])))


# parameters and optimisation


class Parameters(dict):
    """Named trainable tensors plus Adam moment buffers."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        self[name] = t
        self.adam_m[name] = np.zeros_like(t.values)
        self.adam_v[name] = np.zeros_like(t.values)
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self[k].values = v.copy()

    def size(self) -> int:
        return int(np.sum([t.values.size for t in self.values()]))


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def adam_step(params: Parameters, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    params.step += 1
    c1 = 1.0 - beta1**params.step
    c2 = 1.0 - beta2**params.step
    for name, t in params.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.values)
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.values = t.values - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        t.grad = None


# checkpoints: npz with explicit little-endian float64 payloads and a JSON header

_HEADER = "__header__"


def save_checkpoint(path, params: Parameters, header: dict) -> None:
    arrays = {name: t.values.astype("<f8") for name, t in params.items()}
    meta = dict(header)
    meta["parameters"] = {name: list(a.shape) for name, a in arrays.items()}
    arrays[_HEADER] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data[_HEADER]).decode())
        arrays = {k: data[k].astype(np.float64) for k in data.files if k != _HEADER}
    for name, shape in header.get("parameters", {}).items():
        if list(arrays[name].shape) != shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape {arrays[name].shape}, header says {shape}")
    return header, arrays


def parameters_from(arrays: dict[str, np.ndarray]) -> Parameters:
    params = Parameters()
    for name, a in arrays.items():
        params.add(name, a)
    return params


def iter_grads(params: Parameters) -> Iterable[tuple[str, np.ndarray]]:
    for name, t in params.items():
        yield name, (np.zeros_like(t.values) if t.grad is None else t.grad)
