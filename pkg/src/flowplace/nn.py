"""Minimal dense tensors with reverse-mode automatic differentiation.

Tensors are 2-D float64 arrays. Ops record parent references and a backprop
closure; backward() walks the recorded graph in reverse topological order,
visiting each node exactly once and accumulating leaf gradients additively.
Everything is double precision so finite-difference checks stay tight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bp")

    def __init__(self, data, requires_grad: bool = False, parents=(), bp=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensor; only rank <= 2 supported")
        self.data = np.atleast_2d(arr)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._bp = bp

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot reduce gradient {grad.shape} to {shape}")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))
    out._bp = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add mismatch: {a.shape} + {b.shape}")
    out = Tensor(data, parents=(a, b))
    out._bp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul mismatch: {a.shape} * {b.shape}")
    out = Tensor(data, parents=(a, b))
    out._bp = lambda g: (_unbroadcast(g * b.data, a.shape),
                         _unbroadcast(g * a.data, b.shape))
    return out


def scalar_mul(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, parents=(a,))
    out._bp = lambda g: (g * c,)
    return out


def scalar_add(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c, parents=(a,))
    out._bp = lambda g: (g,)
    return out


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError(f"concat axis must be 0 or 1, got {axis}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = Tensor(data, parents=tuple(parts))
    out._bp = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def row_gather(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    out = Tensor(a.data[idx], parents=(a,))

    def bp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    out._bp = bp
    return out


def repeat_rows(a: Tensor, k: int) -> Tensor:
    if a.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects a single row, got {a.shape}")
    out = Tensor(np.repeat(a.data, k, axis=0), parents=(a,))
    out._bp = lambda g: (g.sum(axis=0, keepdims=True),)
    return out


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    """Sum rows of a by segment id: out[s] = sum of rows i with segments[i] == s.

    Segments without rows produce zero rows.
    """
    seg = np.asarray(segments, dtype=np.intp).reshape(-1)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError(f"segment ids {seg.shape[0]} != rows {a.shape[0]}")
    data = np.zeros((num_segments, a.shape[1]))
    np.add.at(data, seg, a.data)
    out = Tensor(data, parents=(a,))
    out._bp = lambda g: (g[seg],)
    return out


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, slope * a.data), parents=(a,))
    out._bp = lambda g: (g * np.where(mask, 1.0, slope),)
    return out


def softmax_row(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s, parents=(a,))
    out._bp = lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,))
    out._bp = lambda g: (g / a.data,)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor([[a.data.sum()]], parents=(a,))
    out._bp = lambda g: (np.full_like(a.data, g.reshape(-1)[0]),)
    return out


def reshape(a: Tensor, shape: tuple[int, int]) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,))
    out._bp = lambda g: (g.reshape(a.shape),)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into .grad over the recorded graph.

    Gradients add up across calls; zero them between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._bp is None:
            continue
        parent_grads = node._bp(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


Params = dict[str, Tensor]


def zero_grad(params: Params) -> None:
    for t in params.values():
        t.grad = None


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    a = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-a, a, size=(rows, cols)), requires_grad=True)


def zeros_param(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True)


@dataclass
class LinearSchedule:
    """v0 at step 0, v1 at step `total`, linear in between, clamped after."""

    v0: float
    v1: float
    total: int

    def value(self, step: int) -> float:
        if self.total <= 0:
            return self.v1
        frac = min(max(step, 0), self.total) / self.total
        return self.v0 * (1.0 - frac) + self.v1 * frac


class Sgd:
    """Plain SGD over a schedule. step() descends on .grad; trainers that
    maximize an objective J backprop loss = -J, so the update is
    theta <- theta + lr * dJ/dtheta."""

    def __init__(self, schedule: LinearSchedule):
        self.schedule = schedule
        self.steps = 0

    def lr(self) -> float:
        return self.schedule.value(self.steps)

    def step(self, params: Params) -> float:
        lr = self.lr()
        for t in params.values():
            if t.requires_grad and t.grad is not None:
                t.data -= lr * t.grad
        self.steps += 1
        return lr


CHECKPOINT_VERSION = 1


def params_to_dict(params: Params) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "tensors": {
            name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.items())
        },
    }


def params_from_dict(doc: dict) -> Params:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    out: Params = {}
    for name, rec in doc["tensors"].items():
        shape = tuple(rec["shape"])
        data = np.asarray(rec["values"], dtype=np.float64).reshape(shape)
        out[name] = Tensor(data, requires_grad=True)
    return out


def save_params(params: Params, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)) + "\n")


def load_params(path: str | Path) -> Params:
    return params_from_dict(json.loads(Path(path).read_text()))
