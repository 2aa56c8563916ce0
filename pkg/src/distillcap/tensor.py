"""Minimal dense tensors with reverse-mode differentiation, Adam, and checkpoints.

Every op builds a node holding its parents and a closure mapping the output
gradient to one gradient per parent. ``backward`` walks the graph in reverse
topological order and accumulates into the ``grad`` buffers of leaves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySequenceError,
    FormatError,
    NonFiniteError,
    ShapeError,
    TruncatedFileError,
)

DTYPE = np.float64


class Tensor:
    """A float64 array that may participate in a differentiation graph.

    Leaves created with ``requires_grad=True`` own a ``grad`` buffer of the
    same shape. Intermediate results never hold one; their gradients only
    live transiently inside :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) else data.astype(DTYPE, copy=False)
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.grad = np.zeros_like(self.data) if (self.requires_grad and backward_fn is None) else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape [M, K] or [K] and ``b`` of shape [K, N]."""
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ bd.T
        gb = np.outer(ad, g) if ad.ndim == 1 else ad.T @ g
        return ga, gb

    return _node(ad @ bd, (a, b), grad_fn, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may also be a bias vector matching ``a``'s last axis."""
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim == 2 and a.shape[1] == b.shape[0]:
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add")
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def one_minus(a: Tensor) -> Tensor:
    return _node(1.0 - a.data, (a,), lambda g: (-g,), "one_minus")


def sigmoid(a: Tensor) -> Tensor:
    # exp(-log(1 + exp(-x))) never overflows
    out = np.exp(-np.logaddexp(0.0, -a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_over_time(seq: Tensor) -> Tensor:
    """Average a [T, D] sequence over its first axis."""
    if seq.ndim != 2:
        raise ShapeError(f"mean_over_time expects [T, D], got {seq.shape}")
    t = seq.shape[0]
    if t == 0:
        raise EmptySequenceError("mean_over_time of an empty sequence")
    shape = seq.shape
    return _node(seq.data.sum(axis=0) / t, (seq,), lambda g: (np.broadcast_to(g / t, shape).copy(),), "mean_over_time")


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"concat expects rank-1 inputs, got {a.shape} and {b.shape}")
    n = a.shape[0]
    return _node(np.concatenate([a.data, b.data]), (a, b), lambda g: (g[:n], g[n:]), "concat")


def embedding(weight: Tensor, index) -> Tensor:
    """Row lookup. An int gives a [H] vector; an int array gives [B, H]."""
    idx = np.asarray(index)
    vocab = weight.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(f"token index out of range for vocabulary of {vocab}")
    shape = weight.shape

    def grad_fn(g):
        gw = np.zeros(shape)
        np.add.at(gw, idx, g)
        return (gw,)

    return _node(weight.data[idx], (weight,), grad_fn, "embedding")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log-probability of ``target`` under softmax(logits) for a [V] vector."""
    if logits.ndim != 1:
        raise ShapeError(f"softmax_cross_entropy expects [V], got {logits.shape}")
    v = logits.shape[0]
    if not 0 <= int(target) < v:
        raise IndexError(f"target {target} out of range for {v} classes")
    logp = _log_softmax(logits.data)

    def grad_fn(g):
        d = np.exp(logp)
        d[target] -= 1.0
        return (g * d,)

    return _node(np.array(-logp[target]), (logits,), grad_fn, "softmax_cross_entropy")


def weighted_cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """``sum_i w_i * CE(logits[i], targets[i])`` over a [B, V] batch.

    Rows with zero weight (padding) contribute nothing to value or gradient.
    """
    if logits.ndim != 2:
        raise ShapeError(f"weighted_cross_entropy expects [B, V], got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(weights, dtype=DTYPE)
    b, v = logits.shape
    if targets.shape != (b,) or w.shape != (b,):
        raise ShapeError("targets and weights must have one entry per row")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError("target out of range")
    logp = _log_softmax(logits.data)
    rows = np.arange(b)
    value = -(w * logp[rows, targets]).sum()

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (g * w[:, None] * d,)

    return _node(np.array(value), (logits,), grad_fn, "weighted_cross_entropy")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error. The target is treated as a constant."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if pred.shape != t.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size
    # np.sign gives the 0 subgradient at the kink
    return _node(np.array(np.abs(diff).sum() / n), (pred,), lambda g: (g * np.sign(diff) / n,), "l1_loss")


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, {n: p.grad for n, p in self.params.items()}, self.state)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian): b"DCKP", u16 version, u32 count, then per parameter
# u16 name length, UTF-8 name, u8 rank, rank x u64 dims, float64 values.

CKPT_MAGIC = b"DCKP"
CKPT_VERSION = 1


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    chunks = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"file truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, count = r.unpack("<HI")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}Q")
        n = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(DTYPE)
    if r.pos != len(r.buf):
        raise DimensionMismatchError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last parameter")
    return out


def to_parameters(arrays: Mapping[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
    return {name[len(prefix):]: parameter(a) for name, a in arrays.items() if name.startswith(prefix)}


def prefixed(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {prefix + k: v for k, v in params.items()}


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
