"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every value flowing through the models is a :class:`Tensor`. Operations
record their inputs and a backward closure on the output tensor; calling
:func:`backward` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients into ``.grad`` buffers.

Graphs are built define-by-run, so recurrent models simply unroll. A graph
and its tensors belong to one thread; separate model instances on separate
threads do not share state (the grad-enabled switch is thread-local).
"""

from __future__ import annotations

import threading

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (for eval/decoding)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional array of float64 with an optional gradient buffer.

    ``grad`` is lazily allocated and accumulates across backward calls until
    :meth:`zero_grad` is called, so one parameter may collect gradient from
    several paths (or several losses).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Constant view of this tensor (shares storage, no history)."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Build an op result; history is kept only when a parent needs grad."""
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Graph:
    """Topologically ordered record of the ops reachable from a root tensor.

    Every operand precedes its result; a backward traversal visits each
    node exactly once (iterative, so deep recurrent unrollings are safe).
    """

    def __init__(self, root: Tensor):
        self.root = root
        order = []
        scheduled = {root}
        stack = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                order.append(node)
                continue
            stack.append((node, True))
            for parent in node._parents:
                if parent not in scheduled:
                    scheduled.add(parent)
                    stack.append((parent, False))
        self.nodes = order  # parents before results

    def run_backward(self) -> None:
        # op results get fresh grad buffers; leaves keep accumulating
        for node in self.nodes:
            if node._parents:
                node.grad = None
        root = self.root
        if root.grad is None:
            root.grad = np.zeros_like(root.data)
        root.grad += np.ones_like(root.data)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every reachable requires_grad tensor."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    Graph(loss).run_backward()


# ---------------------------------------------------------------------------
# elementwise arithmetic (with numpy broadcasting)

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors; dA = g·Bᵀ, dB = Aᵀ·g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), bwd)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b.T`` without materializing the transpose (hot-path helper)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_nt shape mismatch: {a.shape} x {b.shape}^T")
    data = a.data @ b.data.T

    def bwd(g):
        _accumulate(a, g @ b.data)
        _accumulate(b, g.T @ a.data)

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")

    def bwd(g):
        _accumulate(a, g.T)

    return _make(a.data.T.copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign to avoid overflowing exp
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity, kind in {"tanh", "sigmoid"}."""
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation kind: {kind!r}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along ``axis``; rows sum to 1."""
    if a.size == 0 or a.shape[axis] == 0:
        raise ValueError(f"softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        # dL/dx = y * (g - sum(g*y))
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape plumbing

def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.ndim != b.ndim:
        raise ValueError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    for ax in range(a.ndim):
        if ax != (axis % a.ndim) and a.shape[ax] != b.shape[ax]:
            raise ValueError(f"concat shape mismatch on axis {ax}: {a.shape} vs {b.shape}")
    return concat_many([a, b], axis=axis)


def concat_many(tensors, axis: int = 0) -> Tensor:
    """Concatenate a list of tensors along ``axis`` in one node."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_many needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    axis = axis % tensors[0].ndim
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _make(data, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ValueError(
            f"narrow [{start}:{start + length}) out of bounds for axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index].copy()

    def bwd(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[index] += g

    return _make(data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Rows ``table[ids[i]]``; backward scatter-adds (repeated ids accumulate)."""
    if table.ndim != 2:
        raise ValueError(f"gather_rows expects a matrix table, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = idx[(idx < 0) | (idx >= vocab)][0]
        raise IndexError(f"row id {bad} out of range for table with {vocab} rows")
    data = table.data[idx]

    def bwd(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(data, (table,), bwd)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.full(a.shape, float(g)))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# loss

def cross_entropy(scores: Tensor, gold) -> Tensor:
    """Negative log-likelihood of ``gold`` under softmax(scores).

    Fused with log-softmax for stability: the softmax is never materialized
    in the loss path. ``scores`` may be a single score vector with an int
    gold index, or a matrix of per-row scores with a vector of gold indices
    (one loss per row).
    """
    if scores.ndim == 1:
        row_scores = scores.data[None, :]
        golds = np.asarray([gold], dtype=np.int64)
        single = True
    elif scores.ndim == 2:
        row_scores = scores.data
        golds = np.asarray(gold, dtype=np.int64).reshape(-1)
        if golds.shape[0] != row_scores.shape[0]:
            raise ValueError(
                f"need one gold index per row: {golds.shape[0]} golds, {row_scores.shape[0]} rows")
        single = False
    else:
        raise ValueError(f"cross_entropy expects a vector or matrix, got shape {scores.shape}")
    n = row_scores.shape[1]
    if golds.size and (golds.min() < 0 or golds.max() >= n):
        bad = golds[(golds < 0) | (golds >= n)][0]
        raise IndexError(f"gold index {bad} out of range for {n} classes")

    shifted = row_scores - row_scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logz
    rows = np.arange(row_scores.shape[0])
    losses = -log_probs[rows, golds]
    data = losses[0] if single else losses

    def bwd(g):
        # d/dscores = softmax(scores) - one_hot(gold), per row
        soft = np.exp(log_probs)
        soft[rows, golds] -= 1.0
        gg = np.asarray(g, dtype=np.float64).reshape(-1, 1)
        full = soft * gg
        _accumulate(scores, full[0] if single else full)

    return _make(data, (scores,), bwd)


# ---------------------------------------------------------------------------
# gradient utilities

def clip_global_norm(tensors, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. Tensors without a grad buffer count as zero.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return norm
