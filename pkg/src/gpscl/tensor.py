"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every value is a float64 matrix. Operations on tensors that require
gradients record their parents and a backward rule; :func:`backward`
walks the recorded graph in reverse topological order.

Broadcasting is limited to size-1 rows/columns (row bias vectors,
column gates and 1x1 scalars).
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, StateError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "grad",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "relu",
    "tanh",
    "exp",
    "log",
    "row_softmax",
    "row_sum",
    "col_sum",
    "sum_all",
    "mean_all",
    "l2_norm_rows",
    "normalize_rows",
    "cosine_sim",
    "cosine_matrix",
    "concat_rows",
    "index_rows",
    "scale",
    "add_scalar",
    "finite_diff_grad",
    "max_relative_error",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a finite sum proves every entry finite; only fall back on overflow or nan
    if not math.isfinite(np.add.reduce(arr, axis=None)) and not np.isfinite(arr).all():
        raise NumericError(f"{what} produced non-finite values")


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


class Tensor:
    """A float64 matrix, optionally tracked for differentiation.

    ``grad`` is a zero-initialised buffer of the same shape whenever
    ``requires_grad`` is set, and ``None`` otherwise.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_matrix(data)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, rule) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out._consumed = False
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out.grad = np.zeros_like(data)
            out._parents = tuple(parents)
            out._backward = rule
        else:
            out.grad = None
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data.tolist()}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, int]:
    if a.data.shape == b.data.shape:
        return a.data.shape
    out = []
    for x, y in zip(a.shape, b.shape):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# -- elementwise binary ops ---------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return Tensor._result(a.data + b.data, (a, b), "add", rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return Tensor._result(a.data - b.data, (a, b), "sub", rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a column vector or 1x1 operand scales whole rows."""
    _broadcast_shape(a, b, "mul")

    def rule(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return Tensor._result(a.data * b.data, (a, b), "mul", rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "div")
    if (b.data == 0).any():
        raise NumericError("div: division by zero")
    out = a.data / b.data

    def rule(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return Tensor._result(out, (a, b), "div", rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def rule(g):
        _accumulate(a, g * c)

    return Tensor._result(a.data * c, (a,), "scale", rule)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def rule(g):
        _accumulate(a, g)

    return Tensor._result(a.data + float(c), (a,), "add_scalar", rule)


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def rule(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), "matmul", rule)


def transpose(a: Tensor) -> Tensor:
    def rule(g):
        _accumulate(a, g.T)

    return Tensor._result(a.data.T.copy(), (a,), "transpose", rule)


# -- elementwise unary ops ------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def rule(g):
        _accumulate(a, g * mask)

    return Tensor._result(a.data * mask, (a,), "relu", rule)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def rule(g):
        _accumulate(a, g * (1.0 - out * out))

    return Tensor._result(out, (a,), "tanh", rule)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def rule(g):
        _accumulate(a, g * out)

    return Tensor._result(out, (a,), "exp", rule)


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NumericError("log: non-positive argument")

    def rule(g):
        _accumulate(a, g / a.data)

    return Tensor._result(np.log(a.data), (a,), "log", rule)


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accumulate(a, out * (g - inner))

    return Tensor._result(out, (a,), "row_softmax", rule)


# -- reductions -----------------------------------------------------------


def row_sum(a: Tensor) -> Tensor:
    """Sum across columns: n x d -> n x 1."""

    def rule(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return Tensor._result(a.data.sum(axis=1, keepdims=True), (a,), "row_sum", rule)


def col_sum(a: Tensor) -> Tensor:
    """Sum across rows: n x d -> 1 x d."""

    def rule(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return Tensor._result(a.data.sum(axis=0, keepdims=True), (a,), "col_sum", rule)


def sum_all(a: Tensor) -> Tensor:
    def rule(g):
        _accumulate(a, np.full(a.shape, g[0, 0]))

    return Tensor._result(np.array([[a.data.sum()]]), (a,), "sum_all", rule)


def mean_all(a: Tensor) -> Tensor:
    size = a.data.size

    def rule(g):
        _accumulate(a, np.full(a.shape, g[0, 0] / size))

    return Tensor._result(np.array([[a.data.mean()]]), (a,), "mean_all", rule)


def l2_norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of each row: n x d -> n x 1. Zero rows are an error."""
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise NumericError("l2_norm_rows: zero-norm row")

    def rule(g):
        _accumulate(a, g * a.data / norms)

    return Tensor._result(norms, (a,), "l2_norm_rows", rule)


def normalize_rows(a: Tensor) -> Tensor:
    return div(a, l2_norm_rows(a))


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of matching rows: (n x d, n x d) -> n x 1."""
    if a.shape != b.shape:
        raise DimensionError(f"cosine_sim: {a.shape} vs {b.shape}")
    return row_sum(mul(normalize_rows(a), normalize_rows(b)))


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities: (n x d, m x d) -> n x m."""
    if a.cols != b.cols:
        raise DimensionError(f"cosine_matrix: {a.shape} vs {b.shape}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


# -- structural -----------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def rule(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(p, g[lo:hi])

    return Tensor._result(np.vstack([p.data for p in parts]), parts, "concat_rows", rule)


def index_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise DimensionError("index_rows: empty index")
    if idx.min() < 0 or idx.max() >= a.rows:
        raise DimensionError(f"index_rows: index out of range for {a.rows} rows")

    def rule(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return Tensor._result(a.data[idx], (a,), "index_rows", rule)


# -- backward pass ----------------------------------------------------------


class Tape:
    """Recorded operations reachable from a loss, in topological order."""

    def __init__(self, loss: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._consumed:
                raise StateError("backward already ran through this graph; pass retain_graph=True")
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order

    @property
    def ops(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.is_leaf]

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def backward(loss: Tensor, retain_graph: bool = False) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar loss, got {loss.shape}")
    if not loss.requires_grad or loss.is_leaf:
        raise StateError("loss has no recorded operations")
    tape = Tape(loss)
    ops = tape.ops
    for node in ops:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones((1, 1))
    for node in reversed(ops):
        node._backward(node.grad)
    for leaf in tape.leaves:
        _check_finite(leaf.grad, "backward")
    if not retain_graph:
        for node in ops:
            node._consumed = True
    return tape


def grad(loss: Tensor, wrt: Iterable[Tensor], retain_graph: bool = False) -> list[np.ndarray]:
    """Return d(loss)/d(t) for each t in ``wrt`` without disturbing existing accumulations."""
    wrt = list(wrt)
    saved = [t.grad for t in wrt]
    for t in wrt:
        t.zero_grad()
    try:
        backward(loss, retain_graph=retain_graph)
        return [t.grad.copy() for t in wrt]
    finally:
        for t, g in zip(wrt, saved):
            t.grad = g


# -- finite-difference oracle -------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of the scalar ``f`` with respect to ``x``.

    ``x.data`` is perturbed in place one entry at a time and restored.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def value() -> float:
        with no_grad():
            out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    data = x.data
    if not data.flags.writeable:
        data = data.copy()
        x.data = data
    est = np.zeros_like(data)
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            orig = data[i, j]
            data[i, j] = orig + h
            fp = value()
            data[i, j] = orig - h
            fm = value()
            data[i, j] = orig
            est[i, j] = (fp - fm) / (2 * h)
    return Tensor(est)


def max_relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
