"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays. A tensor created through ``Tape.watch``
carries a handle into that tape; every op that receives at least one taped
input records itself on the same tape. Tensors with no tape are constants.

    with Tape() as tape:
        w = tape.watch(weights)
        loss = mean(matmul(x, w))
    tape.backward(loss)
    tape.grad(w)

There is no global "current tape": recording is driven by the inputs, so
untaped tensors can move freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_RANK = 3
NORM_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class DegenerateRowError(ValueError):
    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has norm {norm:.3e}, cannot normalize")
        self.row = row


class NonFiniteError(ValueError):
    """NaN or infinity reached an op that cannot handle it."""


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds supported rank {MAX_RANK}")
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        taped = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{taped})"


@dataclass
class _Record:
    kind: str
    inputs: tuple[int | None, ...]
    shape: tuple[int, ...]
    # maps upstream gradient -> one gradient (or None) per input
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None


@dataclass
class Tape:
    """Ordered record of operations; append-only while the scope is open."""

    records: list[_Record] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    _open: bool = False

    def __enter__(self) -> "Tape":
        self._open = True
        return self

    def __exit__(self, *exc) -> None:
        self._open = False

    @property
    def is_open(self) -> bool:
        return self._open

    def watch(self, value) -> Tensor:
        """Register a leaf whose gradient will be tracked."""
        self._check_open()
        arr = value.data if isinstance(value, Tensor) else value
        arr = np.array(arr, dtype=np.float64)
        self.records.append(_Record("leaf", (), arr.shape))
        return Tensor(arr, self, len(self.records) - 1)

    def _check_open(self) -> None:
        if not self._open:
            raise TapeError("tape scope is closed; open it with `with tape:`")

    def _record(self, kind, value, inputs, backward) -> Tensor:
        self._check_open()
        ids = tuple(t.node if isinstance(t, Tensor) and t.tape is self else None for t in inputs)
        self.records.append(_Record(kind, ids, value.shape, backward))
        return Tensor(value, self, len(self.records) - 1)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        for idx in range(loss.node, -1, -1):
            g = grads.get(idx)
            rec = self.records[idx]
            if g is None or rec.backward is None:
                continue
            for parent, pg in zip(rec.inputs, rec.backward(g)):
                if parent is None or pg is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + pg
                else:
                    grads[parent] = pg
        for idx, rec in enumerate(self.records):
            if rec.kind == "leaf" and idx not in grads:
                grads[idx] = np.zeros(rec.shape)
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        if t.tape is not self:
            raise TapeError("tensor is not on this tape")
        try:
            return self.grads[t.node]
        except KeyError:
            raise TapeError(f"no gradient for node {t.node}; run backward first") from None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("inputs belong to different tapes")
    return tape


def _emit(kind, value, inputs, backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape._record(kind, value, inputs, backward)


def _need2d(t: Tensor, what: str) -> None:
    if t.data.ndim != 2:
        raise DimensionError(f"{what} expects a 2-d tensor, got shape {t.shape}")


# ---------------------------------------------------------------- linear ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _need2d(a, "matmul")
    _need2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def add_row(a, bias) -> Tensor:
    """Add a length-n bias vector to every row of an m x n matrix."""
    a, bias = as_tensor(a), as_tensor(bias)
    _need2d(a, "add_row")
    if bias.data.ndim != 1 or bias.shape[0] != a.shape[1]:
        raise DimensionError(f"add_row bias {bias.shape} does not fit {a.shape}")
    return _emit("add_row", a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)))


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"subtract shape mismatch: {a.shape} vs {b.shape}")
    return _emit("subtract", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"multiply shape mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _emit("multiply", A * B, (a, b), lambda g: (g * B, g * A))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    _need2d(a, "transpose")
    return _emit("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _emit("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def gather_rows(table, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of ``table`` at ``ids`` (repeats allowed)."""
    table = as_tensor(table)
    _need2d(table, "gather_rows")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a flat id list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("gather_rows", table.data[idx], (table,), back)


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    for p in parts:
        _need2d(p, "concat_rows")
        if p.shape[1] != parts[0].shape[1]:
            raise DimensionError(f"concat_rows width mismatch: {parts[0].shape} vs {p.shape}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_rows", np.concatenate([p.data for p in parts], axis=0), parts, back)


# ------------------------------------------------------------ row-wise ops

def l2_normalize_rows(a) -> Tensor:
    a = as_tensor(a)
    _need2d(a, "l2_normalize_rows")
    X = a.data
    norms = np.sqrt((X * X).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norms[:, 0] <= NORM_FLOOR)
    if bad.size:
        raise DegenerateRowError(int(bad[0]), float(norms[bad[0], 0]))
    Y = X / norms

    def back(g):
        # d(x/|x|) = (g - y <y, g>) / |x|
        return ((g - Y * (g * Y).sum(axis=1, keepdims=True)) / norms,)

    return _emit("l2_normalize_rows", Y, (a,), back)


def _check_finite(X: np.ndarray, what: str) -> None:
    if not np.isfinite(X).all():
        raise NonFiniteError(f"{what}: non-finite input")


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    _need2d(a, "log_softmax_rows")
    X = a.data
    _check_finite(X, "log_softmax_rows")
    shifted = X - X.max(axis=1, keepdims=True)
    Y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    P = np.exp(Y)
    return _emit("log_softmax_rows", Y, (a,), lambda g: (g - P * g.sum(axis=1, keepdims=True),))


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    _need2d(a, "softmax_rows")
    X = a.data
    _check_finite(X, "softmax_rows")
    E = np.exp(X - X.max(axis=1, keepdims=True))
    P = E / E.sum(axis=1, keepdims=True)
    return _emit("softmax_rows", P, (a,), lambda g: (P * (g - (g * P).sum(axis=1, keepdims=True)),))


def cross_entropy_rows(logits, targets: Sequence[int]) -> Tensor:
    """Mean over rows of -log_softmax(logits)[row, target]."""
    logits = as_tensor(logits)
    _need2d(logits, "cross_entropy_rows")
    m, n = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (m,):
        raise DimensionError(f"expected {m} targets, got {t.shape[0] if t.ndim else 'scalar'}")
    if m and (t.min() < 0 or t.max() >= n):
        raise IndexError(f"target index out of range for {n} classes")
    X = logits.data
    _check_finite(X, "cross_entropy_rows")
    shifted = X - X.max(axis=1, keepdims=True)
    L = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(m)
    value = np.array(-L[rows, t].sum() / m)
    P = np.exp(L)

    def back(g):
        d = P.copy()
        d[rows, t] -= 1.0
        return (d * (float(g) / m),)

    return _emit("cross_entropy_rows", value, (logits,), back)
