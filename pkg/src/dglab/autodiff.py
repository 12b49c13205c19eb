"""Reverse-mode automatic differentiation over dense float64 tensors.

Every operation evaluates eagerly on numpy arrays and, while grad mode is
on, records its parents plus a vector-Jacobian closure on the output
tensor. ``backward`` on a scalar root replays the graph in reverse
topological order and returns a fresh :class:`GradMap`; no gradient state
survives between calls. Gradients from multiple consumers of the same
tensor accumulate additively.

Conventions: all values are float64; the ReLU derivative at exactly 0 is 0;
broadcasting is limited to bias-style row/column vectors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable lineage recording inside the block (inference-only passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """Dense float64 array with an optional gradient buffer and lineage.

    Tensors built directly from data are leaves. Tensors produced by an
    operation carry the producing op's name, its parent tensors and a
    closure mapping an output gradient to per-parent gradients.
    """

    __slots__ = ("values", "grad", "_op", "_parents", "_vjp")

    def __init__(
        self,
        values,
        op: str | None = None,
        parents: Sequence["Tensor"] = (),
        vjp: Callable[[Array], tuple[Array, ...]] | None = None,
    ):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None
        self._op = op
        self._parents = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def lineage(self) -> tuple[str, tuple["Tensor", ...]] | None:
        """(op name, parent tensors), or None for a leaf."""
        if self._op is None:
            return None
        return (self._op, self._parents)

    def is_leaf(self) -> bool:
        return self._op is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() requires a single value, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        tag = self._op or "leaf"
        return f"Tensor(shape={self.shape}, op={tag})"


def as_tensor(x) -> Tensor:
    """Wrap array-likes as leaf tensors; pass tensors through unchanged."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(values: Array, op: str, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _grad_enabled:
        return Tensor(values, op=op, parents=parents, vjp=vjp)
    return Tensor(values)


class GradMap:
    """Gradient buffers from one backward pass, keyed by tensor identity."""

    def __init__(self, entries: dict[int, tuple[Tensor, Array]]):
        for tensor, grad in entries.values():
            if grad.shape != tensor.values.shape:
                raise ContractError(
                    f"gradient shape {grad.shape} does not match tensor shape {tensor.shape}"
                )
        self._entries = entries

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._entries

    def __getitem__(self, tensor: Tensor) -> Array:
        try:
            return self._entries[id(tensor)][1]
        except KeyError:
            raise KeyError(f"no gradient recorded for {tensor!r}") from None

    def get(self, tensor: Tensor, default=None):
        entry = self._entries.get(id(tensor))
        return entry[1] if entry is not None else default

    def items(self):
        return ((tensor, grad) for tensor, grad in self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# operations


def affine(x, w, b) -> Tensor:
    """Batched affine map: out[i, j] = sum_k x[i, k] * w[k, j] + b[j]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.values.ndim != 2 or w.values.ndim != 2 or b.values.ndim != 1:
        raise DimensionError(
            f"affine expects x (batch,in), w (in,out), b (out,); got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(
            f"affine shapes do not chain: x {x.shape} @ w {w.shape} + b {b.shape}"
        )
    out = x.values @ w.values + b.values

    def vjp(g: Array):
        return g @ w.values.T, x.values.T @ g, g.sum(axis=0)

    return _record(out, "affine", (x, w, b), vjp)


def relu(x) -> Tensor:
    """Elementwise max(0, x). The derivative at exactly 0 is 0."""
    x = as_tensor(x)
    out = np.maximum(x.values, 0.0)

    def vjp(g: Array):
        return (np.where(x.values > 0.0, g, 0.0),)

    return _record(out, "relu", (x,), vjp)


def softmax_rows(logits) -> Tensor:
    """Row-wise softmax with max-subtraction for overflow safety."""
    z = as_tensor(logits)
    if z.values.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"softmax_rows expects (batch, C>=2) logits, got {z.shape}")
    if not np.all(np.isfinite(z.values)):
        raise NumericError("softmax_rows: non-finite logits")
    shifted = z.values - z.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner),)

    return _record(p, "softmax_rows", (z,), vjp)


def log_sum_exp_rows(logits) -> Tensor:
    """Row-wise log(sum(exp(z))) computed with max-subtraction; output (batch,)."""
    z = as_tensor(logits)
    if z.values.ndim != 2:
        raise DimensionError(f"log_sum_exp_rows expects a 2-d tensor, got {z.shape}")
    m = z.values.max(axis=1, keepdims=True)
    e = np.exp(z.values - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).ravel()
    p = e / s

    def vjp(g: Array):
        return (g[:, None] * p,)

    return _record(out, "log_sum_exp_rows", (z,), vjp)


def take_per_row(a, indices) -> Tensor:
    """Pick one column per row: out[i] = a[i, indices[i]]; output (batch,)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise DimensionError(
            f"take_per_row expects a (batch,C) and one index per row; got {a.shape} and {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"column index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    out = a.values[rows, idx]

    def vjp(g: Array):
        d = np.zeros_like(a.values)
        d[rows, idx] = g
        return (d,)

    return _record(out, "take_per_row", (a,), vjp)


def select_rows(a, indices) -> Tensor:
    """Gather rows by index (duplicates allowed); backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2 or idx.ndim != 1:
        raise DimensionError(f"select_rows expects a 2-d tensor and 1-d indices, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    out = a.values[idx]

    def vjp(g: Array):
        d = np.zeros_like(a.values)
        np.add.at(d, idx, g)
        return (d,)

    return _record(out, "select_rows", (a,), vjp)


def mean_rows(a) -> Tensor:
    """Mean over rows of a (n, C) tensor; output (C,).

    Evaluated anchored at the first row (same linear map, same derivative),
    so the mean of n identical rows is bitwise that row.
    """
    a = as_tensor(a)
    if a.values.ndim != 2 or a.shape[0] < 1:
        raise ContractError(f"mean_rows expects a nonempty 2-d tensor, got {a.shape}")
    n = a.shape[0]
    out = a.values[0] + (a.values - a.values[0]).mean(axis=0)

    def vjp(g: Array):
        return (np.broadcast_to(g / n, a.values.shape).copy(),)

    return _record(out, "mean_rows", (a,), vjp)


def sub_rowvec(a, v) -> Tensor:
    """Subtract a (C,) row vector from every row of a (n, C) tensor."""
    a, v = as_tensor(a), as_tensor(v)
    if a.values.ndim != 2 or v.values.ndim != 1 or a.shape[1] != v.shape[0]:
        raise DimensionError(f"sub_rowvec shapes do not agree: {a.shape} minus {v.shape}")
    out = a.values - v.values

    def vjp(g: Array):
        return g, -g.sum(axis=0)

    return _record(out, "sub_rowvec", (a, v), vjp)


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name} requires matching shapes, got {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def vjp(g: Array):
        return g, g

    return _record(a.values + b.values, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")

    def vjp(g: Array):
        return g, -g

    return _record(a.values - b.values, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def vjp(g: Array):
        return g * b.values, g * a.values

    return _record(a.values * b.values, "mul", (a, b), vjp)


def scale(a, s: float) -> Tensor:
    """Multiply by a python float constant."""
    a = as_tensor(a)
    s = float(s)

    def vjp(g: Array):
        return (g * s,)

    return _record(a.values * s, "scale", (a,), vjp)


def sum_all(a) -> Tensor:
    """Sum every element into a scalar (shape ()) tensor."""
    a = as_tensor(a)
    out = np.asarray(a.values.sum())

    def vjp(g: Array):
        return (np.broadcast_to(g, a.values.shape).copy(),)

    return _record(out, "sum_all", (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.values.reshape(shape)

    def vjp(g: Array):
        return (g.reshape(a.values.shape),)

    return _record(out, "reshape", (a,), vjp)


def conv1d(x, w, b) -> Tensor:
    """1-d convolution, stride 1, zero same-padding (odd kernel only).

    x is (batch, c_in, length), w is (c_out, c_in, kernel), b is (c_out,);
    output is (batch, c_out, length).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.values.ndim != 3 or w.values.ndim != 3 or b.values.ndim != 1:
        raise DimensionError(
            f"conv1d expects x (b,c,l), w (o,c,k), b (o,); got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise DimensionError(f"conv1d channel mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ContractError(f"conv1d same-padding requires an odd kernel, got {k}")
    length = x.shape[2]
    pad = (k - 1) // 2
    xp = np.pad(x.values, ((0, 0), (0, 0), (pad, pad)))
    windows = sliding_window_view(xp, k, axis=2)  # (batch, c_in, length, k)
    out = np.einsum("bclk,ock->bol", windows, w.values, optimize=True) + b.values[None, :, None]

    def vjp(g: Array):
        dw = np.einsum("bol,bclk->ock", g, windows, optimize=True)
        db = g.sum(axis=(0, 2))
        dwin = np.einsum("bol,ock->bclk", g, w.values, optimize=True)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, j : j + length] += dwin[:, :, :, j]
        return dxp[:, :, pad : pad + length].copy(), dw, db

    return _record(out, "conv1d", (x, w, b), vjp)


def global_avg_pool(x) -> Tensor:
    """Mean over the length axis of a (batch, channels, length) tensor."""
    x = as_tensor(x)
    if x.values.ndim != 3:
        raise DimensionError(f"global_avg_pool expects (batch, channels, length), got {x.shape}")
    length = x.shape[2]
    out = x.values.mean(axis=2)

    def vjp(g: Array):
        return (np.broadcast_to(g[:, :, None] / length, x.values.shape).copy(),)

    return _record(out, "global_avg_pool", (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Tensor) -> GradMap:
    """Reverse-mode gradients of a scalar root for every reachable tensor.

    Returns a fresh GradMap per call; tensors are left untouched and
    gradients over multiple paths accumulate additively.
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward expects a Tensor root")
    if root.values.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, Array] = {id(root): np.ones((), dtype=np.float64)}
    keep: dict[int, Tensor] = {id(root): root}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            pid = id(parent)
            keep[pid] = parent
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    return GradMap({tid: (keep[tid], np.asarray(g)) for tid, g in grads.items()})


def grad_check(f, x, eps: float = 1e-5) -> float:
    """Largest relative disagreement between reverse-mode and central differences.

    ``f`` maps a Tensor to a scalar Tensor. Per coordinate the error is
    |analytic - central| / max(1e-8, |central|) with central differences at
    x +- eps.
    """
    if eps <= 0:
        raise ContractError(f"grad_check requires eps > 0, got {eps}")
    x = as_tensor(x)
    gm = backward(f(x))
    analytic = gm.get(x)
    if analytic is None:
        analytic = np.zeros_like(x.values)

    base = x.values.copy()
    worst = 0.0
    for i in range(base.size):
        plus = base.copy()
        plus.flat[i] += eps
        minus = base.copy()
        minus.flat[i] -= eps
        with no_grad():
            f_plus = float(f(Tensor(plus)).values)
            f_minus = float(f(Tensor(minus)).values)
        central = (f_plus - f_minus) / (2.0 * eps)
        err = abs(float(analytic.flat[i]) - central) / max(1e-8, abs(central))
        worst = max(worst, err)
    return worst
