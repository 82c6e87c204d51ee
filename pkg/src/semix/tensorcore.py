"""Minimal dense-array kernel with taped reverse-mode gradients.

Forward ops wrap numpy arrays in Tensor nodes. When a Tape is passed, each op
records a closure that routes the output gradient back to its inputs; running
``backward`` replays the tape in exact reverse order, accumulating gradients
additively so one graph can feed several losses.

Parameter values are kept float32-representable (every write passes through
float32), while all arithmetic runs in float64 -- central-difference gradient
checks cannot resolve a 1e-3 relative tolerance on float32 loss values.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

# When enabled, every op validates that its output is finite. Off by default;
# curriculum sweeps spend most of their time in these ops.
DEBUG = False


def set_debug(enabled: bool) -> None:
    global DEBUG
    DEBUG = bool(enabled)


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


class Tensor:
    """Array node tracked for reverse-mode differentiation (rank <= 3)."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ValueError(f"rank {arr.ndim} exceeds the supported rank 3")
        if DEBUG:
            _require_finite(arr, name or "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)


def backward(tape: Tape, loss: Tensor, seed: float = 1.0) -> None:
    """Seed the scalar loss gradient and replay the tape in reverse."""
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss tensor")
    if len(tape) == 0:
        raise ValueError("backward called before any forward op was recorded")
    if not np.isfinite(loss.data):
        raise ValueError("non-finite loss")
    loss.accumulate(np.float64(seed))
    for fn in reversed(tape._records):
        fn()


def _out(data, tape: Tape | None, bw: Callable[[], None] | None) -> Tensor:
    out = Tensor(data)
    if tape is not None and bw is not None:
        tape.record(bw)
    return out


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Matrix/vector product; accumulation happens in float64."""
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError("matmul supports rank-1/2 operands only")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw():
        g = out.grad
        if g is None:
            return
        if a.data.ndim == 2 and b.data.ndim == 2:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            a.accumulate(g @ b.data.T)
            b.accumulate(np.outer(a.data, g))
        elif a.data.ndim == 2 and b.data.ndim == 1:
            a.accumulate(np.outer(g, b.data))
            b.accumulate(a.data.T @ g)
        else:  # vector dot vector -> scalar
            a.accumulate(g * b.data)
            b.accumulate(g * a.data)

    if tape is not None:
        tape.record(bw)
    if DEBUG:
        _require_finite(out.data, "matmul output")
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise add; the only broadcast allowed is a bias over rows."""
    bias_add = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias_add and a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)

    def bw():
        g = out.grad
        if g is None:
            return
        a.accumulate(g)
        b.accumulate(g.sum(axis=0) if bias_add else g)

    if tape is not None:
        tape.record(bw)
    return out


def scale(a: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def bw():
        if out.grad is not None:
            a.accumulate(out.grad * s)

    if tape is not None:
        tape.record(bw)
    return out


def tanh(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def bw():
        if out.grad is not None:
            a.accumulate(out.grad * (1.0 - out.data ** 2))

    if tape is not None:
        tape.record(bw)
    return out


def softmax(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Stable softmax over the last axis; rows land on the simplex."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bw():
        g = out.grad
        if g is None:
            return
        dot = (g * y).sum(axis=-1, keepdims=True)
        a.accumulate(y * (g - dot))

    if tape is not None:
        tape.record(bw)
    return out


def mean_pool_masked(rows: Tensor, weights, tape: Tape | None = None) -> Tensor:
    """Weighted mean over rows; weights are constants (no gradient)."""
    w = np.asarray(weights, dtype=np.float64)
    if rows.data.ndim != 2 or w.shape != (rows.data.shape[0],):
        raise ValueError(f"mean_pool_masked shape mismatch: {rows.shape} with weights {w.shape}")
    wsum = w.sum()
    if wsum <= 0.0:
        raise ValueError("mean_pool_masked: mask weights sum to zero")
    out = Tensor((w @ rows.data) / wsum)

    def bw():
        if out.grad is not None:
            rows.accumulate(np.outer(w, out.grad) / wsum)

    if tape is not None:
        tape.record(bw)
    return out


def lookup(table: Tensor, ids, tape: Tape | None = None) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or table.data.ndim != 2:
        raise ValueError("lookup expects a rank-2 table and rank-1 ids")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError("lookup: id out of range")
    out = Tensor(table.data[idx])

    def bw():
        g = out.grad
        if g is None:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    if tape is not None:
        tape.record(bw)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries as a scalar tensor (float64 accumulation)."""
    out = Tensor(a.data.sum())

    def bw():
        if out.grad is not None:
            a.accumulate(np.full_like(a.data, float(out.grad)))

    if tape is not None:
        tape.record(bw)
    return out


def grad_check(
    model_forward: Callable[[Mapping, Tape | None], Tensor],
    params,
    eps: float = 1e-3,
    num_coords: int = 50,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central finite differences.

    ``model_forward(params, tape)`` must build the loss on the given tape (or
    run tape-free when tape is None). Samples ``num_coords`` parameter
    coordinates and returns the max relative error
    |a - n| / max(|a|, |n|, 1e-8).
    """
    if not (1e-5 <= eps <= 1e-2):
        raise ValueError(f"eps {eps} outside [1e-5, 1e-2]")
    if rng is None:
        rng = np.random.default_rng(0)

    named = list(params.items())
    for _, t in named:
        t.grad = None
    tape = Tape()
    loss = model_forward(params, tape)
    if not np.isfinite(loss.data):
        raise ValueError("non-finite loss")
    backward(tape, loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named
    }

    sizes = [t.data.size for _, t in named]
    total = int(sum(sizes))
    k = min(num_coords, total)
    picks = rng.choice(total, size=k, replace=False)

    worst = 0.0
    offsets = np.cumsum([0] + sizes)
    for flat in picks:
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, t = named[slot]
        local = int(flat - offsets[slot])
        orig = t.data.flat[local]
        t.data.flat[local] = orig + eps
        lp = float(model_forward(params, None).data)
        t.data.flat[local] = orig - eps
        lm = float(model_forward(params, None).data)
        t.data.flat[local] = orig
        numeric = (lp - lm) / (2.0 * eps)
        a = float(analytic[name].flat[local])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
