"""Dense f64 tensors with a reverse-mode tape.

Execution order is a topological order, so the tape is just the list of ops in
the order they ran; backward replays it in exact reverse. Every primitive here
is paired with the finite-difference checker at the bottom of the file, which
is the independent route used to validate the analytic gradients.

Ops record onto the innermost active ``Tape`` (entered as a context manager).
With no tape active the same ops run as plain numpy compute, which is the
inference mode used by the evaluation paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DataError, DimensionError, NumericsError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A dense float64 array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of ops for one backward pass.

    A tape is consumed exactly once; a second backward() raises. Nodes are
    visited in exact reverse execution order, which is a reverse topological
    order because operands always exist before the op that uses them.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_TAPES.pop()
        if popped is not self:
            raise ContractError("tape context exited out of order")

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._nodes.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into each leaf's .grad."""
        if self._consumed:
            raise ContractError("tape already consumed by a backward pass")
        if loss.size != 1:
            raise ContractError("backward requires a scalar-valued loss")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            backward_fn(g)
            if not out.is_leaf:
                out.grad = None  # frees intermediates as the frontier retreats


def tracing() -> "Tape | None":
    """The innermost active tape, or None when running untracked."""
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record_op(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Mark ``out`` as an op output and record it when a tape is active."""
    out.is_leaf = False
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = tracing()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution of t's exact shape into t.grad."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes that broadcasting expanded to reach g's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g, b.shape))

    return record_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(-g, b.shape))

    return record_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return record_op(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g * c)

    return record_op(out, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; for >2 dims the leading (batch) axes must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires at least 2-dim operands")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch axes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner axes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return record_op(out, (a, b), backward)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"axes {axes} is not a permutation for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))

    def backward(g):
        if a.requires_grad:
            accumulate(a, np.transpose(g, inverse))

    return record_op(out, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.reshape(a.data, shape))

    def backward(g):
        if a.requires_grad:
            accumulate(a, np.reshape(g, a.shape))

    return record_op(out, (a,), backward)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.shape).copy())

    return record_op(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid_stable(a.data)
    out = Tensor(y)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g * y * (1.0 - y))

    return record_op(out, (a,), backward)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Piecewise form avoids overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_stable(a.data)
    out = Tensor(a.data * s)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g * s * (1.0 + a.data * (1.0 - s)))

    return record_op(out, (a,), backward)


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Normalized exponential along ``axis``.

    With a boolean ``mask`` (broadcastable to a's shape), masked entries get
    exactly zero weight; every row must keep at least one visible entry.
    """
    a = _as_tensor(a)
    if a.shape == () or a.shape[axis] == 0:
        raise DimensionError("softmax axis must be non-empty")
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(np.any(mask, axis=axis)):
            raise ContractError("softmax mask leaves an empty row")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    w = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(w)

    def backward(g):
        if a.requires_grad:
            inner = np.sum(g * w, axis=axis, keepdims=True)
            accumulate(a, w * (g - inner))

    return record_op(out, (a,), backward)


def rms_norm(a, gain, eps: float = 1e-5) -> Tensor:
    """x * gain / sqrt(mean(x^2, last axis) + eps)."""
    a, gain = _as_tensor(a), _as_tensor(gain)
    if gain.ndim != 1 or gain.shape[0] != a.shape[-1]:
        raise DimensionError(f"gain shape {gain.shape} does not match feature dim {a.shape[-1]}")
    ms = np.mean(a.data * a.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out = Tensor(a.data * inv * gain.data)

    def backward(g):
        d = a.shape[-1]
        if a.requires_grad:
            u = g * gain.data
            proj = np.sum(u * a.data, axis=-1, keepdims=True) / d
            accumulate(a, u * inv - a.data * (inv ** 3) * proj)
        if gain.requires_grad:
            contrib = g * a.data * inv
            accumulate(gain, contrib.reshape(-1, d).sum(axis=0))

    return record_op(out, (a, gain), backward)


def embedding(weight, ids: np.ndarray) -> Tensor:
    """Row gather weight[ids]; backward scatter-adds into the table."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError("token ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DataError(
            f"token id out of range [0, {weight.shape[0]}): min={ids.min()} max={ids.max()}"
        )
    out = Tensor(weight.data[ids])

    def backward(g):
        if weight.requires_grad:
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            np.add.at(weight.grad, ids, g)

    return record_op(out, (weight,), backward)


def cross_entropy_logits(logits, targets: np.ndarray) -> Tensor:
    """Mean negative log likelihood of integer targets under row softmax."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError("logits must be [rows x vocab]")
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise DataError("targets must be integers")
    rows, vocab = logits.shape
    if targets.shape != (rows,):
        raise DimensionError(f"targets shape {targets.shape} does not match rows {rows}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise DataError("target id out of vocabulary range")
    x = logits.data
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    z = np.sum(e, axis=1, keepdims=True)
    p = e / z
    row_idx = np.arange(rows)
    nll = (np.log(z) + m).reshape(-1) - x[row_idx, targets]
    out = Tensor(np.array(np.mean(nll)))

    def backward(g):
        if logits.requires_grad:
            gl = p * (float(g) / rows)
            gl[row_idx, targets] -= float(g) / rows
            accumulate(logits, gl)

    return record_op(out, (logits,), backward)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_err: float
    eps: float
    tol: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def gradcheck(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-5) -> GradcheckReport:
    """Compare the taped gradient of scalar f against central differences.

    The relative error per coordinate uses a unit floor,
    |ad - fd| / max(1, |ad|, |fd|), so exactly-zero gradients are held to an
    absolute standard instead of dividing by noise.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ContractError(f"eps {eps} outside the supported f64 range [1e-6, 1e-4]")
    x0 = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x0)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ContractError("gradcheck requires a scalar-valued function")
    tape.backward(y)
    g_ad = np.zeros_like(x0.data) if x0.grad is None else x0.grad.copy()

    flat = x.data.copy().reshape(-1)
    g_fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig - eps
        fm = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig
        g_fd[i] = (fp - fm) / (2.0 * eps)

    g_ad_flat = g_ad.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad_flat), np.abs(g_fd)))
    max_rel = float(np.max(np.abs(g_ad_flat - g_fd) / denom)) if flat.size else 0.0
    return GradcheckReport(max_rel_err=max_rel, eps=eps, tol=tol, n_coords=flat.size)
