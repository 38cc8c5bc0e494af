"""Dense tensors with a reverse-mode gradient tape.

Values are numpy arrays (f64 by default, f32 supported). Operations record
backward rules on the currently active Tape; `backward` replays the tape in
reverse and returns gradients for every requires_grad leaf, in a fixed order
so repeated passes are bitwise identical. Shapes are limited to 2-D matrices,
row/column vectors and scalars plus last-axis bias broadcast; nothing here
fuses, parallelizes, or broadcasts beyond that.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not match the operation's contract."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_NODE_IDS = itertools.count(1)
_ACTIVE_TAPE: "Tape | None" = None

DEFAULT_DTYPE = np.float64


class Tensor:
    """Immutable dense value participating in the gradient tape.

    `data` must not be mutated after creation except by the optimizer, which
    owns parameter updates as a serial transaction between tapes.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id = next(_NODE_IDS)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of differentiable operations.

    Each record holds (op name, input node ids, output node id, backward fn).
    Records are appended in execution order, so inputs always precede their
    consumers and one reverse sweep visits each record exactly once.
    """

    def __init__(self):
        self.records: list[tuple[str, tuple[int, ...], int, Callable]] = []
        self.leaves: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, name: str, inputs: Sequence[Tensor], out: Tensor, backward: Callable) -> None:
        for t in inputs:
            if t.requires_grad and t.node_id not in self._produced:
                self.leaves.setdefault(t.node_id, t)
        self._produced.add(out.node_id)
        self.records.append((name, tuple(t.node_id for t in inputs), out.node_id, backward))


def _maybe_record(name: str, inputs: Sequence[Tensor], out: Tensor, backward: Callable) -> None:
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE.record(name, inputs, out, backward)


def _any_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def backward(loss: Tensor, tape: Tape | None = None) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss.

    Returns node_id -> gradient Tensor for every requires_grad leaf that was
    touched on the tape; leaves the loss does not depend on get zeros.
    """
    tape = tape if tape is not None else _ACTIVE_TAPE
    if tape is None:
        raise ContractError("backward requires a tape")
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for _name, input_ids, out_id, bwd in reversed(tape.records):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for nid, gin in zip(input_ids, bwd(g)):
            if gin is None:
                continue
            acc = grads.get(nid)
            grads[nid] = gin if acc is None else acc + gin
    return {
        nid: Tensor(grads[nid] if nid in grads else np.zeros_like(leaf.data))
        for nid, leaf in tape.leaves.items()
    }


def grad_of(grads: dict[int, Tensor], t: Tensor) -> np.ndarray:
    if t.node_id not in grads:
        return np.zeros_like(t.data)
    return grads[t.node_id].data


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_any_grad(a, b))

    def bwd(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    _maybe_record("matmul", (a, b), out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a 1-D bias broadcast over the rows of a."""
    bias = a.data.ndim == 2 and b.data.ndim == 1
    if not bias and a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    if bias and a.shape[1] != b.shape[0]:
        raise ShapeError(f"bias length {b.shape[0]} does not match row width {a.shape[1]}")
    out = Tensor(a.data + b.data, requires_grad=_any_grad(a, b))

    def bwd(g):
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0) if bias else g
        return (g if a.requires_grad else None, gb)

    _maybe_record("add", (a, b), out, bwd)
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors; gradient passes through to each."""
    if not tensors:
        raise ContractError("add_n of an empty sequence")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"add_n shape mismatch: {t.shape} vs {shape}")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor(acc, requires_grad=_any_grad(*tensors))

    def bwd(g):
        return tuple(g if t.requires_grad else None for t in tensors)

    _maybe_record("add_n", tensors, out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data, requires_grad=_any_grad(a, b))

    def bwd(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    _maybe_record("sub", (a, b), out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, requires_grad=_any_grad(a, b))

    def bwd(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    _maybe_record("mul", (a, b), out, bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, requires_grad=a.requires_grad)
    _maybe_record("scale", (a,), out, lambda g: (g * c,))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)
    _maybe_record("relu", (a,), out, lambda g: (g * (a.data > 0),))
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    out = Tensor(0.5 * x * (1.0 + t), requires_grad=a.requires_grad)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    _maybe_record("gelu", (a,), out, bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, requires_grad=a.requires_grad)
    _maybe_record("sigmoid", (a,), out, lambda g: (g * s * (1.0 - s),))
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))), requires_grad=a.requires_grad)
    _maybe_record("softplus", (a,), out, lambda g: (g / (1.0 + np.exp(-x)),))
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax over non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, requires_grad=x.requires_grad)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    _maybe_record("softmax", (x,), out, bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2-D input, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have length {d}, got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = Tensor(xh * gain.data + bias.data, requires_grad=_any_grad(x, gain, bias))

    def bwd(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (
                gh
                - gh.mean(axis=1, keepdims=True)
                - xh * (gh * xh).mean(axis=1, keepdims=True)
            )
        return (
            gx,
            (g * xh).sum(axis=0) if gain.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    _maybe_record("layer_norm", (x, gain, bias), out, bwd)
    return out


def cross_entropy(logits: Tensor, targets: Sequence[int], mask: Sequence[bool]) -> Tensor:
    """Mean negative log-softmax probability over masked-in positions."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects T x V logits, got {logits.shape}")
    t_len, vocab = logits.shape
    if len(targets) != t_len or len(mask) != t_len:
        raise ContractError(
            f"cross_entropy lengths disagree: logits {t_len}, targets {len(targets)}, mask {len(mask)}"
        )
    idx = [i for i, m in enumerate(mask) if m]
    if not idx:
        raise ContractError("cross_entropy mask selects no positions")
    for i in idx:
        if not 0 <= targets[i] < vocab:
            raise ContractError(f"target id {targets[i]} at position {i} outside vocab of {vocab}")
    rows = np.asarray(idx, dtype=np.intp)
    cols = np.asarray([targets[i] for i in idx], dtype=np.intp)
    sel = logits.data[rows]
    m = sel.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sel - m).sum(axis=1))
    nll = lse - sel[np.arange(len(idx)), cols]
    out = Tensor(nll.mean(), requires_grad=logits.requires_grad)

    def bwd(g):
        soft = np.exp(sel - m)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(len(idx)), cols] -= 1.0
        full = np.zeros_like(logits.data)
        full[rows] = soft * (float(g) / len(idx))
        return (full,)

    _maybe_record("cross_entropy", (logits,), out, bwd)
    return out


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis), requires_grad=a.requires_grad)

    def bwd(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    _maybe_record("sum", (a,), out, bwd)
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), requires_grad=a.requires_grad)
    _maybe_record("mean", (a,), out, lambda g: (np.full_like(a.data, float(g) / n),))
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    _maybe_record("reshape", (a,), out, lambda g: (g.reshape(a.data.shape),))
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T.copy(), requires_grad=a.requires_grad)
    _maybe_record("transpose", (a,), out, lambda g: (g.T.copy(),))
    return out


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got {table.shape}")
    rows = np.asarray(ids, dtype=np.intp)
    if rows.size and (rows.min() < 0 or rows.max() >= table.shape[0]):
        raise ContractError(f"row id outside table of {table.shape[0]} rows")
    out = Tensor(table.data[rows], requires_grad=table.requires_grad)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, rows, g)
        return (full,)

    _maybe_record("gather_rows", (table,), out, bwd)
    return out


def row_set(a: Tensor, idx: int, v: Tensor) -> Tensor:
    """Copy of a with row idx replaced by the 1-D vector v."""
    if a.data.ndim != 2 or v.data.ndim != 1 or v.shape[0] != a.shape[1]:
        raise ShapeError(f"row_set shapes disagree: {a.shape} row <- {v.shape}")
    if not 0 <= idx < a.shape[0]:
        raise ContractError(f"row index {idx} outside {a.shape[0]} rows")
    data = a.data.copy()
    data[idx] = v.data
    out = Tensor(data, requires_grad=_any_grad(a, v))

    def bwd(g):
        ga = None
        if a.requires_grad:
            ga = g.copy()
            ga[idx] = 0.0
        return (ga, g[idx].copy() if v.requires_grad else None)

    _maybe_record("row_set", (a, v), out, bwd)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {a.shape}")
    out = Tensor(a.data[:, start:stop].copy(), requires_grad=a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    _maybe_record("slice_cols", (a,), out, bwd)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols of an empty sequence")
    widths = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), requires_grad=_any_grad(*parts))

    def bwd(g):
        grads = []
        off = 0
        for p, w in zip(parts, widths):
            grads.append(g[:, off : off + w].copy() if p.requires_grad else None)
            off += w
        return tuple(grads)

    _maybe_record("concat_cols", parts, out, bwd)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5, order: int = 2) -> float:
    """Max relative gap between the tape gradient of f at x and central differences.

    Relative error per coordinate is |analytic - central| / (|analytic| +
    |central| + 1e-12). f must be deterministic; x.data is perturbed in place
    and restored, so f may close over x directly. order=4 switches to the
    five-point stencil, which tolerates larger eps and so a smaller round-off
    floor; use it when the smallest gradient coordinates sit near the noise
    level of the plain central difference.
    """
    if eps <= 0:
        raise ContractError("finite_diff_check requires eps > 0")
    if order not in (2, 4):
        raise ContractError("order must be 2 or 4")
    was_grad = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(x)
            grads = backward(loss, tape)
        analytic = grad_of(grads, x)
    finally:
        x.requires_grad = was_grad
    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)

    def at(i: int, offset: float) -> float:
        orig = flat[i]
        flat[i] = orig + offset
        value = f(x).item()
        flat[i] = orig
        return value

    for i in range(flat.size):
        if order == 2:
            numeric[i] = (at(i, eps) - at(i, -eps)) / (2.0 * eps)
        else:
            numeric[i] = (
                8.0 * (at(i, eps) - at(i, -eps)) - (at(i, 2 * eps) - at(i, -2 * eps))
            ) / (12.0 * eps)
    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
