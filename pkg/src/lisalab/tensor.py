"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small and auditable: row-major numpy storage, a
Wengert-list tape, and an explicit backward rule per primitive.  Broadcasting
is supported only where the transformer needs it (bias adds, residual adds
over a leading batch axis); matmul operands must be at least 2-D.  Everything
is float64 so finite-difference oracles can be held to tight tolerances.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

# Finite stand-in for -inf in masked softmax: exp(x - max) underflows to
# exactly 0.0, so masked positions get bitwise-zero probability while all
# stored values stay finite.
MASK_FILL = -1e30

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense n-dimensional float64 value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_traced")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._traced = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def numel(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Minimal operator sugar; heavy lifting goes through the module functions.
    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    Backward replays the record exactly once in reverse.  A tape is confined
    to one training step: the run loop clears (or discards) it between
    optimizer steps.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()

    def backward(self, loss: Tensor) -> None:
        """Populate .grad of every requires_grad tensor reachable from loss.

        Gradients accumulate into existing .grad buffers; callers zero them
        explicitly.  Intermediate (non-requires_grad) tensors never retain
        gradients, so replaying backward after re-zeroing leaves is exactly
        reproducible.
        """
        if loss.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        flow: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self._nodes):
            g = flow.get(id(node.out))
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                key = id(t)
                if key in flow:
                    flow[key] = flow[key] + gi
                else:
                    flow[key] = gi
                    holders[key] = t
        for key, t in holders.items():
            if not t.requires_grad:
                continue
            g = flow[key]
            if g.shape != t.shape:  # defensive; would indicate a broken vjp
                raise ShapeError(
                    f"gradient shape {g.shape} != tensor shape {t.shape}"
                )
            if t.grad is None:
                t.grad = np.zeros(t.shape, dtype=np.float64)
            t.grad += g


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
    if not _ACTIVE_TAPES:
        return
    if any(t.requires_grad or t._traced for t in inputs):
        out._traced = True
        _ACTIVE_TAPES[-1]._nodes.append(_Node(out, inputs, vjp))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with optional leading batch axes.

    Both operands must be at least 2-D; leading axes follow numpy's matmul
    broadcasting.  Backward: dL/da = dL/dc @ b^T and dL/db = a^T @ dL/dc,
    reduced over broadcast batch axes.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch axes incompatible: {exc}") from exc
    out = Tensor(out_data)
    ad, bd = a.data, b.data

    def vjp(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return da, db

    _record(out, (a, b), vjp)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    _record(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))
    return out


def matrix_t(a: Tensor) -> Tensor:
    """Transpose of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("matrix_t expects a 2-D tensor")
    return transpose(a, (1, 0))


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    _record(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))
    return out


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; rows sum to 1.

    `mask` is a plain boolean array broadcastable to `a`; False positions get
    exactly zero probability (and, by the softmax backward identity, exactly
    zero input gradient).  Each row must keep at least one True entry.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, MASK_FILL)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def vjp(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    _record(out, (a,), vjp)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain & bias.

    eps is added to the variance (standard stabilization for near-constant
    rows).
    """
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    gd = gain.data

    def vjp(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    _record(out, (x, gain, bias), vjp)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = Tensor(xd * cdf)

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    _record(out, (x,), vjp)
    return out


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of `table` (V x D) by an integer index array."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding indices must be integers")
    if table.data.ndim != 2:
        raise ShapeError("embedding table must be 2-D")
    v = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"embedding index out of range [0, {v})")
    out = Tensor(table.data[idx])

    def vjp(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    _record(out, (table,), vjp)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over all positions.

    logits: (..., V); targets: integer array of shape logits.shape[:-1].
    """
    tgt = np.asarray(targets)
    if not np.issubdtype(tgt.dtype, np.integer):
        raise IndexError("cross_entropy targets must be integers")
    if tgt.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"targets shape {tgt.shape} != logits leading shape "
            f"{logits.data.shape[:-1]}"
        )
    v = logits.data.shape[-1]
    if tgt.size == 0:
        raise ContractError("cross_entropy needs at least one position")
    if tgt.min() < 0 or tgt.max() >= v:
        raise IndexError(f"target class out of range [0, {v})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(x, tgt[..., None], axis=-1)[..., 0]
    n = tgt.size
    out = Tensor((lse - picked).sum() / n)

    def vjp(g):
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        onehot_sub = p.copy()
        np.put_along_axis(
            onehot_sub,
            tgt[..., None],
            np.take_along_axis(onehot_sub, tgt[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        return (onehot_sub * (g / n),)

    _record(out, (logits,), vjp)
    return out
