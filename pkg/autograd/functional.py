"""Differentiable primitives.

Each primitive computes its forward value with numpy and, when a tape is
active and an input requires a gradient, records the rule that maps the
output gradient back onto its inputs.
"""

import math
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtr

from core.errors import ContractError, DimensionError, NumericError, TargetIndexError

from .tensor import BackwardFn, Tensor, active_tape

Axis = Union[None, int, Tuple[int, ...]]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    tape = active_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        tape.record(op, tuple(inputs), out, backward_fn)
    return out


def _pair(a: Any, b: Any) -> Tuple[Tensor, Tensor]:
    """Lift constants to tensors of the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# Elementwise arithmetic


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _result("add", data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from e
    return _result("sub", data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return _result(
        "mul",
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data / b.data
    except ValueError as e:
        raise DimensionError(f"cannot divide shapes {a.shape} and {b.shape}") from e
    return _result(
        "div",
        data,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return _result("neg", -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def where(cond: np.ndarray, a: Any, b: Any) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant mask."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    try:
        data = np.where(cond, a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"where() cannot broadcast {cond.shape}, {a.shape}, {b.shape}") from e
    zero = np.zeros((), dtype=data.dtype)

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(np.where(cond, g, zero), a.shape), _unbroadcast(np.where(cond, zero, g), b.shape)

    return _result("where", data, (a, b), backward)


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul cannot broadcast {a.shape} @ {b.shape}") from e

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight (+ bias)`` with weight stored as [in, out]."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# Shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    data = x.data.reshape(tuple(shape))
    return _result("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def index(x: Tensor, key: Any) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in the gradient."""
    data = np.array(x.data[key], copy=True)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _result("index", data, (x,), backward)


def take_rows(table: Tensor, ids: Any) -> Tensor:
    """Embedding lookup: rows of ``table`` selected by an integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TargetIndexError(f"row ids out of range [0, {table.shape[0]})")
    return index(table, ids)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat cannot join shapes {[t.shape for t in tensors]} on axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return _result("concat", data, tuple(tensors), backward)


def pad_stack(tensors: Sequence[Tensor], length: int) -> Tensor:
    """Stack [L_i, ...] tensors into [B, length, ...], zero-padding each along axis 0."""
    if not tensors:
        raise ContractError("pad_stack needs at least one tensor")
    tail = tensors[0].shape[1:]
    for t in tensors:
        if t.shape[1:] != tail:
            raise DimensionError(f"pad_stack trailing shapes differ: {t.shape[1:]} vs {tail}")
        if t.shape[0] > length:
            raise DimensionError(f"pad_stack length {length} is shorter than a sequence of {t.shape[0]}")
    data = np.zeros((len(tensors), length) + tail, dtype=np.result_type(*[t.data for t in tensors]))
    for i, t in enumerate(tensors):
        data[i, : t.shape[0]] = t.data

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return [g[i, : t.shape[0]] for i, t in enumerate(tensors)]

    return _result("pad_stack", data, tuple(tensors), backward)


def assemble_rows(parts: Sequence[Tensor], indices: Sequence[np.ndarray], n_rows: int) -> Tensor:
    """Scatter each part's rows to disjoint row indices of an [n_rows, ...] output."""
    if len(parts) != len(indices):
        raise ContractError("assemble_rows needs one index array per part")
    if not parts:
        raise ContractError("assemble_rows needs at least one part")
    tail = parts[0].shape[1:]
    data = np.zeros((n_rows,) + tail, dtype=np.result_type(*[p.data for p in parts]))
    for part, idx in zip(parts, indices):
        data[idx] = part.data

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return [g[idx] for idx in indices]

    return _result("assemble_rows", data, tuple(parts), backward)


# Reductions


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    data = np.sum(x.data, axis=axis, keepdims=keepdims)
    axes = _normalize_axes(axis, x.ndim)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", np.asarray(data, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ContractError(f"mean over an empty axis of shape {x.shape}")
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Nonlinearities and normalisation


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = ndtr(x.data)
    y = x.data * cdf

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _result("gelu", y, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("log_softmax received NaN input")
    m = np.max(x.data, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(x.data - m), axis=axis, keepdims=True))
    y = x.data - lse

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _result("log_softmax", y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} do not match width {d}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gamma.data + beta.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        gxhat = g * gamma.data
        gx = inv * (
            gxhat - np.mean(gxhat, axis=-1, keepdims=True) - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _result("layer_norm", y.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.maximum(np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True)), eps)
    y = x.data / norm

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,)

    return _result("l2_normalize", y, (x,), backward)


# Losses


def cross_entropy(logits: Tensor, targets: Any) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy needs [batch, classes] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    b, v = logits.shape
    if targets.shape[0] != b:
        raise DimensionError(f"cross_entropy got {targets.shape[0]} targets for {b} rows")
    if b == 0:
        raise ContractError("cross_entropy needs at least one row")
    if targets.min() < 0 or targets.max() >= v:
        raise TargetIndexError(f"cross_entropy targets must lie in [0, {v}), got range [{targets.min()}, {targets.max()}]")

    x = logits.data
    m = np.max(x, axis=1, keepdims=True)
    shifted = x - m
    sum_exp = np.sum(np.exp(shifted), axis=1, keepdims=True)
    rows = np.arange(b)
    log_probs = shifted[rows, targets] - np.log(sum_exp[:, 0])
    loss = np.asarray(-np.mean(log_probs), dtype=x.dtype)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        p = np.exp(shifted) / sum_exp
        p[rows, targets] -= 1.0
        return (p * (g / b),)

    return _result("cross_entropy", loss, (logits,), backward)
