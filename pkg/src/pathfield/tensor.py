"""Minimal reverse-mode autodiff over float64 numpy arrays.

Covers exactly the operations the message-passing model needs: dense
matmul, broadcasting add/mul, concatenation, relu, row gathering,
segment max, grouped softmax cross-entropy, and squared L2 norms.
Gradients are accumulated into leaf tensors by :meth:`Tensor.backward`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(Exception):
    """Raised when operand shapes cannot combine under the requested op."""


class NotScalar(Exception):
    """Raised when backward is called on a non-scalar tensor."""


class no_grad:
    """Context manager that stops ops from recording backward graphs.

    Forward values are unchanged; tensors built inside never require
    gradients, which keeps pure inference at constant memory.
    """

    def __enter__(self) -> "no_grad":
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc_info) -> None:
        _GRAD_ENABLED.pop()


_GRAD_ENABLED: list[bool] = [True]


# ============================================================
# Tensor
# ============================================================


class Tensor:
    """A float64 array plus the recorded operation that produced it.

    ``grad`` lives on leaf tensors only (those created directly rather
    than by an op) and accumulates across backward calls until cleared.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable | None = None,
    ) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def item(self) -> float:
        return float(self.values)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only defined on scalars. Calling backward twice on the same graph
        adds the gradients again; clearing is the optimizer's job.
        """
        if self.values.ndim != 0:
            raise NotScalar(f"backward needs a scalar, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones(())}

        def accumulate(tensor: "Tensor", delta: np.ndarray) -> None:
            if not tensor.requires_grad:
                return
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + delta
            else:
                grads[key] = np.array(delta, dtype=np.float64, copy=True)

        for node in reversed(order):
            grad = grads.get(id(node))
            if grad is None or node._backward is None:
                continue
            node._backward(grad, accumulate)
        for node in order:
            if node._backward is None and node.requires_grad:
                grad = grads.get(id(node))
                if grad is None:
                    continue
                node.grad = grad if node.grad is None else node.grad + grad

    # ---- operator sugar ----

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __sub__(self, other) -> "Tensor":
        return add(self, mul(_lift(other), -1.0))

    def __rsub__(self, other) -> "Tensor":
        return add(_lift(other), mul(self, -1.0))

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise ShapeMismatch("division is supported by constants only")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the graph below ``root``."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ============================================================
# Elementwise and linear ops
# ============================================================


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Dense 2-d matrix product."""
    a, b = _lift(a), _lift(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeMismatch(
            f"matmul needs 2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward(grad, accumulate):
        accumulate(a, grad @ b.values.T)
        accumulate(b, a.values.T @ grad)

    return _make(out_values, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out_values = a.values + b.values
    except ValueError as exc:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}") from exc

    def backward(grad, accumulate):
        accumulate(a, _unbroadcast(grad, a.shape))
        accumulate(b, _unbroadcast(grad, b.shape))

    return _make(out_values, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out_values = a.values * b.values
    except ValueError as exc:
        raise ShapeMismatch(f"cannot multiply {a.shape} and {b.shape}") from exc

    def backward(grad, accumulate):
        accumulate(a, _unbroadcast(grad * b.values, a.shape))
        accumulate(b, _unbroadcast(grad * a.values, b.shape))

    return _make(out_values, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    mask = a.values > 0.0

    def backward(grad, accumulate):
        accumulate(a, grad * mask)

    return _make(np.where(mask, a.values, 0.0), (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis (the feature axis by default)."""
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat needs at least one tensor")
    try:
        out_values = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(
            f"cannot concat shapes {[p.shape for p in parts]} on axis {axis}"
        ) from exc
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad, accumulate):
        for part, piece in zip(parts, np.split(grad, splits, axis=axis)):
            accumulate(part, piece)

    return _make(out_values, tuple(parts), backward)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows (axis 0); duplicate indices sum their gradients."""
    a = _lift(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ShapeMismatch(f"indices must be 1-d, got shape {indices.shape}")
    if a.values.ndim == 0:
        raise ShapeMismatch("cannot take rows of a scalar")
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise ShapeMismatch(
            f"row indices out of range for first axis of size {a.shape[0]}"
        )

    def backward(grad, accumulate):
        full = np.zeros_like(a.values)
        np.add.at(full, indices, grad)
        accumulate(a, full)

    return _make(a.values[indices], (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    try:
        out_values = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(grad, accumulate):
        accumulate(a, grad.reshape(a.shape))

    return _make(out_values, (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    a = _lift(a)

    def backward(grad, accumulate):
        accumulate(a, np.full(a.shape, float(grad)))

    return _make(a.values.sum(), (a,), backward)


def l2_norm_squared(a: Tensor) -> Tensor:
    """Sum of squared entries as a scalar."""
    a = _lift(a)

    def backward(grad, accumulate):
        accumulate(a, 2.0 * a.values * float(grad))

    return _make(np.sum(a.values * a.values), (a,), backward)


# ============================================================
# Segment ops
# ============================================================


def segment_max(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Rowwise max over segments; empty segments yield 0 and no gradient.

    The gradient of each output entry flows to the first row (smallest
    row index) attaining the maximum in its segment.
    """
    a = _lift(a)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    squeeze = a.values.ndim == 1
    vals = a.values[:, None] if squeeze else a.values
    if vals.ndim != 2:
        raise ShapeMismatch(f"segment_max needs 1-d or 2-d input, got {a.shape}")
    if segment_ids.shape != (vals.shape[0],):
        raise ShapeMismatch(
            f"segment_ids shape {segment_ids.shape} does not match {vals.shape[0]} rows"
        )
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise ShapeMismatch(f"segment ids out of range for {num_segments} segments")
    rows, cols = vals.shape
    peak = np.full((num_segments, cols), -np.inf)
    np.maximum.at(peak, segment_ids, vals)
    occupied = np.zeros(num_segments, dtype=bool)
    occupied[segment_ids] = True
    out_values = np.where(occupied[:, None], peak, 0.0)

    def backward(grad, accumulate):
        grad2 = grad[:, None] if squeeze else grad
        winner = vals == peak[segment_ids]
        first = np.full((num_segments, cols), rows, dtype=np.int64)
        row_index = np.where(winner, np.arange(rows)[:, None], rows)
        np.minimum.at(first, segment_ids, row_index)
        full = np.zeros_like(vals)
        valid = first < rows
        col_index = np.broadcast_to(np.arange(cols), (num_segments, cols))
        np.add.at(full, (first[valid], col_index[valid]), grad2[valid])
        accumulate(a, full[:, 0] if squeeze else full)

    return _make(out_values[:, 0] if squeeze else out_values, (a,), backward)


def softmax_cross_entropy(
    logits: Tensor,
    segment_ids: np.ndarray,
    true_indices: np.ndarray,
    num_segments: int,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Weighted sum of per-segment cross-entropies over grouped logits.

    Segment s holds the candidate scores at positions where
    ``segment_ids == s``; ``true_indices[s]`` is the position (into the
    flat logits) of its correct candidate. Weights default to 1/S, so the
    result is the mean cross-entropy.
    """
    logits = _lift(logits)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    true_indices = np.asarray(true_indices, dtype=np.int64)
    if logits.values.ndim != 1:
        raise ShapeMismatch(f"logits must be 1-d, got shape {logits.shape}")
    if segment_ids.shape != logits.shape:
        raise ShapeMismatch("segment_ids must align with logits")
    if true_indices.shape != (num_segments,):
        raise ShapeMismatch(
            f"need one true index per segment, got {true_indices.shape}"
        )
    counts = np.bincount(segment_ids, minlength=num_segments)
    if np.any(counts == 0):
        raise ShapeMismatch("every segment needs at least one logit")
    if not np.array_equal(segment_ids[true_indices], np.arange(num_segments)):
        raise ShapeMismatch("true_indices must point into their own segments")
    if weights is None:
        weights = np.full(num_segments, 1.0 / num_segments)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (num_segments,):
            raise ShapeMismatch(f"weights shape {weights.shape} must be ({num_segments},)")

    vals = logits.values
    shift = np.full(num_segments, -np.inf)
    np.maximum.at(shift, segment_ids, vals)
    exps = np.exp(vals - shift[segment_ids])
    denom = np.bincount(segment_ids, weights=exps, minlength=num_segments)
    log_z = shift + np.log(denom)
    losses = log_z - vals[true_indices]
    out_value = np.sum(losses * weights)

    def backward(grad, accumulate):
        scale = float(grad)
        grad_logits = (exps / denom[segment_ids]) * weights[segment_ids] * scale
        np.subtract.at(grad_logits, true_indices, weights * scale)
        accumulate(logits, grad_logits)

    return _make(out_value, (logits,), backward)


def _make(values: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    requires = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    return Tensor(
        values,
        requires_grad=requires,
        _parents=parents if requires else (),
        _backward=backward if requires else None,
    )
