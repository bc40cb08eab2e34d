"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the operations the graph model needs are provided. Shapes must match
exactly; the only broadcasting allowed is tensor-with-scalar.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonDeterministicError(RuntimeError):
    pass


# Replay tape for stop_gradient values, used by the finite-difference oracle so
# that detached quantities stay constant while inputs are perturbed.
_tape: Optional["_StopGradTape"] = None


class _StopGradTape:
    def __init__(self) -> None:
        self.values: list[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def handle(self, values: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.values.append(values.copy())
            return values
        if self.cursor >= len(self.values):
            raise NonDeterministicError("stop_gradient call sequence changed between evaluations")
        recorded = self.values[self.cursor]
        self.cursor += 1
        if recorded.shape != values.shape:
            raise NonDeterministicError("stop_gradient shape changed between evaluations")
        return recorded


class Tensor:
    __array_priority__ = 100.0

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        *,
        stop_gradient: bool = False,
        _parents: tuple = (),
        _backward: Optional[Callable[[np.ndarray], tuple]] = None,
        name: Optional[str] = None,
    ) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and not stop_gradient
        self.stop_gradient = stop_gradient
        self.grad: Optional[np.ndarray] = None
        self.name = name
        if stop_gradient:
            _parents, _backward = (), None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        flag += ", stop_gradient=True" if self.stop_gradient else ""
        return f"Tensor({self.values!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, parents: tuple, fn: Callable[[np.ndarray], tuple]) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(values)
    return Tensor(values, requires_grad=True, _parents=parents, _backward=fn)


def _is_scalar(b) -> bool:
    return isinstance(b, (int, float, np.floating, np.integer))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {a.shape}")
    return _result(a.values.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _result(a.values.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


# --- elementwise ------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return _result(a.values + float(b), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same(a, b, "add")
    return _result(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return _result(a.values - float(b), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same(a, b, "sub")
    return _result(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, float(b))
    b = as_tensor(b)
    _check_same(a, b, "mul")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _result(a.values * k, (a,), lambda g: (g * k,))


def neg(a: Tensor) -> Tensor:
    return _result(-a.values, (a,), lambda g: (-g,))


def div(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        if float(b) == 0.0:
            raise DomainError("division by zero scalar")
        return scale(a, 1.0 / float(b))
    b = as_tensor(b)
    _check_same(a, b, "div")
    if np.any(b.values == 0.0):
        raise DomainError("division whose denominator contains zero")
    av, bv = a.values, b.values
    out = av / bv

    def bw(g):
        return g / bv, -g * av / (bv * bv)

    return _result(out, (a, b), bw)


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    fns = {"add": add, "sub": sub, "mul": mul, "div": div, "scale": scale}
    if op == "neg":
        return neg(a)
    if op not in fns:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fns[op](a, b)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for strictly positive a."""
    if np.any(a.values <= 0.0):
        raise DomainError("power requires strictly positive base")
    av = a.values
    out = av ** p
    return _result(out, (a,), lambda g: (g * p * out / av,))


# --- activations ------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    keep = a.values > 0.0
    return _result(np.where(keep, a.values, 0.0), (a,), lambda g: (g * keep,))


def activation(op: str, a: Tensor) -> Tensor:
    if op == "sigmoid":
        return sigmoid(a)
    if op == "relu":
        return relu(a)
    raise ValueError(f"unknown activation {op!r}")


# --- reductions -------------------------------------------------------------

def _check_axis(a: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not (0 <= axis < a.values.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    _check_axis(a, axis)
    shape = a.shape
    if axis is None:
        return _result(np.asarray(a.values.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    out = a.values.sum(axis=axis)
    return _result(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis: Optional[int] = None, exact: bool = False) -> Tensor:
    """Mean over ``axis`` (or everything).

    ``exact=True`` sums with ``math.fsum`` so the result does not depend on
    element order; only supported for ``axis=0`` on 2-d tensors.
    """
    _check_axis(a, axis)
    shape = a.shape
    if exact:
        if axis != 0 or a.values.ndim != 2:
            raise ShapeError("exact mean supports axis=0 on 2-d tensors only")
        n = shape[0]
        out = np.array([math.fsum(col) for col in a.values.T]) / n
        return _result(out, (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),))
    if axis is None:
        n = a.size
        return _result(np.asarray(a.values.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))
    n = shape[axis]
    out = a.values.mean(axis=axis)
    return _result(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),))


def reduce(op: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    if op == "sum":
        return sum(a, axis)
    if op == "mean":
        return mean(a, axis)
    raise ValueError(f"unknown reduction {op!r}")


# --- indexing / assembly ----------------------------------------------------

def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]``; gradients scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.values[idx], (a,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows of empty list")
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.values for p in parts], axis=0), tuple(parts), bw)


def segment_mean(a: Tensor, lengths: Sequence[int]) -> Tensor:
    """Mean of consecutive row blocks of ``a`` with the given block lengths."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths <= 0):
        raise DomainError("segment_mean: empty segment")
    if int(lengths.sum()) != a.shape[0]:
        raise ShapeError(f"segment lengths sum to {lengths.sum()}, tensor has {a.shape[0]} rows")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    out = np.add.reduceat(a.values, starts, axis=0) / lengths[:, None]
    return _result(out, (a,), lambda g: (np.repeat(g / lengths[:, None], lengths, axis=0),))


# --- gradient control -------------------------------------------------------

def stop_gradient(a: Tensor) -> Tensor:
    """Forward identity that contributes no gradient to ``a``."""
    values = a.values if _tape is None else _tape.handle(a.values)
    return Tensor(values, stop_gradient=True)


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _result(a.values * mask, (a,), lambda g: (g * mask,))


# --- loss -------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of two-class ``logits`` (n x 2)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.values.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"logits must be n x 2, got {logits.shape}")
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    if np.any((labels < 0) | (labels > 1)):
        raise DomainError("labels must be 0 or 1")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = labels.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    probs = np.exp(z - lse[:, None])
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0

    return _result(np.asarray(loss), (logits,), lambda g: (float(g) * (probs - onehot) / n,))


# --- backward ---------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every requires_grad ancestor."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --- finite-difference oracle ----------------------------------------------

@contextlib.contextmanager
def _recording(tape: _StopGradTape):
    global _tape
    prev, _tape = _tape, tape
    try:
        yield tape
    finally:
        _tape = prev


def _relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numerical_gradients(
    f: Callable[[], Tensor], inputs: Iterable[Tensor], step: float = 1e-5
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Return (analytic, central-difference) gradients of scalar ``f()``.

    Values detached with :func:`stop_gradient` are recorded on the first
    evaluation and held fixed during the perturbed evaluations, so the
    difference quotient sees them as constants.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    inputs = list(inputs)
    tape = _StopGradTape()
    for x in inputs:
        x.zero_grad()
    with _recording(tape):
        out = f()
    if out.size != 1:
        raise ShapeError("f must return a scalar")
    base = float(out.values.reshape(-1)[0])
    backward(out)
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    def evaluate() -> float:
        tape.replaying, tape.cursor = True, 0
        with _recording(tape):
            return float(f().values.reshape(-1)[0])

    if evaluate() != base:
        raise NonDeterministicError("f is not deterministic; disable dropout before checking gradients")

    numeric = []
    for x in inputs:
        est = np.zeros(x.shape)
        flat = x.values.reshape(-1)
        est_flat = est.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate()
            flat[i] = orig - step
            down = evaluate()
            flat[i] = orig
            est_flat[i] = (up - down) / (2.0 * step)
        numeric.append(est)
    return analytic, numeric


def check_gradients(f: Callable[[], Tensor], inputs: Iterable[Tensor], step: float = 1e-5) -> float:
    """Max elementwise relative error between backward and central differences."""
    analytic, numeric = numerical_gradients(f, inputs, step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            worst = max(worst, float(_relative_error(a, n).max()))
    return worst
