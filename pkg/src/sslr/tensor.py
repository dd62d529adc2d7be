"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough operations to express the pose-sequence transformer and its
training loop: matmul, elementwise arithmetic, softmax, cross-entropy,
layer norm, relu, shape moves, and reductions. Gradients are define-by-run:
every operation attaches a backward closure to its output node, and
``backward`` replays the closures in reverse topological order.

Shape mixing is deliberately strict. The only implicit alignments are
matrix @ vector and tensor + last-axis vector (bias); stacked matmul is
accepted when the leading dimensions match exactly. Anything else raises
``ShapeError`` naming both shapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes cannot be combined."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf from finite inputs."""


class UsageError(RuntimeError):
    """Tape/optimizer protocol violated, e.g. a step before any backward pass."""


_grad_enabled = True
_finite_checks = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference-only forwards)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-operation NaN/Inf detection; returns the previous setting."""
    global _finite_checks
    prev, _finite_checks = _finite_checks, bool(enabled)
    return prev


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    Leaf tensors created with ``requires_grad=True`` are trainable
    parameters; interior nodes are produced by operations and carry the
    backward closure that routes gradients to their parents. Data is
    treated as read-only once created, except for parameter updates
    applied by the optimizer between forward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Never mutates an existing grad array in place; nodes may share them.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2D@2D, matrix@vector, vector@matrix, and
    stacked nD@nD with identical leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError(f"matmul needs at least 1-D operands, got {ad.shape} @ {bd.shape}")
    if ad.ndim == 1 and bd.ndim == 1:
        raise ShapeError(f"matmul of two vectors is not supported, got {ad.shape} @ {bd.shape}")
    if (ad.ndim == 1 and bd.ndim > 2) or (bd.ndim == 1 and ad.ndim > 2):
        raise ShapeError(f"vector matmul requires a 2-D partner, got {ad.shape} @ {bd.shape}")
    inner_a = ad.shape[-1]
    inner_b = bd.shape[0] if bd.ndim == 1 else bd.shape[-2]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    if ad.ndim > 2 or bd.ndim > 2:
        if ad.shape[:-2] != bd.shape[:-2]:
            raise ShapeError(
                f"stacked matmul requires equal leading dimensions: {ad.shape} @ {bd.shape}"
            )
    data = ad @ bd
    _check_finite(data, "matmul")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            if bd.ndim == 1:  # (m,k)@(k,) -> (m,)
                _accumulate(a, g[:, None] * bd[None, :])
            elif ad.ndim == 1:  # (k,)@(k,n) -> (n,)
                _accumulate(a, bd @ g)
            else:
                _accumulate(a, g @ np.swapaxes(bd, -1, -2))
        if b.requires_grad:
            if ad.ndim == 1:
                _accumulate(b, ad[:, None] * g[None, :])
            elif bd.ndim == 1:
                _accumulate(b, ad.T @ g)
            else:
                _accumulate(b, np.swapaxes(ad, -1, -2) @ g)

    return _node(data, (a, b), backward)


def add(a, b) -> Tensor:
    """Elementwise sum; also accepts a scalar or a last-axis bias vector as ``b``."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        data = a.data + b
        _check_finite(data, "add")

        def backward_scalar(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g)

        return _node(data, (a,), backward_scalar)

    b = _as_tensor(b)
    same = a.data.shape == b.data.shape
    bias = b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]
    if not (same or bias):
        raise ShapeError(f"add shapes incompatible: {a.data.shape} + {b.data.shape}")
    data = a.data + b.data
    _check_finite(data, "add")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            if same:
                _accumulate(b, g)
            else:
                axes = tuple(range(g.ndim - 1))
                _accumulate(b, g.sum(axis=axes) if axes else g)

    return _node(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)) if not isinstance(b, (int, float)) else -b)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a scalar or a tensor of identical shape."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        data = a.data * b
        _check_finite(data, "mul")

        def backward_scalar(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g * b)

        return _node(data, (a,), backward_scalar)

    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes incompatible: {a.data.shape} * {b.data.shape}")
    data = a.data * b.data
    _check_finite(data, "mul")
    ad, bd = a.data, b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * bd)
        if b.requires_grad:
            _accumulate(b, g * ad)

    return _node(data, (a, b), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _node(data, (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)
    src_shape = a.data.shape

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g.reshape(src_shape))

    return _node(data, (a,), backward)


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = _as_tensor(a)
    data = np.swapaxes(a.data, axis1, axis2)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, axis1, axis2))

    return _node(data, (a,), backward)


def first_rows(a, n: int) -> Tensor:
    """The leading ``n`` rows of a matrix; gradient flows into those rows only."""
    a = _as_tensor(a)
    if a.data.ndim < 1 or n > a.data.shape[0]:
        raise ShapeError(f"cannot take {n} leading rows from shape {a.data.shape}")
    data = a.data[:n]
    full_shape = a.data.shape

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            pad = np.zeros(full_shape, dtype=np.float64)
            pad[:n] = g
            _accumulate(a, pad)

    return _node(data, (a,), backward)


def tsum(a) -> Tensor:
    """Sum of all elements (scalar output)."""
    a = _as_tensor(a)
    data = np.asarray(a.data.sum())
    shape = a.data.shape

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, shape).copy() if g.ndim else np.full(shape, float(g)))

    return _node(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (max-subtraction)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    _check_finite(data, "softmax")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            _accumulate(a, data * (g - inner))

    return _node(data, (a,), backward)


def cross_entropy(logits, target_class: int) -> Tensor:
    """Negative log softmax probability of ``target_class`` for a 1-D logit vector.

    Gradient w.r.t. the logits is softmax(logits) - one_hot(target).
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects 1-D logits, got shape {logits.data.shape}")
    num_classes = logits.data.shape[0]
    target_class = int(target_class)
    if not 0 <= target_class < num_classes:
        raise IndexError(
            f"target class {target_class} out of range for {num_classes} classes"
        )
    shifted = logits.data - logits.data.max()
    log_norm = np.log(np.exp(shifted).sum())
    data = np.asarray(log_norm - shifted[target_class])
    _check_finite(data, "cross_entropy")
    probs = np.exp(shifted - log_norm)

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            one_hot = np.zeros(num_classes, dtype=np.float64)
            one_hot[target_class] = 1.0
            _accumulate(logits, float(g) * (probs - one_hot))

    return _node(data, (logits,), backward)


def layer_norm(x, gain, bias) -> Tensor:
    """Zero mean / unit variance over the last axis, then an affine map.

    Uses eps = 1e-5 inside the denominator so constant inputs normalize to
    zeros instead of dividing by zero.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.data.shape[-1]
    if n < 2:
        raise ShapeError(f"layer_norm needs a last axis of size >= 2, got shape {x.data.shape}")
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes must be ({n},), got gain {gain.data.shape}"
            f" and bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    x_hat = centered * inv_std
    data = gain.data * x_hat + bias.data
    _check_finite(data, "layer_norm")

    def backward(g: np.ndarray) -> None:
        if gain.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * x_hat).sum(axis=axes) if axes else g * x_hat)
        if bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=axes) if axes else g)
        if x.requires_grad:
            gx_hat = g * gain.data
            # d/dx of (x - mu) * inv_std with mu, var functions of x.
            gi = gx_hat.sum(axis=-1, keepdims=True)
            gxh = (gx_hat * x_hat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (gx_hat - gi / n - x_hat * gxh / n))

    return _node(data, (x, gain, bias), backward)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS so deep graphs do not hit the recursion limit."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
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


def backward(loss: Tensor) -> None:
    """Run the reverse pass from a scalar loss, accumulating ``grad`` on leaves.

    Each graph node is visited exactly once, in reverse topological order.
    Parameters that did not contribute to the loss keep ``grad = None``,
    which downstream code treats as an exact zero.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward target must be a scalar, got shape {loss.data.shape}")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        fn = node._backward_fn
        if fn is not None:
            fn(node.grad)


class GradientTape:
    """Leaf-parameter registry plus backward bookkeeping for a training step.

    The computation graph itself lives on the tensors (rebuilt on every
    forward pass); the tape tracks which parameters the optimizer owns and
    whether a backward pass has happened since the last update.
    """

    def __init__(self, parameters: Iterable[Tensor]):
        self.parameters: list[Tensor] = list(parameters)
        for p in self.parameters:
            if not p.requires_grad:
                raise UsageError("tape parameters must have requires_grad=True")
        self._backward_done = False

    @property
    def backward_done(self) -> bool:
        return self._backward_done

    def backward(self, loss: Tensor) -> None:
        backward(loss)
        self._backward_done = True

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.grad = None
        self._backward_done = False


class SgdOptimizer:
    """Plain stochastic gradient descent: p <- p - lr * grad(p).

    No momentum or weight decay. ``learning_rate`` may be zero (parameters
    frozen); negative rates are rejected. Gradients are cleared after each
    step, and stepping before a backward pass is a usage error.
    """

    def __init__(self, learning_rate: float):
        if not np.isfinite(learning_rate) or learning_rate < 0.0:
            raise ValueError(f"learning rate must be finite and >= 0, got {learning_rate}")
        self.learning_rate = float(learning_rate)

    def step(self, tape: GradientTape) -> None:
        if not tape.backward_done:
            raise UsageError("sgd step requires a completed backward pass")
        lr = self.learning_rate
        for p in tape.parameters:
            if p.grad is not None:
                p.data -= lr * p.grad
            p.grad = None
        tape._backward_done = False


def sgd_step(optimizer: SgdOptimizer, tape: GradientTape) -> None:
    """Apply one SGD update for every parameter registered on the tape."""
    optimizer.step(tape)
