"""Minimal dense tensor with reverse-mode automatic differentiation.

Data lives in a numpy array in double precision. Every operation is a
`Function` subclass with a `forward` over raw arrays and a `backward` that maps
the output gradient to one gradient per parent. The graph is rebuilt on each
forward pass (define-by-run) and walked in reverse topological order by
`backward`.

Broadcasting is limited to what the classifier needs: one operand may be
broadcast into the other (bias vectors, positional tables, scalars), but the
result must have the shape of one of the operands.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NonFiniteError, NonScalarLossError, ShapeMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    return arr


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    try:
        shape = tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a} and {b} are incompatible") from None
    if shape != tuple(a) and shape != tuple(b):
        raise ShapeMismatchError(f"{op}: shapes {a} and {b} would broadcast to a new shape {shape}")
    return shape


class Function:
    """A differentiable operation recorded in the graph."""

    def __init__(self, *parents: "Tensor"):
        self.parents = parents

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        _check_finite(out, cls.__name__)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor._from_op(out, fn if requires_grad else None, requires_grad)


class Tensor:
    """Dense float64 array plus an optional link to the op that produced it."""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = _check_finite(np.array(data, dtype=np.float64), "Tensor")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, ctx: Optional[Function], requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out._ctx = ctx
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLossError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic
    def __add__(self, other) -> "Tensor":
        return Add.apply(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return Mul.apply(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return Mul.apply(self, Tensor(-1.0))

    def __sub__(self, other) -> "Tensor":
        return Add.apply(self, -as_tensor(other))

    def __matmul__(self, other) -> "Tensor":
        return MatMul.apply(self, as_tensor(other))

    # structure
    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return Sum.apply(self, axis=axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes)

    def broadcast_to(self, shape: Tuple[int, ...]) -> "Tensor":
        return BroadcastTo.apply(self, shape=tuple(shape))

    def select(self, axis: int, index: int) -> "Tensor":
        return Select.apply(self, axis=axis, index=index)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    return Tensor(data, requires_grad=True)


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        _result_shape(a.shape, b.shape, "add")
        return a + b

    def backward(self, grad):
        sa, sb = self.shapes
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Mul(Function):
    def forward(self, a, b):
        _result_shape(a.shape, b.shape, "multiply")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Sum(Function):
    def forward(self, a, axis=None):
        self.shape, self.axis = a.shape, axis
        return np.asarray(a.sum(axis=axis))

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=()):
        self.axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
        return a.transpose(self.axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class BroadcastTo(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return np.broadcast_to(a, shape).copy()

    def backward(self, grad):
        return (_unbroadcast(grad, self.shape),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [arr.shape[axis] for arr in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Select(Function):
    def forward(self, a, axis=0, index=0):
        self.shape, self.axis, self.index = a.shape, axis, index
        return np.take(a, index, axis=axis)

    def backward(self, grad):
        out = np.zeros(self.shape)
        where = [slice(None)] * len(self.shape)
        where[self.axis] = self.index
        out[tuple(where)] = grad
        return (out,)


class Softmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.axis = axis
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps=1e-5):
        width = x.shape[-1]
        if gain.shape != (width,) or bias.shape != (width,):
            raise ShapeMismatchError(
                f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last axis {width}"
            )
        centred = x - x.mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
        self.xhat = centred * self.inv_std
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, grad):
        lead = tuple(range(grad.ndim - 1))
        g_gain = (grad * self.xhat).sum(axis=lead)
        g_bias = grad.sum(axis=lead)
        gx_hat = grad * self.gain
        gx = self.inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - self.xhat * (gx_hat * self.xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias


class Gelu(Function):
    def forward(self, a):
        self.a = a
        self.cdf = 0.5 * (1.0 + erf(a / math.sqrt(2.0)))
        return a * self.cdf

    def backward(self, grad):
        pdf = np.exp(-0.5 * self.a**2) / math.sqrt(2.0 * math.pi)
        return (grad * (self.cdf + self.a * pdf),)


class CrossEntropy(Function):
    """Mean negative log-likelihood of integer `labels` under softmax(logits)."""

    def forward(self, logits, labels=None):
        labels = np.asarray(labels, dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise ShapeMismatchError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        self.probs = np.exp(log_probs)
        self.labels = labels
        rows = np.arange(labels.shape[0])
        return np.asarray(-log_probs[rows, labels].mean())

    def backward(self, grad):
        n = self.labels.shape[0]
        g = self.probs.copy()
        g[np.arange(n), self.labels] -= 1.0
        return (grad * g / n,)


# functional surface

def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise `add` or `multiply` of two same-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{kind}: shapes {a.shape} and {b.shape} differ")
    if kind == "add":
        return Add.apply(a, b)
    if kind in ("mul", "multiply"):
        return Mul.apply(a, b)
    raise ValueError(f"unknown elementwise op: {kind}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(as_tensor(x), axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(as_tensor(x), as_tensor(gain), as_tensor(bias), eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(as_tensor(x))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return x * Tensor((x.data > 0).astype(np.float64))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*[as_tensor(t) for t in tensors], axis=axis)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    return CrossEntropy.apply(as_tensor(logits), labels=labels)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, parameters: Optional[Sequence[Tensor]] = None) -> List[np.ndarray]:
    """Populate `.grad` on every leaf reachable from the scalar `loss`.

    Leaf gradients are replaced, not accumulated. Parameters passed in but not
    reachable from `loss` receive a zero gradient. Returns the gradients of
    `parameters` in order (empty list when none are given).
    """
    if loss.size != 1:
        raise NonScalarLossError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None:
            node.grad = g
            continue
        for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if parameters is None:
        return []
    reached = {id(n) for n in _topological_order(loss)}
    for p in parameters:
        if id(p) not in reached or p.grad is None:
            p.grad = np.zeros_like(p.data)
    return [p.grad for p in parameters]


@dataclass
class AdamState:
    """Optimizer state: one first/second moment accumulator per parameter."""

    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_parameters(cls, params: Sequence[Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to `params` in place."""
    if state.learning_rate <= 0:
        raise ConfigError(f"learning rate must be positive, got {state.learning_rate}")
    if len(params) != len(grads):
        raise ShapeMismatchError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeMismatchError("adam_step: optimizer state was built for a different parameter list")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.data.shape or state.first_moment[i].shape != p.data.shape:
            raise ShapeMismatchError(f"adam_step: gradient {g.shape} vs parameter {p.data.shape}")
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return state


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, indices: Sequence[int], step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar `fn()` w.r.t. flat `indices` of `param`."""
    flat = param.data.reshape(-1)
    out = np.zeros(len(indices))
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        out[n] = (plus - minus) / (2.0 * step)
    return out


def gradient_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    # ||analytic - numeric|| over the larger norm; two numerically zero gradients count as exact
    rng = np.random.default_rng(seed)
    backward(fn(), params)
    worst = 0.0
    for p in params:
        analytic_all = p.grad.reshape(-1).copy()
        indices = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            indices = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        numeric = numerical_gradient(fn, p, indices, step)
        analytic = analytic_all[indices]
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        if denom < 1e-10:
            continue
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
