"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps an ndarray and records the operations applied to it; calling
`backward` on a scalar walks the tape and fills `.grad` on every reachable
tensor that requires gradients. Training runs in float32; gradient-check
suites build float64 tensors so finite-difference tolerances stay honest.

All reductions go through numpy's deterministic single-order kernels, so a
fixed seed gives bitwise-identical runs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: reduce `grad` back to `shape`."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from extent 1
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _coerce_like(self, x) -> "Tensor":
        """Wrap scalars at this tensor's dtype so float32 math stays float32."""
        if isinstance(x, Tensor):
            return x
        if isinstance(x, (int, float, np.floating, np.integer)):
            return Tensor(np.asarray(x, dtype=self.data.dtype))
        return Tensor(x)

    def __add__(self, other):
        other = self._coerce_like(other)
        a, b = self, other
        out_data = a.data + b.data

        def backward(g):
            return (_sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            return (-g,)

        return Tensor._make(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce_like(other))

    def __rsub__(self, other):
        return self._coerce_like(other) + (-self)

    def __mul__(self, other):
        other = self._coerce_like(other)
        a, b = self, other
        out_data = a.data * b.data

        def backward(g):
            return (
                _sum_to_shape(g * b.data, a.data.shape),
                _sum_to_shape(g * a.data, b.data.shape),
            )

        return Tensor._make(out_data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce_like(other)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g):
            return (
                _sum_to_shape(g / b.data, a.data.shape),
                _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape),
            )

        return Tensor._make(out_data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce_like(other) / self

    def __pow__(self, exponent: float):
        a = self
        out_data = a.data ** exponent

        def backward(g):
            return (g * exponent * a.data ** (exponent - 1),)

        return Tensor._make(out_data, (a,), backward)

    # -- shaping --------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def backward(g):
            return (g.reshape(a.data.shape),)

        return Tensor._make(out_data, (a,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = np.argsort(axes)

        def backward(g):
            return (g.transpose(inverse),)

        return Tensor._make(a.data.transpose(axes), (a,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            g_ = g
            if not keepdims:
                g_ = np.expand_dims(g, axis)
            return (np.broadcast_to(g_, a.data.shape).copy(),)

        return Tensor._make(out_data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise ----------------------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            return (g * out_data,)

        return Tensor._make(out_data, (a,), backward)

    def log(self) -> "Tensor":
        a = self

        def backward(g):
            return (g / a.data,)

        return Tensor._make(np.log(a.data), (a,), backward)

    def sqrt(self) -> "Tensor":
        a = self
        out_data = np.sqrt(a.data)

        def backward(g):
            return (g * (0.5 / out_data),)

        return Tensor._make(out_data, (a,), backward)

    def tanh(self) -> "Tensor":
        a = self
        out_data = np.tanh(a.data)

        def backward(g):
            return (g * (1.0 - out_data * out_data),)

        return Tensor._make(out_data, (a,), backward)

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(
                f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}"
            )
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(
                f"matmul inner extents differ: {a.shape} vs {b.shape}"
            )
        out_data = np.matmul(a.data, b.data)

        def backward(g):
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            if b.ndim == 2 and g.ndim > 2:
                # batched activations x 2D weight: one flat GEMM instead of a
                # batched product followed by a reduction
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _sum_to_shape(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
            return (_sum_to_shape(ga, a.data.shape), gb)

        return Tensor._make(out_data, (a, b), backward)

    __matmul__ = matmul

    # -- autodiff driver ------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            if node._parents == () or isinstance(node, Parameter):
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g


class Parameter(Tensor):
    """A named leaf tensor with a gradient slot. Names are unique per model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = name
        self.grad = None

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def gradient(self) -> np.ndarray:
        """Accumulated gradient; exact zeros when unreachable from the loss."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


# -- neural-net primitives ----------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = Tensor._coerce(x)
    xd = x.data
    sq = xd * xd
    inner = _GELU_C * (xd + 0.044715 * sq * xd)
    t = np.tanh(inner)
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * sq)
        grad = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        return (g * grad,)

    return Tensor._make(out_data, (x,), backward)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Numerically stabilized softmax along `axis` (max-subtraction)."""
    x = Tensor._coerce(x)
    if axis >= x.ndim or axis < -x.ndim:
        raise IndexError(f"softmax axis {axis} out of range for rank {x.ndim}")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor._make(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine map."""
    x = Tensor._coerce(x)
    if x.shape[-1] == 0:
        raise DimensionError("layer_norm on an empty last axis")
    gain = Tensor._coerce(gain)
    bias = Tensor._coerce(bias)
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise DimensionError(
            f"layer_norm gain/bias extent {gain.shape}/{bias.shape} "
            f"does not match last axis of {x.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gain + bias


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch, log-sum-exp stabilized.

    logits: (B, M); labels: int array (B,).
    """
    logits = Tensor._coerce(logits)
    b, m = logits.shape
    onehot = np.zeros((b, m), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - shift
    lse = z.exp().sum(axis=1, keepdims=True).log()
    picked = (z * Tensor(onehot)).sum(axis=1, keepdims=True)
    return (lse - picked).mean()
