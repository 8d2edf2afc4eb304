"""Reverse-mode differentiation over dense float64 arrays.

Each op records its parents and a vector-Jacobian product written with the
same ``Tensor`` ops, so a backward pass run with ``create_graph=True``
yields gradients that can themselves be differentiated.

>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> (g,) = grad((x * x).sum(), [x])
>>> g.numpy().tolist()
[2.0, 4.0, 6.0]
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, InvalidParameterError, InvalidShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = enabled
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """An n-d float64 array, optionally a node in the computation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# elementwise and broadcasting
# ---------------------------------------------------------------------------

def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape``; adjoint of :func:`broadcast_to`."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(shape) if d == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    return _node(data, (x,), lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)
    return _node(data, (x,), lambda g: (sum_to(g, x.shape),))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data / b.data, (a, b), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if p == 2:
        return _node(a.data * a.data, (a,), lambda g: (mul(g, mul(a, 2.0)),))
    return _node(a.data ** p, (a,), lambda g: (mul(g, mul(power(a, p - 1), float(p))),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, out),)

    out = _node(np.exp(a.data), (a,), vjp)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    out = _node(np.sqrt(a.data), (a,), vjp)
    return out


def _mask_mul(g, mask: np.ndarray) -> Tensor:
    """g * mask for a constant boolean mask (linear, self-adjoint)."""
    g = as_tensor(g)
    return _node(np.where(mask, g.data, 0.0), (g,), lambda gg: (_mask_mul(gg, mask),))


def relu(x) -> Tensor:
    """max(0, x); the derivative at exactly 0 is taken to be 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (_mask_mul(g, mask),))


def tabs(x) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (mul(g, Tensor(sign)),))


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------------------
# shape ops and reductions
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (reshape(g, x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (transpose(g, inv),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    kept = tuple(1 if i in axes else d for i, d in enumerate(x.shape))

    def vjp(g):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return _node(x.data.sum(axis=axes, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reduce(x, kind: str = "sum") -> Tensor:
    """Reduce every element to a scalar by ``sum`` or ``mean``."""
    if kind == "sum":
        return tsum(x)
    if kind == "mean":
        return mean(x)
    raise InvalidParameterError(f"unknown reduction {kind!r}")


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    return _node(x.data[idx], (x,), lambda g: (index_put(g, idx, x.shape),))


def index_put(g, idx, shape) -> Tensor:
    """Zeros of ``shape`` with ``g`` scatter-added at ``idx``; adjoint of indexing."""
    g = as_tensor(g)
    out = np.zeros(shape)
    np.add.at(out, idx, g.data)
    return _node(out, (g,), lambda gg: (index(gg, idx),))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def vjp(g):
        return tuple(index(g, (slice(None),) * axis + (i,)) for i in range(len(xs)))

    return _node(np.stack([x.data for x in xs], axis=axis), xs, vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def vjp(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp)


def _gather(x: Tensor, flat_idx: np.ndarray) -> Tensor:
    size = x.size
    return _node(np.take(x.data.reshape(-1), flat_idx), (x,),
                 lambda g: (_scatter(g, flat_idx, x.shape, size),))


def _scatter(g: Tensor, flat_idx: np.ndarray, shape, size) -> Tensor:
    data = np.bincount(flat_idx.reshape(-1), weights=g.data.reshape(-1), minlength=size)
    return _node(data.reshape(shape), (g,), lambda gg: (_gather(gg, flat_idx),))


def amax_last2(x) -> Tensor:
    """Max over the last two axes; gradient goes to the first argmax."""
    x = as_tensor(x)
    flat = x.data.reshape(x.shape[:-2] + (-1,))
    arg = flat.argmax(axis=-1)
    base = np.arange(arg.size).reshape(arg.shape) * flat.shape[-1]
    return _gather(x, base + arg)


def amin_last2(x) -> Tensor:
    """Min over the last two axes; gradient goes to the first argmin."""
    return neg(amax_last2(neg(x)))


def _im2col(x: Tensor, kh, kw, stride, pad) -> Tensor:
    shape = x.shape
    return _node(kernels.im2col(x.data, kh, kw, stride, pad), (x,),
                 lambda g: (_col2im(g, shape, kh, kw, stride, pad),))


def _col2im(g: Tensor, shape, kh, kw, stride, pad) -> Tensor:
    return _node(kernels.col2im(g.data, shape, kh, kw, stride, pad), (g,),
                 lambda gg: (_im2col(gg, kh, kw, stride, pad),))


# ---------------------------------------------------------------------------
# network layers
# ---------------------------------------------------------------------------

def conv2d_nhwc(x, kernel, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last cross-correlation: (n, h, w, cin) -> (n, oh, ow, cout).

    The kernel keeps the (cout, cin, kh, kw) layout of :func:`conv2d`.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 4 or kernel.ndim != 4:
        raise InvalidShapeError(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    n, h, w, cin = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise InvalidShapeError(f"kernel expects {kcin} input channels, input has {cin}")
    if bias.shape != (cout,):
        raise InvalidShapeError(f"bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise InvalidShapeError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise InvalidShapeError("kernel larger than padded input")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, padding)
    wmat = reshape(transpose(kernel, (2, 3, 1, 0)), (kh * kw * cin, cout))
    return reshape(matmul(cols, wmat) + bias, (n, oh, ow, cout))


def conv2d(x, kernel, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (n, cin, h, w) input with a (cout, cin, kh, kw) kernel."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"conv2d expects 4-d input, got {x.shape}")
    out = conv2d_nhwc(transpose(x, (0, 2, 3, 1)), kernel, bias, stride, padding)
    return transpose(out, (0, 3, 1, 2))


def maxpool2d_nhwc(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"maxpool2d expects 4-d input, got {x.shape}")
    _, idx = kernels.maxpool_argmax(x.data, k)
    return _gather(x, idx)


def maxpool2d(x, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling of (n, c, h, w); gradient routed to the argmax."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"maxpool2d expects 4-d input, got {x.shape}")
    return transpose(maxpool2d_nhwc(transpose(x, (0, 2, 3, 1)), k), (0, 3, 1, 2))


def linear(x, weight, bias) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise InvalidShapeError(f"linear shapes x{x.shape}, weight{weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise InvalidShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    return matmul(x, transpose(weight)) + bias


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise InvalidShapeError(f"global_avg_pool expects (n,c,h,w), got {x.shape}")
    return mean(x, axis=(2, 3))


def softmax2(z) -> Tensor:
    """Row softmax of (n, 2) logits, shifted by the (gradient-stopped) row max."""
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] != 2:
        raise InvalidShapeError(f"softmax2 expects (n, 2), got {z.shape}")
    shift = Tensor(z.data.max(axis=1, keepdims=True))
    e = exp(z - shift)
    return e / tsum(e, axis=1, keepdims=True)


def log_softmax(z) -> Tensor:
    z = as_tensor(z)
    shift = Tensor(z.data.max(axis=1, keepdims=True))
    shifted = z - shift
    return shifted - log(tsum(exp(shifted), axis=1, keepdims=True))


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * Tensor(keep)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _relevant_postorder(root: Tensor, targets: set) -> list:
    """Post-order of the nodes under ``root`` that lie on a path to a target."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    hit = set()
    for node in order:
        if id(node) in targets or any(id(p) in hit for p in node._parents):
            hit.add(id(node))
    return [node for node in order if id(node) in hit]


def depends_on(out: Tensor, x: Tensor) -> bool:
    """True if ``out`` was computed from ``x`` through recorded ops."""
    order = _relevant_postorder(out, {id(x)})
    return bool(order) and order[-1] is out


def grad(loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Returns a list aligned with ``wrt``. A tensor the loss does not depend on
    gets a zero gradient. With ``create_graph`` the returned gradients are
    graph nodes and can be differentiated again.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    targets = {id(w) for w in wrt}
    order = _relevant_postorder(loss, targets)
    if not order or order[-1] is not loss:
        return [Tensor(np.zeros(w.shape)) for w in wrt]
    keep = {id(node) for node in order}
    grads = {id(loss): Tensor(np.ones(loss.shape))}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            if id(node) not in targets:
                del grads[id(node)]
            pgs = node._vjp(g)
            for p, pg in zip(node._parents, pgs):
                if pg is None or id(p) not in keep:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = Tensor(np.zeros(w.shape))
        elif g.shape != w.shape:
            g = Tensor(np.broadcast_to(g.data, w.shape).copy())
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out


def backward(loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> dict:
    """Like :func:`grad` but returns a map from ``id(param)`` to its gradient."""
    return {id(w): g for w, g in zip(wrt, grad(loss, wrt, create_graph))}
