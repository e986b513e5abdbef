"""Reverse-mode automatic differentiation over dense float64 tensors.

Small tape-free engine: each ``Tensor`` remembers its parents and a VJP
closure.  VJPs are written in terms of engine ops, so calling ``grad`` with
``create_graph=True`` yields gradients that are themselves differentiable —
which is what the exact (second-order) meta-gradient needs.

Only the ops the pose-regression network uses are provided; anything else
raises ``UnsupportedOp`` by simply not existing.
"""

from __future__ import annotations

from contextlib import contextmanager, nullcontext

import numpy as np

from vservo import kernels
from vservo.errors import ShapeMismatch, UnsupportedOp

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad",
    "meta_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "broadcast_to",
    "tsum",
    "tmean",
    "exp",
    "log",
    "sqrt",
    "relu",
    "standardize_hw",
    "concat_last",
    "narrow_last",
    "pad_last",
    "gather_patches",
    "scatter_patches",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """Dense float64 array plus (optionally) its place in the graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _sum_to(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to the given shape."""
    if t.shape == shape:
        return t
    extra = t.ndim - len(shape)
    if extra > 0:
        t = tsum(t, axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(t.shape, shape)) if want == 1 and have != 1)
    if axes:
        t = tsum(t, axis=axes, keepdims=True)
    if t.shape != shape:
        t = reshape(t, shape)
    return t


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data + b.data, (a, b), None)
    if out._parents:
        out._vjp = lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data - b.data, (a, b), None)
    if out._parents:
        out._vjp = lambda g: (_sum_to(g, a.shape), _sum_to(neg(g), b.shape))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data * b.data, (a, b), None)
    if out._parents:
        out._vjp = lambda g: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data / b.data, (a, b), None)
    if out._parents:
        out._vjp = lambda g: (
            _sum_to(div(g, b), a.shape),
            _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape),
        )
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = _node(-a.data, (a,), None)
    if out._parents:
        out._vjp = lambda g: (neg(g),)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = _node(a.data @ b.data, (a, b), None)
    if out._parents:
        out._vjp = lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g))
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch("transpose expects a 2-D tensor")
    # View, not copy: nothing mutates tensor data and BLAS handles strides.
    out = _node(a.data.T, (a,), None)
    if out._parents:
        out._vjp = lambda g: (transpose(g),)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = _node(a.data.reshape(shape), (a,), None)
    if out._parents:
        out._vjp = lambda g: (reshape(g, a.shape),)
    return out


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = _node(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), None)
    if out._parents:
        out._vjp = lambda g: (_sum_to(g, a.shape),)
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)
    if out._parents:

        def vjp(g):
            if axis is None:
                return (broadcast_to(reshape(g, (1,) * a.ndim), a.shape),)
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            if not keepdims:
                kept = [1 if i in axes else d for i, d in enumerate(a.shape)]
                g = reshape(g, kept)
            return (broadcast_to(g, a.shape),)

        out._vjp = vjp
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.exp(a.data), (a,), None)
    if out._parents:
        out._vjp = lambda g: (mul(g, out),)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.log(a.data), (a,), None)
    if out._parents:
        out._vjp = lambda g: (div(g, a),)
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.sqrt(a.data), (a,), None)
    if out._parents:
        out._vjp = lambda g: (div(mul(g, 0.5), out),)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.maximum(a.data, 0.0), (a,), None)
    if out._parents:
        mask = a.data > 0.0

        def vjp(g):
            if _grad_enabled:
                return (mul(g, Tensor(mask.astype(np.float64))),)
            return (Tensor(g.data * mask),)

        out._vjp = vjp
    return out


def standardize_hw(a, eps: float) -> Tensor:
    """Per-sample per-channel standardization over axes (1, 2) of an NHWC
    tensor, fused into one node (the hot normalization layer).

    The backward pass has two equivalent forms: a raw numpy fast path for
    ordinary gradients and an op-composed path that keeps the graph alive
    for higher-order differentiation.
    """
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeMismatch("standardize_hw expects an NHWC tensor")
    m = a.data.mean(axis=(1, 2), keepdims=True)
    d = a.data - m
    v = (d * d).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    out = _node(d * inv, (a,), None)
    if out._parents:
        n_spatial = a.shape[1] * a.shape[2]

        def vjp(g):
            if not _grad_enabled:
                gm = g.data.mean(axis=(1, 2), keepdims=True)
                gd = (g.data * d).mean(axis=(1, 2), keepdims=True)
                return (Tensor(inv * (g.data - gm - d * (inv * inv * gd))),)
            # Rebuild the intermediates from the parent so the expression
            # stays differentiable.
            mt = tmean(a, axis=(1, 2), keepdims=True)
            dt = sub(a, mt)
            vt = tmean(mul(dt, dt), axis=(1, 2), keepdims=True)
            invt = div(1.0, sqrt(add(vt, eps)))
            gm = tmean(g, axis=(1, 2), keepdims=True)
            gd = tmean(mul(g, dt), axis=(1, 2), keepdims=True)
            inner = sub(sub(g, gm), mul(dt, mul(mul(invt, invt), gd)))
            return (mul(invt, inner),)

        out._vjp = vjp
    return out


def concat_last(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.shape[-1] for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), None)
    if out._parents:

        def vjp(g):
            grads, start = [], 0
            for w in widths:
                grads.append(narrow_last(g, start, w))
                start += w
            return tuple(grads)

        out._vjp = vjp
    return out


def narrow_last(a, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    total = a.shape[-1]
    out = _node(np.ascontiguousarray(a.data[..., start : start + length]), (a,), None)
    if out._parents:
        out._vjp = lambda g: (pad_last(g, start, total - start - length),)
    return out


def pad_last(a, before: int, after: int) -> Tensor:
    a = as_tensor(a)
    pads = [(0, 0)] * (a.ndim - 1) + [(before, after)]
    out = _node(np.pad(a.data, pads), (a,), None)
    if out._parents:
        out._vjp = lambda g: (narrow_last(g, before, a.shape[-1]),)
    return out


def gather_patches(a, kernel: int, stride: int, pad: int) -> Tensor:
    """NHWC tensor -> (n*oh*ow, k*k*c) patch matrix (zero padding)."""
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeMismatch("gather_patches expects an NHWC tensor")
    n, h, w, c = a.shape
    out = _node(kernels.extract_patches(a.data, kernel, stride, pad), (a,), None)
    if out._parents:
        out._vjp = lambda g: (scatter_patches(g, (n, h, w, c), kernel, stride, pad),)
    return out


def scatter_patches(a, nhwc: tuple[int, int, int, int], kernel: int, stride: int, pad: int) -> Tensor:
    """Adjoint of gather_patches."""
    a = as_tensor(a)
    n, h, w, c = nhwc
    out = _node(kernels.scatter_patches(a.data, n, h, w, c, kernel, stride, pad), (a,), None)
    if out._parents:
        out._vjp = lambda g: (gather_patches(g, kernel, stride, pad),)
    return out


def _toposort(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, wrt, create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients stay connected to the
    graph and can be differentiated again.  Tensors unreachable from the
    output get zero gradients.
    """
    if not isinstance(output, Tensor):
        raise UnsupportedOp("grad expects a Tensor output")
    if output.data.size != 1:
        raise ShapeMismatch("grad expects a scalar output")
    wrt = list(wrt)
    wrt_ids = {id(w) for w in wrt}

    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(_toposort(output)):
            nid = id(node)
            g = grads.get(nid)
            if g is None:
                continue
            if nid not in wrt_ids:
                del grads[nid]
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                old = grads.get(id(parent))
                grads[id(parent)] = pg if old is None else add(old, pg)
    return [grads.get(id(w), Tensor(np.zeros_like(w.data))) for w in wrt]


def meta_grad(params, inner_closure, outer_closure, alpha: float, first_order: bool = False):
    """Gradient of outer_loss(theta - alpha * grad(inner_loss)) w.r.t. theta.

    ``params`` is a name -> Tensor mapping; both closures take such a mapping
    and return a scalar Tensor.  By default the inner gradient stays in the
    graph, so the result contains the exact second-order term; with
    ``first_order=True`` the inner gradient is treated as a constant.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    names = list(params)
    plist = [params[k] for k in names]
    inner = inner_closure(params)
    inner_grads = grad(inner, plist, create_graph=not first_order)
    adapted = {
        k: sub(p, mul(alpha, g)) for k, p, g in zip(names, plist, inner_grads)
    }
    outer = outer_closure(adapted)
    return dict(zip(names, grad(outer, plist)))
