"""Reverse-mode automatic differentiation over dense float64 arrays.

The computation graph is recorded eagerly as operations execute and is
walked once, in reverse topological order, by :meth:`Tensor.backward`.
Scope is deliberately narrow: exactly the operations the pose pipeline
needs, all in 64-bit, all deterministic. This is not a general autodiff
framework.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865475244
_INV_SQRT_2PI = 0.3989422804014326779

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; message carries both."""


class ConfigError(ValueError):
    """Raised when a configuration cannot produce a valid geometry."""


class no_grad:
    """Context manager that disables graph recording (pure evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    ``data`` is always C-contiguous float64 (row-major). Leaf tensors
    created with ``requires_grad=True`` receive their accumulated gradient
    in ``grad`` after ``backward()``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient requires a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # --- operator sugar -------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    """Leaf tensor that participates in gradient accumulation."""
    return Tensor(data, requires_grad=True, name=name)


def _toposort(root):
    order, seen = [], set()
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
        for p in node._parents:
            stack.append((p, False))
    order.reverse()
    return order


def _make(data, parents, vjp):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- arithmetic ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,))


# --- shape juggling -----------------------------------------------------


def reshape(x, shape):
    x = as_tensor(x)
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along ``axis``."""
    x = as_tensor(x)
    idx = tuple(
        slice(start, start + length) if d == axis else slice(None) for d in range(x.data.ndim)
    )

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), vjp)


def repeat_rows(x, n):
    """Tile a vector into n identical rows; gradient sums back over rows."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"repeat_rows expects a vector, got {x.data.shape}")
    return _make(
        np.broadcast_to(x.data, (n, x.data.shape[0])).copy(),
        (x,),
        lambda g: (g.sum(axis=0),),
    )


def gather_rows(x, index):
    """Select rows of a 2-d tensor; duplicate indices accumulate gradient."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-d tensor, got {x.data.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(x.data[index], (x,), vjp)


# --- reductions ---------------------------------------------------------


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# --- neural primitives --------------------------------------------------


def softmax(x, axis=-1):
    """Stable softmax along ``axis``; rows sum to one."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)

    return _make(y, (x,), vjp)


def gelu(x):
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF (erf form)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _make(y, (x,), vjp)


def smooth_l1(x, beta):
    """Elementwise smooth-L1: x^2/(2*beta) inside |x|<=beta, |x|-beta/2 outside.

    Continuous at the joint, where both branches equal beta/2.
    """
    x = as_tensor(x)
    a = np.abs(x.data)
    inner = a <= beta
    y = np.where(inner, x.data * x.data * (0.5 / beta), a - 0.5 * beta)

    def vjp(g):
        return (g * np.where(inner, x.data / beta, np.sign(x.data)),)

    return _make(y, (x,), vjp)


def row_norms(x):
    """Euclidean norm of each row of a 2-d tensor."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=1))

    def vjp(g):
        safe = np.maximum(n, 1e-300)
        return ((g / safe)[:, None] * x.data,)

    return _make(n, (x,), vjp)


def neg_xlogx(x):
    """Elementwise -x*log(x) with the 0*log(0) = 0 convention."""
    x = as_tensor(x)
    pos = x.data > 0.0
    lx = np.log(np.where(pos, x.data, 1.0))
    y = np.where(pos, -x.data * lx, 0.0)

    def vjp(g):
        return (g * np.where(pos, -(lx + 1.0), 0.0),)

    return _make(y, (x,), vjp)


def conv3x3(x, kernel, bias):
    """Zero-padded stride-1 3x3 cross-correlation on an H x W x C_in grid.

    ``kernel`` has shape (3, 3, C_in, C_out); output is H x W x C_out.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    h, w, cin = x.data.shape
    if kernel.data.shape[:3] != (3, 3, cin):
        raise ShapeError(
            f"conv3x3 kernel {kernel.data.shape} does not match input channels of {x.data.shape}"
        )
    cout = kernel.data.shape[3]
    padded = np.zeros((h + 2, w + 2, cin))
    padded[1 : h + 1, 1 : w + 1] = x.data
    cols = np.empty((h * w, 9 * cin))
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[:, k * cin : (k + 1) * cin] = padded[di : di + h, dj : dj + w].reshape(h * w, cin)
    wmat = kernel.data.reshape(9 * cin, cout)
    out = (cols @ wmat + bias.data).reshape(h, w, cout)

    def vjp(g):
        g2 = g.reshape(h * w, cout)
        gk = (cols.T @ g2).reshape(3, 3, cin, cout)
        gb = g2.sum(axis=0)
        gcols = g2 @ wmat.T
        gpad = np.zeros_like(padded)
        for k in range(9):
            di, dj = divmod(k, 3)
            gpad[di : di + h, dj : dj + w] += gcols[:, k * cin : (k + 1) * cin].reshape(h, w, cin)
        return (gpad[1 : h + 1, 1 : w + 1], gk, gb)

    return _make(out, (x, kernel, bias), vjp)


def extract_patches(x, k, stride, pad):
    """Gather overlapping k x k patches from an (H, W, C) grid.

    Zero padding ``pad`` on each border, window step ``stride``; output is
    (H_out * W_out, k*k*C) with H_out = floor((H + 2*pad - k)/stride) + 1,
    rows in row-major patch order, columns ordered (di, dj, channel).
    """
    x = as_tensor(x)
    h, w, c = x.data.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigError(
            f"patch geometry k={k} stride={stride} pad={pad} yields no output for input {(h, w)}"
        )
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c))
    padded[pad : pad + h, pad : pad + w] = x.data
    cols = np.empty((h_out, w_out, k * k * c))
    for a in range(k):
        for b in range(k):
            view = padded[a : a + stride * (h_out - 1) + 1 : stride,
                          b : b + stride * (w_out - 1) + 1 : stride]
            cols[:, :, (a * k + b) * c : (a * k + b + 1) * c] = view
    out = cols.reshape(h_out * w_out, k * k * c)

    def vjp(g):
        g3 = g.reshape(h_out, w_out, k * k * c)
        gpad = np.zeros_like(padded)
        for a in range(k):
            for b in range(k):
                gpad[a : a + stride * (h_out - 1) + 1 : stride,
                     b : b + stride * (w_out - 1) + 1 : stride] += g3[
                    :, :, (a * k + b) * c : (a * k + b + 1) * c
                ]
        return (gpad[pad : pad + h, pad : pad + w],)

    return _make(out, (x,), vjp)


def _interp_matrix(n_in, n_out):
    """Half-pixel-center linear interpolation weights, one output row each."""
    m = np.zeros((n_out, n_in))
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def bilinear_upsample(x, h_out, w_out):
    """Resize an H x W x C grid with half-pixel-center bilinear sampling."""
    x = as_tensor(x)
    h, w, _ = x.data.shape
    if h_out < h or w_out < w:
        raise ShapeError(f"bilinear_upsample target {(h_out, w_out)} smaller than input {(h, w)}")
    wr = _interp_matrix(h, h_out)
    wc = _interp_matrix(w, w_out)
    out = np.einsum("Ii,Jj,ijc->IJc", wr, wc, x.data, optimize=True)

    def vjp(g):
        return (np.einsum("Ii,Jj,IJc->ijc", wr, wc, g, optimize=True),)

    return _make(out, (x,), vjp)
