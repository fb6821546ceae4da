"""Reverse-mode differentiation on numpy arrays.

A ``Tape`` records every operation whose inputs require gradients while it is
the active tape (``with Tape() as tape:``). Nodes are appended in creation
order, which is a topological order, so ``backward`` walks the list in reverse
and visits each node exactly once. Outside of a tape the same operations run as
plain numpy code and build no graph.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

_TAPE_STACK: List["Tape"] = []


def active_tape() -> Optional["Tape"]:
    """Return the innermost active tape, or None when recording is off."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse mode."""

    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value)
        if self.value.dtype.kind in "iub":
            self.value = self.value.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    # Arithmetic sugar
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named trainable leaf. Frozen parameters never receive gradients."""

    def __init__(self, value, name: str = "", frozen: bool = False):
        array = np.array(value)
        if array.dtype.kind != "f":
            array = array.astype(np.float64)
        super().__init__(array, requires_grad=not frozen, name=name)

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    def freeze(self):
        self.requires_grad = False

    def unfreeze(self):
        self.requires_grad = True


ArrayLike = Union[Tensor, np.ndarray, float, int]


class Tape:
    """Records operations and runs the backward pass."""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.logger = logging.getLogger(__name__)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("Tape stack corrupted: exited a tape that was not innermost")
        return False

    def record(self, node: Tensor):
        self.nodes.append(node)

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Intermediate gradients are kept in a local buffer; only leaves
        (parameters and user tensors) get their ``.grad`` accumulated.
        """
        if not loss.requires_grad:
            return
        seed = np.ones_like(loss.value) if grad is None else np.asarray(grad, dtype=loss.value.dtype)
        buffers = {id(loss): seed}
        for node in reversed(self.nodes):
            g = buffers.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.value)
                    parent.grad = parent.grad + pg
                else:
                    key = id(parent)
                    buffers[key] = buffers[key] + pg if key in buffers else pg
        self.nodes.clear()


def lift(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_node(value: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap ``value`` as the output of an operation on ``parents``."""
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, lift(b, a)
    b = lift(b)
    return lift(a, b), b


# Elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.value + b.value, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.value - b.value, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.value * b.value, (a, b),
                     lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.value / b.value
    return make_node(out, (a, b),
                     lambda g: (unbroadcast(g / b.value, a.shape),
                                unbroadcast(-g * out / b.value, b.shape)))


def neg(a: Tensor) -> Tensor:
    a = lift(a)
    return make_node(-a.value, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    a = lift(a)
    return make_node(a.value ** exponent, (a,),
                     lambda g: (g * exponent * a.value ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    a = lift(a)
    out = np.exp(a.value)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = lift(a)
    return make_node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a: Tensor) -> Tensor:
    a = lift(a)
    out = np.sqrt(a.value)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a: Tensor) -> Tensor:
    a = lift(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    a = lift(a)
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def minimum(a: Tensor, bound: float) -> Tensor:
    """Elementwise min against a constant; gradient is zero where clamped."""
    a = lift(a)
    mask = a.value < bound
    return make_node(np.where(mask, a.value, bound).astype(a.dtype), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    a = lift(a)
    return make_node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


# Reductions and shape

def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    return make_node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,),
                     lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    out = np.mean(a.value, axis=axis, keepdims=keepdims)
    count = a.value.size / max(np.asarray(out).size, 1)
    return make_node(out, (a,),
                     lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def reshape(a: Tensor, shape) -> Tensor:
    a = lift(a)
    return make_node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = lift(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes (batched matrix transpose)."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    a = lift(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return make_node(a.value[index], (a,), backward)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.value for t in ts], axis=axis), ts, backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [lift(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_node(np.stack([t.value for t in ts], axis=axis), ts, backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product; both operands must be at least 2-D."""
    a, b = _pair(a, b)

    def backward(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(a.value @ b.value, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = lift(a)
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_node(out, (a,), backward)


# Image primitives (H x W x C layout)

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution via im2col; ``weight`` is (k, k, C_in, C_out)."""
    x = lift(x)
    weight = lift(weight, x)
    k = weight.shape[0]
    c_in, c_out = weight.shape[2], weight.shape[3]
    xp = np.pad(x.value, ((padding, padding), (padding, padding), (0, 0))) if padding else x.value
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    windows = windows[::stride, ::stride][:ho, :wo]          # (ho, wo, C_in, k, k)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, k * k * c_in)
    wmat = weight.value.reshape(k * k * c_in, c_out)
    out = (cols @ wmat).reshape(ho, wo, c_out)
    parents = [x, weight]
    if bias is not None:
        bias = lift(bias, x)
        out = out + bias.value
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(ho * wo, c_out)
        gw = (cols.T @ g2).reshape(weight.shape)
        gcols = (g2 @ wmat.T).reshape(ho, wo, k, k, c_in)
        gxp = np.zeros((hp, wp, c_in), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gxp[i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        gx = gxp[padding:hp - padding, padding:wp - padding] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return make_node(out, parents, backward)


def neighbors3x3(x: Tensor) -> Tensor:
    """Stack the 3x3 neighbourhood of every pixel with edge replication.

    Output is (H, W, 9, C); slot 4 is the pixel itself, slots are row-major
    over offsets (-1, 0, +1) x (-1, 0, +1).
    """
    x = lift(x)
    h, w = x.shape[0], x.shape[1]
    rows = np.clip(np.arange(h)[:, None] + np.array([-1, 0, 1])[None, :], 0, h - 1)
    cols = np.clip(np.arange(w)[:, None] + np.array([-1, 0, 1])[None, :], 0, w - 1)
    ri = np.repeat(rows, 3, axis=1)                           # (H, 9)
    ci = np.tile(cols, (1, 3))                                # (W, 9)
    r_idx = np.broadcast_to(ri[:, None, :], (h, w, 9))
    c_idx = np.broadcast_to(ci[None, :, :], (h, w, 9))
    out = x.value[r_idx, c_idx]

    def backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, (r_idx, c_idx), g)
        return (full,)

    return make_node(out, (x,), backward)


def bilinear_sample(grid: Tensor, coords: Tensor) -> Tensor:
    """Sample a (R0, R1, D) grid at continuous cell coordinates (N, 2).

    ``coords[:, 0]`` indexes axis 0 and ``coords[:, 1]`` axis 1; queries are
    clamped to the grid border.
    """
    grid = lift(grid)
    coords = lift(coords, grid)
    r0, r1 = grid.shape[0], grid.shape[1]
    idx, weights, inside = bilinear_weights(coords.value, (r0, r1))
    (i0, i1, j0, j1) = idx
    w00, w01, w10, w11 = weights
    gv = grid.value
    out = (w00[:, None] * gv[i0, j0] + w01[:, None] * gv[i0, j1]
           + w10[:, None] * gv[i1, j0] + w11[:, None] * gv[i1, j1])

    def backward(g):
        ggrid = np.zeros_like(gv)
        np.add.at(ggrid, (i0, j0), w00[:, None] * g)
        np.add.at(ggrid, (i0, j1), w01[:, None] * g)
        np.add.at(ggrid, (i1, j0), w10[:, None] * g)
        np.add.at(ggrid, (i1, j1), w11[:, None] * g)
        fu = coords.value[:, 0] - i0
        fv = coords.value[:, 1] - j0
        d_du = (-(1 - fv)[:, None] * gv[i0, j0] - fv[:, None] * gv[i0, j1]
                + (1 - fv)[:, None] * gv[i1, j0] + fv[:, None] * gv[i1, j1])
        d_dv = (-(1 - fu)[:, None] * gv[i0, j0] + (1 - fu)[:, None] * gv[i0, j1]
                - fu[:, None] * gv[i1, j0] + fu[:, None] * gv[i1, j1])
        gcoords = np.stack([np.sum(d_du * g, axis=1) * inside[:, 0],
                            np.sum(d_dv * g, axis=1) * inside[:, 1]], axis=1)
        return ggrid, gcoords

    return make_node(out, (grid, coords), backward)


def bilinear_weights(coords: np.ndarray, resolution: Tuple[int, int]):
    """Corner indices and weights of bilinear interpolation with border clamp.

    Returns ``((i0, i1, j0, j1), (w00, w01, w10, w11), inside)`` where
    ``inside`` flags, per axis, queries that were not clamped.
    """
    r0, r1 = resolution
    lo = np.zeros(2)
    hi = np.array([r0 - 1, r1 - 1], dtype=np.float64)
    clamped = np.clip(coords, lo, hi)
    inside = (coords >= lo) & (coords <= hi)
    i0 = np.minimum(np.floor(clamped[:, 0]).astype(np.int64), max(r0 - 2, 0))
    j0 = np.minimum(np.floor(clamped[:, 1]).astype(np.int64), max(r1 - 2, 0))
    i1 = np.minimum(i0 + 1, r0 - 1)
    j1 = np.minimum(j0 + 1, r1 - 1)
    fu = clamped[:, 0] - i0
    fv = clamped[:, 1] - j0
    w00 = (1 - fu) * (1 - fv)
    w01 = (1 - fu) * fv
    w10 = fu * (1 - fv)
    w11 = fu * fv
    return (i0, i1, j0, j1), (w00, w01, w10, w11), inside.astype(coords.dtype)


def symmetric_matrix_function(m: Tensor, fn: Callable[[np.ndarray], np.ndarray],
                              dfn: Callable[[np.ndarray], np.ndarray],
                              eigh: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]) -> Tensor:
    """Apply a spectral function f(M) = V f(L) V^T to a symmetric matrix.

    The backward pass uses the divided-difference (Daleckii-Krein) formula;
    ``eigh`` returns (eigenvalues, eigenvectors as columns).
    """
    m = lift(m)
    sym = 0.5 * (m.value + m.value.T)
    lam, vecs = eigh(sym)
    f = fn(lam)
    out = (vecs * f[None, :]) @ vecs.T

    def backward(g):
        gs = 0.5 * (g + g.T)
        inner = vecs.T @ gs @ vecs
        diff = lam[:, None] - lam[None, :]
        fdiff = f[:, None] - f[None, :]
        close = np.abs(diff) <= 1e-12 * np.maximum(1.0, np.abs(lam).max())
        dd = dfn(lam)
        safe = np.where(close, 1.0, diff)
        kernel = np.where(close, 0.5 * (dd[:, None] + dd[None, :]), fdiff / safe)
        return (vecs @ (inner * kernel) @ vecs.T,)

    return make_node(out, (m,), backward)
