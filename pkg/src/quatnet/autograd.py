"""A small define-by-run reverse-mode autodiff engine over numpy arrays.

Every forward op returns a new :class:`Tensor` holding a closure that maps the
output gradient to one gradient per parent. :meth:`Tensor.backward` orders the
graph topologically and runs those closures once each, in reverse.

Quaternion-valued quantities live as four real lanes, so the gradient a
quaternion parameter receives is just its four real partial derivatives,
which is the quaternion gradient ``dL/da + i dL/db + j dL/dc + k dL/dd``.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeError

class _Mode(threading.local):
    # per-thread so parallel verification cases do not disable each other's tapes
    grad_enabled = True
    check_finite = True


_mode = _Mode()


@contextlib.contextmanager
def no_grad():
    prev, _mode.grad_enabled = _mode.grad_enabled, False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def set_check_finite(flag: bool) -> bool:
    """Toggle the per-op NaN/Inf check for this thread; returns the previous setting."""
    prev, _mode.check_finite = _mode.check_finite, bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{rg})"

    def __len__(self):
        return len(self.data)

    # -- graph ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._backward is None:
                raise RuntimeError(f"no backward rule registered for op '{node.op}'")
            pgrads = node._backward(g)
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"backward of '{node.op}' produced gradient {pg.shape} for input {parent.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

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


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        st = state.get(key)
        if st == 2:
            continue
        if st == 1:
            raise RuntimeError(f"cycle detected in autodiff graph at op '{node.op}'")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            ps = state.get(id(p))
            if ps == 1:
                raise RuntimeError(f"cycle detected in autodiff graph at op '{p.op}'")
            if ps is None and (p._parents or p.requires_grad):
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _mode.check_finite:
        s = np.sum(data)
        if not np.isfinite(s) and not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bcast_check("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bcast_check("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bcast_check("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bcast_check("div", a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions and shape ops --------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1) if axis is not None else a.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "mean")


def center(a: Tensor, axis) -> tuple[Tensor, np.ndarray]:
    """``a - mean(a, axis)`` as one op; also returns the (keepdims) mean, off the tape."""
    mu = np.mean(a.data, axis=axis, keepdims=True)

    def backward(g):
        return (g - np.mean(g, axis=axis, keepdims=True),)

    return _make(a.data - mu, (a,), backward, "center"), mu


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (view) indexing; the backward scatters into zeros."""

    def backward(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(np.array(a.data[idx]), (a,), backward, "slice")


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice: range [{start}, {stop}) out of bounds for axis {axis} of {a.shape}")
    return getitem(a, tuple(idx))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def gather(a: Tensor, index) -> Tensor:
    """``a[..., index]``; repeated indices accumulate their gradients."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        res = np.zeros_like(a.data)
        np.add.at(res, (Ellipsis, index), g)
        return (res,)

    return _make(a.data[..., index], (a,), backward, "gather")


def downsample(a: Tensor, stride: int) -> Tensor:
    """Keep every ``stride``-th pixel of an (N, C, H, W) map."""
    return getitem(a, (slice(None), slice(None), slice(None, None, stride), slice(None, None, stride)))


def global_avg_pool(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected (N, C, H, W), got {a.shape}")
    return mean(a, axis=(2, 3))


# -- linear algebra ------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Real 2-D cross-correlation, NCHW input and (O, C, kh, kw) weights."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ShapeError(f"conv2d: input {x.shape} has {c} channels but weight {w.shape} expects {ci}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    oh, ow = _kernels.out_size(h, wd, kh, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {x.shape} with padding {padding}")
    k = kh * kw * c
    xh = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # NHWC
    direct = kh == 1 and kw == 1 and padding == 0
    if direct:
        cols = np.ascontiguousarray(xh[:, ::stride, ::stride, :]).reshape(-1, c)
    else:
        cols = _kernels.im2col(xh, kh, kw, stride, padding)  # (N*oh*ow, kh*kw*C)
    wmat = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0)).reshape(k, o)
    out = (cols @ wmat).reshape(n, oh, ow, o)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gx = gw = None
        if x.requires_grad:
            gcols = gt @ wmat.T
            if direct:
                gxh = np.zeros((n, h, wd, c), dtype=g.dtype)
                gxh[:, ::stride, ::stride, :] = gcols.reshape(n, oh, ow, c)
            else:
                gxh = _kernels.col2im(gcols, (n, h, wd, c), kh, kw, stride, padding)
            gx = np.ascontiguousarray(gxh.transpose(0, 3, 1, 2))
        if w.requires_grad:
            gw = np.ascontiguousarray((cols.T @ gt).reshape(kh, kw, c, o).transpose(3, 2, 0, 1))
        if bias is None:
            return gx, gw
        return gx, gw, gt.sum(axis=0)

    return _make(out, parents, backward, "conv2d")


# -- losses --------------------------------------------------------------------
def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(logits), logits (N, K)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy")


def sigmoid_binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 ``targets``."""
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"sigmoid_binary_cross_entropy: logits {logits.shape} vs targets {t.shape}")
    x = logits.data
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()

    def backward(g):
        return ((_sigmoid(x) - t) * (g / x.size),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "sigmoid_bce")


# -- verification --------------------------------------------------------------
def numerical_gradient(f: Callable[..., Tensor], xs: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``f(*xs)`` with respect to every entry of every ``xs``."""
    out = []
    with no_grad():
        for x in xs:
            grad = np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _scalar(f(*xs))
                flat[i] = orig - eps
                fm = _scalar(f(*xs))
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * eps)
            out.append(grad)
    return out


def _scalar(t) -> float:
    t = as_tensor(t)
    if t.size != 1:
        raise ShapeError(f"grad_check: function must return a scalar, got shape {t.shape}")
    return float(t.data.reshape(-1)[0])


def grad_check(f: Callable[..., Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``x`` is a Tensor or a list of Tensors; ``f`` is called as ``f(*xs)``.
    Tensors are perturbed in place, so closures over layer parameters work.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        y = f(*xs)
        _scalar(y)
        y.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]
        numeric = numerical_gradient(f, xs, eps)
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g
    err = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            err = max(err, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))))
    return err
