"""Pure numpy kernels. Same signatures and results as the compiled ``_ckernels``.

Layouts
-------
im2col / col2im work on channels-last images: ``x`` is (N, H, W, C) and the
column matrix is (N*OH*OW, kh*kw*C) with column index ``(i*kw + j)*C + c``.

group_outer / group_mix work on the quaternion-group view (N, 4, G, S) of a
feature map: axis 1 is the quaternion lane, G the channel group, S the
flattened spatial extent.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NotPositiveDefiniteError, SingularTriangularError


def out_size(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def im2col(x, kh, kw, stride, pad):
    n, h, w, c = x.shape
    oh, ow = out_size(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (N, H', W', C, kh, kw)
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, kh * kw * c)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back into an (N, H, W, C) array."""
    n, h, w, c = x_shape
    oh, ow = out_size(h, w, kh, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, kh, kw, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += cols[:, :, :, i, j, :]
    if pad:
        out = out[:, pad:-pad, pad:-pad, :]
    return np.ascontiguousarray(out)


def group_outer(a, b):
    """out[g, p, q] = sum over n, s of a[n, p, g, s] * b[n, q, g, s]."""
    n, four, g, s = a.shape
    at = a.transpose(2, 1, 0, 3).reshape(g, four, n * s)
    bt = b.transpose(2, 1, 0, 3).reshape(g, four, n * s)
    return at @ bt.transpose(0, 2, 1)


def group_mix(m, x, bias=None):
    """y[n, p, g, s] = sum_q m[g, p, q] * x[n, q, g, s] + bias[g, p]."""
    d = x.shape[1]
    y = np.empty_like(x)
    for p in range(d):
        acc = m[:, p, 0][None, :, None] * x[:, 0]
        for q in range(1, d):
            acc += m[:, p, q][None, :, None] * x[:, q]
        if bias is not None:
            acc += bias[:, p][None, :, None]
        y[:, p] = acc
    return y


def chol4(a):
    """Batched lower Cholesky of (G, n, n) symmetric matrices (reads the lower triangle)."""
    a = np.asarray(a)
    g, n, _ = a.shape
    L = np.zeros_like(a)
    for i in range(n):
        piv = a[:, i, i] - np.einsum("gj,gj->g", L[:, i, :i], L[:, i, :i])
        bad = np.flatnonzero(~(piv > 0))
        if bad.size:
            raise NotPositiveDefiniteError(i, float(piv[bad[0]]), int(bad[0]))
        d = np.sqrt(piv)
        L[:, i, i] = d
        for k in range(i + 1, n):
            s = np.einsum("gj,gj->g", L[:, i, :i], L[:, k, :i])
            L[:, k, i] = (a[:, k, i] - s) / d
    return L


def tri_inv4(l):
    """Batched inverse of (G, n, n) lower-triangular matrices by forward substitution."""
    l = np.asarray(l)
    g, n, _ = l.shape
    diag = np.diagonal(l, axis1=1, axis2=2)
    zero = np.argwhere(diag == 0)
    if zero.size:
        raise SingularTriangularError(int(zero[0, 1]), int(zero[0, 0]))
    inv = np.zeros_like(l)
    for j in range(n):
        inv[:, j, j] = 1.0 / l[:, j, j]
        for i in range(j + 1, n):
            s = np.einsum("gk,gk->g", l[:, i, j:i], inv[:, j:i, j])
            inv[:, i, j] = -s / l[:, i, i]
    return inv
