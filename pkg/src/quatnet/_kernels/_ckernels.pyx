# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_reference``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport ddot, sdot

from ..errors import NotPositiveDefiniteError, SingularTriangularError

cnp.import_array()


def out_size(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


cdef void _im2col(const floating[:, :, :, ::1] x, floating[:, ::1] cols,
                  int kh, int kw, int stride, int pad, int oh, int ow) noexcept nogil:
    # cols[(b*oh + oy)*ow + ox, (i*kw + j)*C + c] = x[b, oy*stride + i - pad, ox*stride + j - pad, c]
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t b, i, j, oy, ox, iy, ix, row, col
    if c == 0:
        return
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (b * oh + oy) * ow + ox
                col = 0
                for i in range(kh):
                    iy = oy * stride + i - pad
                    for j in range(kw):
                        ix = ox * stride + j - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            memcpy(&cols[row, col], &x[b, iy, ix, 0], c * sizeof(floating))
                        else:
                            memset(&cols[row, col], 0, c * sizeof(floating))
                        col += c


cdef void _col2im(const floating[:, ::1] cols, floating[:, :, :, ::1] out,
                  int kh, int kw, int stride, int pad, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], h = out.shape[1], w = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t b, i, j, oy, ox, iy, ix, row, col, ci
    cdef floating *dst
    cdef const floating *src
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (b * oh + oy) * ow + ox
                col = 0
                for i in range(kh):
                    iy = oy * stride + i - pad
                    for j in range(kw):
                        ix = ox * stride + j - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            dst = &out[b, iy, ix, 0]
                            src = &cols[row, col]
                            for ci in range(c):
                                dst[ci] += src[ci]
                        col += c


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    oh, ow = out_size(h, w, kh, kw, stride, pad)
    cols = np.empty((n * oh * ow, kh * kw * c), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, kh, kw, stride, pad, oh, ow)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, kh, kw, stride, pad, oh, ow)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, x_shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    n, h, w, c = x_shape
    oh, ow = out_size(h, w, kh, kw, stride, pad)
    cols = cols.reshape(n * oh * ow, kh * kw * c)
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, kh, kw, stride, pad, oh, ow)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out, kh, kw, stride, pad, oh, ow)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out


cdef inline double _dot(const floating *x, const floating *y, int n) noexcept nogil:
    cdef int one = 1
    if floating is float:
        return sdot(&n, <float *>x, &one, <float *>y, &one)
    else:
        return ddot(&n, <double *>x, &one, <double *>y, &one)


cdef void _group_outer(const floating[:, :, :, ::1] a, const floating[:, :, :, ::1] b,
                       bint same, double[:, :, ::1] acc) noexcept nogil:
    # BLAS dots over the contiguous spatial rows; symmetric fill when a is b
    cdef Py_ssize_t N = a.shape[0], G = a.shape[2], S = a.shape[3]
    cdef Py_ssize_t n, g, p, q
    cdef int s = <int>S
    if S == 0:
        return
    for n in range(N):
        for g in range(G):
            for p in range(4):
                for q in range(p if same else 0, 4):
                    acc[g, p, q] += _dot(&a[n, p, g, 0], &b[n, q, g, 0], s)
    if same:
        for g in range(G):
            for p in range(4):
                for q in range(p):
                    acc[g, p, q] = acc[g, q, p]


cdef void _group_mix(const floating[:, :, ::1] m, const floating[:, :, :, ::1] x,
                     const floating[:, ::1] bias, bint has_bias, floating[:, :, :, ::1] y) noexcept nogil:
    # inner loop runs along contiguous s so it vectorizes
    cdef Py_ssize_t N = x.shape[0], G = x.shape[2], S = x.shape[3]
    cdef Py_ssize_t n, g, s, p
    cdef floating m0, m1, m2, m3, bb
    cdef const floating *x0
    cdef const floating *x1
    cdef const floating *x2
    cdef const floating *x3
    cdef floating *out
    if S == 0:
        return
    for n in range(N):
        for g in range(G):
            x0 = &x[n, 0, g, 0]
            x1 = &x[n, 1, g, 0]
            x2 = &x[n, 2, g, 0]
            x3 = &x[n, 3, g, 0]
            for p in range(4):
                m0 = m[g, p, 0]
                m1 = m[g, p, 1]
                m2 = m[g, p, 2]
                m3 = m[g, p, 3]
                bb = bias[g, p] if has_bias else 0
                out = &y[n, p, g, 0]
                for s in range(S):
                    out[s] = bb + m0 * x0[s] + m1 * x1[s] + m2 * x2[s] + m3 * x3[s]


def _check_group(x, name):
    if x.ndim != 4 or x.shape[1] != 4:
        raise ValueError(f"{name}: expected an (N, 4, G, S) array, got shape {x.shape}")


def group_outer(a, b):
    same = a is b
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b, dtype=a.dtype)
    _check_group(a, "group_outer")
    if a.shape != b.shape:
        raise ValueError(f"group_outer: shapes differ {a.shape} vs {b.shape}")
    acc = np.zeros((a.shape[2], 4, 4), dtype=np.float64)
    if a.dtype == np.float32:
        _group_outer[float](a, a if same else b, same, acc)
    elif a.dtype == np.float64:
        _group_outer[double](a, a if same else b, same, acc)
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    return acc.astype(a.dtype, copy=False)


def group_mix(m, x, bias=None):
    x = np.ascontiguousarray(x)
    _check_group(x, "group_mix")
    m = np.ascontiguousarray(m, dtype=x.dtype)
    has_bias = bias is not None
    b = np.ascontiguousarray(bias if has_bias else np.zeros((x.shape[2], 4)), dtype=x.dtype)
    y = np.empty_like(x)
    if x.dtype == np.float32:
        _group_mix[float](m, x, b, has_bias, y)
    elif x.dtype == np.float64:
        _group_mix[double](m, x, b, has_bias, y)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return y


cdef int _chol(const floating[:, :, ::1] a, floating[:, :, ::1] L,
               Py_ssize_t *bad_g, double *bad_v) noexcept nogil:
    cdef Py_ssize_t G = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t g, i, j, k
    cdef double s, d
    for g in range(G):
        for i in range(n):
            s = a[g, i, i]
            for j in range(i):
                s -= <double>L[g, i, j] * L[g, i, j]
            if not s > 0:
                bad_g[0] = g
                bad_v[0] = s
                return <int>i
            d = sqrt(s)
            L[g, i, i] = <floating>d
            for k in range(i + 1, n):
                s = a[g, k, i]
                for j in range(i):
                    s -= <double>L[g, i, j] * L[g, k, j]
                L[g, k, i] = <floating>(s / d)
    return -1


def chol4(a):
    a = np.ascontiguousarray(a)
    L = np.zeros_like(a)
    cdef Py_ssize_t bad_g = 0
    cdef double bad_v = 0.0
    cdef int piv
    if a.dtype == np.float32:
        piv = _chol[float](a, L, &bad_g, &bad_v)
    elif a.dtype == np.float64:
        piv = _chol[double](a, L, &bad_g, &bad_v)
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    if piv >= 0:
        raise NotPositiveDefiniteError(piv, bad_v, bad_g)
    return L


cdef int _tri_inv(const floating[:, :, ::1] l, floating[:, :, ::1] inv,
                  Py_ssize_t *bad_g) noexcept nogil:
    cdef Py_ssize_t G = l.shape[0], n = l.shape[1]
    cdef Py_ssize_t g, i, j, k
    cdef double s
    for g in range(G):
        for i in range(n):
            if l[g, i, i] == 0:
                bad_g[0] = g
                return <int>i
        for j in range(n):
            inv[g, j, j] = <floating>(1.0 / l[g, j, j])
            for i in range(j + 1, n):
                s = 0.0
                for k in range(j, i):
                    s += <double>l[g, i, k] * inv[g, k, j]
                inv[g, i, j] = <floating>(-s / l[g, i, i])
    return -1


def tri_inv4(l):
    l = np.ascontiguousarray(l)
    inv = np.zeros_like(l)
    cdef Py_ssize_t bad_g = 0
    cdef int idx
    if l.dtype == np.float32:
        idx = _tri_inv[float](l, inv, &bad_g)
    elif l.dtype == np.float64:
        idx = _tri_inv[double](l, inv, &bad_g)
    else:
        raise TypeError(f"unsupported dtype {l.dtype}")
    if idx >= 0:
        raise SingularTriangularError(idx, bad_g)
    return inv
