"""4x4 Cholesky whitening and the pieces it is built from.

A whitener ``w`` for covariance ``V`` satisfies ``w.T @ w == inv(V)``, so
``z = w @ (x - mean)`` has identity covariance. It is obtained by factoring
``V + eps*I = L L^T`` and inverting the triangular factor, ``w = inv(L)``;
no explicit inverse of ``V`` is ever formed.

The plain functions operate on numpy arrays. :func:`cholesky_op` and
:func:`tri_inverse_op` are the batched, differentiable versions used inside
quaternion batch normalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autograd import Tensor, _make
from .errors import NotPositiveDefiniteError, ShapeError, SingularTriangularError

DEFAULT_EPS = 1e-4

__all__ = [
    "DEFAULT_EPS",
    "Whitener",
    "covariance",
    "cholesky",
    "tri_inverse",
    "build_whitener",
    "whiten",
    "cholesky_op",
    "tri_inverse_op",
    "NotPositiveDefiniteError",
]


@dataclass(frozen=True)
class Whitener:
    w: np.ndarray  # (4, 4) lower triangular
    mean: np.ndarray  # (4,)


def _check_square(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name}: expected a square matrix, got shape {a.shape}")
    return a


def covariance(samples) -> tuple[np.ndarray, np.ndarray]:
    """Biased (divide-by-n) covariance and mean of an (n, 4) sample matrix."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"covariance: expected (n, d) samples, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"covariance needs at least 2 samples, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    v = xc.T @ xc / n
    return 0.5 * (v + v.T), mu


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``a = L @ L.T``.

    Raises :class:`NotPositiveDefiniteError` (with ``.pivot``) when a pivot
    ``a_ii - sum_j l_ij^2`` is not strictly positive.
    """
    a = _check_square(a, "cholesky")
    try:
        return _kernels.chol4(a[None])[0]
    except NotPositiveDefiniteError as e:
        raise NotPositiveDefiniteError(e.pivot, e.value) from None


def tri_inverse(l) -> np.ndarray:
    l = _check_square(l, "tri_inverse")
    try:
        return _kernels.tri_inv4(np.tril(l)[None])[0]
    except SingularTriangularError as e:
        raise SingularTriangularError(e.index) from None


def build_whitener(v, mean, eps: float = DEFAULT_EPS) -> Whitener:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    v = _check_square(v, "build_whitener")
    L = cholesky(v + eps * np.eye(v.shape[0]))
    return Whitener(tri_inverse(L), np.asarray(mean, dtype=np.float64).copy())


def whiten(wh: Whitener, samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != wh.w.shape[0]:
        raise ShapeError(f"whiten: samples {x.shape} incompatible with whitener {wh.w.shape}")
    return (x - wh.mean) @ wh.w.T


# -- differentiable batched versions -------------------------------------------
def _phi(x):
    """Lower triangle with the diagonal halved."""
    out = np.tril(x)
    d = np.einsum("...ii->...i", out)
    d *= 0.5
    return out


def cholesky_op(a: Tensor) -> Tensor:
    """Batched Cholesky of (G, n, n) symmetric positive-definite matrices.

    The gradient returned for ``a`` is the symmetric one: it is valid for
    symmetric perturbations, which is all that can reach a covariance.
    """
    L = _kernels.chol4(np.ascontiguousarray(a.data))

    def backward(g):
        Linv = _kernels.tri_inv4(L)
        P = _phi(np.swapaxes(L, -1, -2) @ np.tril(g))
        S = np.swapaxes(Linv, -1, -2) @ P @ Linv
        return (0.5 * (S + np.swapaxes(S, -1, -2)),)

    return _make(L, (a,), backward, "cholesky")


def tri_inverse_op(l: Tensor) -> Tensor:
    """Batched inverse of (G, n, n) lower-triangular matrices."""
    inv = _kernels.tri_inv4(np.ascontiguousarray(l.data))

    def backward(g):
        invT = np.swapaxes(inv, -1, -2)
        return (np.tril(-invT @ g @ invT),)

    return _make(inv, (l,), backward, "tri_inverse")


def group_outer_op(a: Tensor, b: Tensor) -> Tensor:
    """Per-group 4x4 second moments: out[g] = sum over (n, s) of a[n, :, g, s] b[n, :, g, s]^T."""
    out = _kernels.group_outer(a.data, b.data)

    def backward(g):
        ga = _kernels.group_mix(g, b.data) if a.requires_grad else None
        gb = _kernels.group_mix(np.swapaxes(g, 1, 2), a.data) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "group_outer")


def group_mix_op(m: Tensor, x: Tensor, bias: Tensor | None = None) -> Tensor:
    """Apply a 4x4 matrix per channel group: y[n, :, g, s] = m[g] @ x[n, :, g, s] + bias[g]."""
    if x.ndim != 4 or x.shape[1] != 4 or m.shape != (x.shape[2], 4, 4):
        raise ShapeError(f"group_mix: matrices {m.shape} incompatible with grouped input {x.shape}")
    y = _kernels.group_mix(m.data, x.data, None if bias is None else bias.data)
    parents = (m, x) if bias is None else (m, x, bias)

    def backward(g):
        gm = _kernels.group_outer(g, x.data) if m.requires_grad else None
        gx = _kernels.group_mix(np.swapaxes(m.data, 1, 2), g) if x.requires_grad else None
        if bias is None:
            return gm, gx
        return gm, gx, g.sum(axis=(0, 3)).T.copy()

    return _make(y, parents, backward, "group_mix")
