"""Hot kernels: im2col/col2im for convolution plus the per-group 4x4 work of
quaternion batch normalization.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementation in ``_reference`` is used. Set ``QUATNET_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _reference

BACKEND = "python"
_impl = _reference

if os.environ.get("QUATNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _reference

im2col = _impl.im2col
col2im = _impl.col2im
group_outer = _impl.group_outer
group_mix = _impl.group_mix
chol4 = _impl.chol4
tri_inv4 = _impl.tri_inv4
out_size = _reference.out_size


def backends():
    """Return ``{name: module}`` for every importable kernel backend."""
    found = {"python": _reference}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
