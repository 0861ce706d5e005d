import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quatnet import _kernels
from quatnet._kernels import _reference
from quatnet.errors import NotPositiveDefiniteError, SingularTriangularError

BACKENDS = _kernels.backends()


def test_reference_backend_always_present():
    assert "python" in BACKENDS
    assert _kernels.BACKEND in BACKENDS


def test_compiled_backend_built():
    # the package build compiles the extension; the fallback is for environments without a compiler
    assert "cython" in BACKENDS, "compiled kernels missing: reinstall with a C compiler available"


@pytest.mark.parametrize("name", sorted(BACKENDS))
@given(
    seed=st.integers(0, 1000),
    k=st.sampled_from([1, 2, 3, 5]),
    stride=st.integers(1, 3),
    pad=st.integers(0, 2),
    dtype=st.sampled_from([np.float32, np.float64]),
)
def test_im2col_col2im_adjoint(name, seed, k, stride, pad, dtype):
    mod = BACKENDS[name]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 7, 6, 3)).astype(dtype)  # NHWC
    cols = mod.im2col(x, k, k, stride, pad)
    ref = _reference.im2col(x.astype(np.float64), k, k, stride, pad)
    np.testing.assert_allclose(cols, ref, rtol=1e-6, atol=1e-6)
    g = rng.standard_normal(cols.shape).astype(dtype)
    back = mod.col2im(g, x.shape, k, k, stride, pad)
    # <im2col(x), g> == <x, col2im(g)>
    lhs = float(np.sum(cols.astype(np.float64) * g))
    rhs = float(np.sum(x.astype(np.float64) * back))
    assert lhs == pytest.approx(rhs, rel=1e-4 if dtype == np.float32 else 1e-10, abs=1e-6)


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
def test_group_kernels_match_einsum(name, dtype, tol):
    mod = BACKENDS[name]
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 5, 4, 3, 17)).astype(dtype)
    m, bias = rng.standard_normal((3, 4, 4)).astype(dtype), rng.standard_normal((3, 4)).astype(dtype)
    np.testing.assert_allclose(mod.group_outer(a, b), np.einsum("npgs,nqgs->gpq", a, b), rtol=tol, atol=tol)
    np.testing.assert_allclose(mod.group_outer(a, a), np.einsum("npgs,nqgs->gpq", a, a), rtol=tol, atol=tol)
    want = np.einsum("gpq,nqgs->npgs", m, a)
    np.testing.assert_allclose(mod.group_mix(m, a), want, rtol=tol, atol=tol)
    np.testing.assert_allclose(mod.group_mix(m, a, bias), want + bias.T[None, :, :, None], rtol=tol, atol=tol)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_batched_cholesky_and_inverse(name):
    mod = BACKENDS[name]
    rng = np.random.default_rng(1)
    m = rng.standard_normal((6, 4, 4))
    a = m @ np.swapaxes(m, 1, 2) + np.eye(4)
    L = mod.chol4(a)
    np.testing.assert_allclose(L @ np.swapaxes(L, 1, 2), a, atol=1e-12)
    np.testing.assert_allclose(mod.tri_inv4(L) @ L, np.broadcast_to(np.eye(4), a.shape), atol=1e-12)
    bad = a.copy()
    bad[4] = -np.eye(4)
    with pytest.raises(NotPositiveDefiniteError) as e:
        mod.chol4(bad)
    assert e.value.group == 4 and e.value.pivot == 0
    sing = L.copy()
    sing[2, 1, 1] = 0.0
    with pytest.raises(SingularTriangularError) as e:
        mod.tri_inv4(sing)
    assert e.value.group == 2 and e.value.index == 1


def test_pure_python_fallback_selected_by_environment():
    env = dict(os.environ, QUATNET_PURE_PYTHON="1")
    code = "import quatnet; print(quatnet.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
