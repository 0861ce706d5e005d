"""Self-checks behind ``quatnet verify``.

Each suite is a list of cases; a case takes a seeded generator and returns
``(ok, detail)``. Cases own their data, so they run in a thread pool whose
size is capped by ``QUATNET_THREADS``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from . import _kernels
from . import autograd as ag
from .autograd import Tensor
from .errors import NotPositiveDefiniteError
from .init import InitSpec, chi4_cdf, chi4_sample, sample_axis, sample_qweights
from .layers import BatchNorm2d, Conv2d, QBatchNorm, QConv2d, QDense, ResidualBlock
from .linalg4 import DEFAULT_EPS, build_whitener, cholesky, covariance, whiten
from .models import ResNet
from .quat_core import BASIS, Quaternion, embed, qmul

Case = Callable[[np.random.Generator], tuple[bool, str]]


@dataclass
class CaseResult:
    suite: str
    name: str
    ok: bool
    detail: str


def thread_count() -> int:
    raw = os.environ.get("QUATNET_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"QUATNET_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"QUATNET_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def _within(err: float, tol: float) -> tuple[bool, str]:
    return bool(err < tol), f"max error {err:.3g} (tol {tol:g})"


# -- algebra -------------------------------------------------------------------
def _random_quats(rng, n):
    return [Quaternion.from_array(v) for v in rng.standard_normal((n, 4))]


def algebra_matrix_action(rng):
    ps, qs = _random_quats(rng, 1000), _random_quats(rng, 1000)
    err = max(np.abs(embed(p) @ q.as_array() - qmul(p, q).as_array()).max() for p, q in zip(ps, qs))
    return _within(err, 1e-12)


def algebra_homomorphism(rng):
    ps, qs = _random_quats(rng, 1000), _random_quats(rng, 1000)
    err = max(np.abs(embed(qmul(p, q)) - embed(p) @ embed(q)).max() for p, q in zip(ps, qs))
    return _within(err, 1e-12)


def algebra_units(rng):
    i, j, k = (Quaternion.from_array(BASIS[n][:, 0]) for n in (1, 2, 3))
    minus_one = np.array([-1.0, 0, 0, 0])
    checks = [qmul(i, i), qmul(j, j), qmul(k, k), qmul(qmul(i, j), k)]
    err = max(np.abs(c.as_array() - minus_one).max() for c in checks)
    err = max(err, np.abs(qmul(i, j).as_array() - k.as_array()).max(), np.abs(qmul(j, i).as_array() + k.as_array()).max())
    return _within(err, 1e-15)


def algebra_norm_multiplicative(rng):
    ps, qs = _random_quats(rng, 500), _random_quats(rng, 500)
    err = max(abs(np.linalg.norm(qmul(p, q).as_array()) - np.linalg.norm(p.as_array()) * np.linalg.norm(q.as_array()))
              / (1 + np.linalg.norm(p.as_array()) * np.linalg.norm(q.as_array())) for p, q in zip(ps, qs))
    return _within(err, 1e-12)


# -- convolution ------------------------------------------------------------------
def _naive_conv(x, w, stride, pad):
    """Reference cross-correlation by explicit windows (NCHW, OIHW)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, w.shape[2:], axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,ocij->nohw", win, w)


def _lane_oracle(x, banks, stride, pad):
    """Hamilton product lane by lane: out = W * h with W = A + iB + jC + kD."""
    m = x.shape[1] // 4
    r, i, j, k = (x[:, q * m : (q + 1) * m] for q in range(4))
    A, B, C, D = banks
    cv = lambda a, b: _naive_conv(a, b, stride, pad)
    return np.concatenate(
        [
            cv(r, A) - cv(i, B) - cv(j, C) - cv(k, D),
            cv(r, B) + cv(i, A) - cv(j, D) + cv(k, C),
            cv(r, C) + cv(i, D) + cv(j, A) - cv(k, B),
            cv(r, D) - cv(i, C) + cv(j, B) + cv(k, A),
        ],
        axis=1,
    )


def conv_matches_lane_oracle(rng):
    worst = 0.0
    for _ in range(10):
        cin, cout = 4 * int(rng.integers(1, 4)), 4 * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
        hw = int(rng.integers(k, 10))
        layer = QConv2d(cin, cout, k, stride, pad, rng=rng, dtype=np.float64)
        x = rng.standard_normal((2, cin, hw, hw))
        got = layer(Tensor(x)).data
        want = _lane_oracle(x, [b.data for b in layer.banks()], stride, pad)
        worst = max(worst, np.abs(got - want).max() / max(1.0, np.abs(want).max()))
    return _within(worst, 1e-10)


def conv_backends_agree(rng):
    found = _kernels.backends()
    if len(found) < 2:
        return True, "only the python backend is available"
    ref, *others = found.values()
    x = rng.standard_normal((2, 9, 7, 8))
    worst = 0.0
    for mod in others:
        for kh, st, pd in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (5, 1, 2)]:
            a = ref.im2col(x, kh, kh, st, pd)
            worst = max(worst, np.abs(a - mod.im2col(x, kh, kh, st, pd)).max())
            cols = rng.standard_normal(a.shape)
            worst = max(worst, np.abs(ref.col2im(cols, x.shape, kh, kh, st, pd) - mod.col2im(cols, x.shape, kh, kh, st, pd)).max())
    return _within(worst, 1e-12)


# -- batch normalization ------------------------------------------------------------
def _random_spd(rng):
    a = rng.standard_normal((4, 4))
    return a @ a.T + 0.1 * np.eye(4)


def bn_whitener_identity(rng):
    worst = 0.0
    for _ in range(100):
        v = _random_spd(rng)
        w = build_whitener(v, np.zeros(4), DEFAULT_EPS).w
        worst = max(worst, np.abs(w.T @ w @ (v + DEFAULT_EPS * np.eye(4)) - np.eye(4)).max())
    return _within(worst, 1e-8)


def bn_batch_whitened_covariance(rng):
    x = rng.standard_normal((500, 4)) @ rng.standard_normal((4, 4)) + rng.standard_normal(4)
    v, mu = covariance(x)
    wh = build_whitener(v, mu, DEFAULT_EPS)
    z = whiten(wh, x)
    zc, _ = covariance(z)
    # exact identity of the estimator: cov(Wx) = I - eps W W^T
    err = np.abs(zc - (np.eye(4) - DEFAULT_EPS * wh.w @ wh.w.T)).max()
    return _within(err, 1e-6)


def bn_init_semantics(rng):
    bn = QBatchNorm(8, dtype=np.float64)
    x = Tensor(rng.standard_normal((16, 8, 5, 5)))
    err = np.abs(bn(x).data - 0.5 * bn.whiten(x).data).max()
    return _within(err, 1e-12)


def bn_rejects_non_pd(rng):
    v = _random_spd(rng)
    v[2, 2] = -1.0
    try:
        cholesky(v)
    except NotPositiveDefiniteError as e:
        return e.pivot == 2, f"rejected at pivot {e.pivot}"
    return False, "non positive-definite matrix was accepted"


# -- initialization ---------------------------------------------------------------------
def init_chi4_ks(rng):
    sigma = InitSpec("glorot", 64, 64).sigma
    res = stats.kstest(chi4_sample(sigma, rng, 10_000), lambda t: chi4_cdf(t, sigma))
    return bool(res.pvalue > 0.01), f"KS statistic {res.statistic:.4f}, p = {res.pvalue:.3f}"


def init_variance(rng):
    spec = InitSpec("glorot", 64, 64)
    w = sample_qweights(spec.sigma, 100_000, rng)
    var = w.var(axis=0).sum()  # E|W - EW|^2, summed over the four components
    rel = abs(var / spec.variance - 1)
    return bool(rel < 0.03), f"quaternion variance {var:.5f} vs {spec.variance:.5f} ({rel:.2%})"


def init_axis_unit(rng):
    ax = sample_axis(rng, 10_000)
    return _within(np.abs(np.linalg.norm(ax, axis=-1) - 1).max(), 1e-12)


# -- gradients --------------------------------------------------------------------------
def _grad_case(build: Callable[[np.random.Generator], tuple[Callable, list]], tol: float = 1e-4) -> Case:
    def case(rng):
        f, xs = build(rng)
        return _within(ag.grad_check(f, xs), tol)

    return case


def _weighted(module, x_shape):
    def build(rng):
        m = module(rng)
        x = Tensor(rng.standard_normal(x_shape), requires_grad=True)
        probe = rng.standard_normal(m(x).shape)
        params = m.parameters()

        def f(x, *ps):
            return ag.tsum(m(x) * Tensor(probe))

        return f, [x, *params]

    return build


def _perturbed_qbn(rng):
    bn = QBatchNorm(8, dtype=np.float64)
    bn.gamma.data += 0.1 * rng.standard_normal(bn.gamma.shape)
    bn.beta.data += rng.standard_normal(bn.beta.shape)
    return bn


GRAD_CASES = {
    "qconv": _weighted(lambda r: QConv2d(8, 8, 3, 1, rng=r, dtype=np.float64), (2, 8, 5, 5)),
    "qconv_strided": _weighted(lambda r: QConv2d(4, 8, 3, 2, rng=r, dtype=np.float64), (2, 4, 6, 6)),
    "qdense": _weighted(lambda r: QDense(8, 12, rng=r, dtype=np.float64), (3, 8)),
    "qbatchnorm": _weighted(_perturbed_qbn, (4, 8, 3, 3)),
    "conv2d": _weighted(lambda r: Conv2d(3, 5, 3, 1, bias=True, rng=r, dtype=np.float64), (2, 3, 5, 5)),
    "batchnorm2d": _weighted(lambda r: BatchNorm2d(3, dtype=np.float64), (4, 3, 3, 3)),
    "residual_block": _weighted(lambda r: ResidualBlock(4, 8, 2, rng=r, dtype=np.float64), (3, 4, 4, 4)),
    "tiny_network": _weighted(
        lambda r: ResNet("classify", (1, 1, 1), 1, rng=r, dtype=np.float64), (3, 3, 8, 8)
    ),
}


SUITES: dict[str, dict[str, Case]] = {
    "algebra": {
        "matrix_action": algebra_matrix_action,
        "homomorphism": algebra_homomorphism,
        "unit_relations": algebra_units,
        "norm_multiplicative": algebra_norm_multiplicative,
    },
    "conv": {"lane_oracle": conv_matches_lane_oracle, "backends_agree": conv_backends_agree},
    "bn": {
        "whitener_identity": bn_whitener_identity,
        "batch_covariance": bn_batch_whitened_covariance,
        "init_semantics": bn_init_semantics,
        "rejects_non_pd": bn_rejects_non_pd,
    },
    "init": {"chi4_ks": init_chi4_ks, "variance": init_variance, "axis_unit": init_axis_unit},
    "grad": {name: _grad_case(b) for name, b in GRAD_CASES.items()},
}


def _run_one(suite, name, case, seed):
    rng = np.random.default_rng([seed, sum(map(ord, suite + "/" + name))])
    try:
        ok, detail = case(rng)
    except Exception as e:  # a crashing case is a failing case
        ok, detail = False, f"{type(e).__name__}: {e}"
    return CaseResult(suite, name, bool(ok), detail)


def run(suites=None, seed: int = 0, threads: int | None = None) -> list[CaseResult]:
    names = list(SUITES) if not suites else list(suites)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
    jobs = [(s, n, c) for s in names for n, c in SUITES[s].items()]
    cap = thread_count()
    workers = min(threads, cap) if threads else cap
    if workers < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, s, n, c, seed) for s, n, c in jobs]
        return [f.result() for f in futures]
