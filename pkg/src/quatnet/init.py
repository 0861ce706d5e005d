"""Quaternion weight initialization.

A quaternion weight is drawn in polar form ``|W| * exp(u * theta)`` with

* ``|W|`` the length of a 4-vector of i.i.d. N(0, sigma^2) normals
  (a chi distribution with four degrees of freedom, ``E[|W|^2] = 4 sigma^2``),
* ``theta ~ U(-pi, pi)``,
* ``u`` a unit pure-imaginary axis, uniform on the 2-sphere.

Since ``Var(W) = E[|W|^2] = 4 sigma^2``, Glorot (``2 / (n_in + n_out)``) and He
(``2 / n_in``) targets give ``sigma = 1/sqrt(2 (n_in + n_out))`` and
``sigma = 1/sqrt(2 n_in)``. Fans are counted in quaternion units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quat_core import Quaternion

SCHEMES = ("glorot", "he")


@dataclass(frozen=True)
class InitSpec:
    scheme: str
    n_in: int
    n_out: int
    rng_seed: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_in <= 0 or self.n_out <= 0:
            raise ValueError(f"fans must be positive, got n_in={self.n_in}, n_out={self.n_out}")

    @property
    def sigma(self) -> float:
        if self.scheme == "glorot":
            return 1.0 / math.sqrt(2.0 * (self.n_in + self.n_out))
        return 1.0 / math.sqrt(2.0 * self.n_in)

    @property
    def variance(self) -> float:
        """Target Var(W) = 4 sigma^2."""
        return 4.0 * self.sigma**2


@dataclass(frozen=True)
class PolarQuaternionSample:
    magnitude: float
    theta: float
    axis: tuple[float, float, float]

    def to_quaternion(self) -> Quaternion:
        s = self.magnitude * math.sin(self.theta)
        return Quaternion(
            self.magnitude * math.cos(self.theta), s * self.axis[0], s * self.axis[1], s * self.axis[2]
        )


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def chi4_sample(sigma: float, rng=None, size=None):
    """Length of a 4-vector of independent N(0, sigma^2) components."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = _rng(rng)
    shape = (4,) if size is None else (*np.atleast_1d(size), 4)
    y = rng.normal(0.0, sigma, size=shape)
    r = np.sqrt(np.sum(y * y, axis=-1))
    return float(r) if size is None else r


def chi4_pdf(x, sigma: float):
    """x^3 exp(-x^2 / (2 sigma^2)) / (2 sigma^4) for x >= 0, else 0."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x**3 * np.exp(-(x**2) / (2 * sigma**2)) / (2 * sigma**4), 0.0)
    return float(out) if out.ndim == 0 else out


def chi4_cdf(x, sigma: float):
    """Closed form of the integral of :func:`chi4_pdf` from 0 to x."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    t = np.maximum(x, 0.0) ** 2 / (2 * sigma**2)
    out = -np.expm1(-t) - t * np.exp(-t)
    return float(out) if out.ndim == 0 else out


def sample_axis(rng=None, size=None):
    """Unit 3-vector(s) uniform on the sphere (normalized i.i.d. normals)."""
    rng = _rng(rng)
    n = 1 if size is None else int(np.prod(size))
    v = rng.standard_normal((n, 3))
    r = np.linalg.norm(v, axis=1)
    bad = r < 1e-12
    while bad.any():
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        r = np.linalg.norm(v, axis=1)
        bad = r < 1e-12
    v = v / r[:, None]
    if size is None:
        return v[0]
    return v.reshape(*np.atleast_1d(size), 3)


def sample_polar(sigma: float, rng=None) -> PolarQuaternionSample:
    rng = _rng(rng)
    mag = chi4_sample(sigma, rng)
    theta = rng.uniform(-np.pi, np.pi)
    axis = sample_axis(rng)
    return PolarQuaternionSample(mag, float(theta), tuple(float(a) for a in axis))


def init_qweight(spec: InitSpec, rng=None) -> Quaternion:
    """One quaternion weight: a = |W| cos(theta), (b, c, d) = |W| sin(theta) * axis."""
    rng = _rng(spec.rng_seed if rng is None else rng)
    return sample_polar(spec.sigma, rng).to_quaternion()


def sample_qweights(sigma: float, size, rng=None) -> np.ndarray:
    """Vectorized :func:`init_qweight`; returns an array of shape ``(*size, 4)``."""
    rng = _rng(rng)
    size = tuple(np.atleast_1d(size))
    mag = chi4_sample(sigma, rng, size)
    theta = rng.uniform(-np.pi, np.pi, size=size)
    axis = sample_axis(rng, size)
    out = np.empty(size + (4,))
    out[..., 0] = mag * np.cos(theta)
    out[..., 1:] = (mag * np.sin(theta))[..., None] * axis
    return out


def fans(out_channels: int, in_channels: int, kh: int = 1, kw: int = 1) -> tuple[int, int]:
    """(n_in, n_out) in quaternion units for a quaternion kernel bank."""
    return in_channels // 4 * kh * kw, out_channels // 4 * kh * kw


def init_layer(layer, spec: InitSpec | str = "he", rng=None) -> None:
    """Refill the four kernel banks of a quaternion layer in place.

    Each kernel position gets an independent quaternion from the polar sampler.
    ``spec`` may be a scheme name, in which case the fans come from the layer.
    """
    banks = layer.banks()
    shape = banks[0].shape
    if isinstance(spec, str):
        kh, kw = (shape[2], shape[3]) if len(shape) == 4 else (1, 1)
        n_in, n_out = fans(4 * shape[0], 4 * shape[1], kh, kw)
        spec = InitSpec(spec, n_in, n_out)
    rng = _rng(spec.rng_seed if rng is None else rng)
    q = sample_qweights(spec.sigma, shape, rng)
    for lane, bank in enumerate(banks):
        bank.data[...] = q[..., lane].astype(bank.dtype)
