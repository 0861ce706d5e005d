"""Scalar quaternion algebra and its 4x4 real-matrix embedding.

Everything here runs in float64 and is used as the reference that tensor
level quaternion operations are tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Quaternion",
    "qmul",
    "embed",
    "conjugate",
    "norm",
    "scale",
    "BASIS",
]


@dataclass(frozen=True)
class Quaternion:
    """a + b i + c j + d k"""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    @classmethod
    def from_array(cls, v) -> "Quaternion":
        a, b, c, d = (float(x) for x in v)
        return cls(a, b, c, d)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=np.float64)

    def __iter__(self):
        return iter((self.a, self.b, self.c, self.d))

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.a - other.a, self.b - other.b, self.c - other.c, self.d - other.d)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.a, -self.b, -self.c, -self.d)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return qmul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def qmul(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product p * q (ij = k, ji = -k)."""
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return Quaternion(
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    )


# Basis matrices for 1, i, j, k. embed(q) = a*B0 + b*B1 + c*B2 + d*B3, whose
# first column is (a, b, c, d)^T, so embed(p) @ q.as_array() == qmul(p, q).
BASIS = np.array(
    [
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
        [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
        [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
        [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
    ],
    dtype=np.float64,
)


def embed(q: Quaternion) -> np.ndarray:
    """Left-multiplication matrix of q as a 4x4 real array."""
    return np.tensordot(q.as_array(), BASIS, axes=1)


def conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.a, -q.b, -q.c, -q.d)


def norm(q: Quaternion) -> float:
    # hypot rescales internally, so tiny nonzero quaternions keep a nonzero norm
    return math.hypot(q.a, q.b, q.c, q.d)


def scale(q: Quaternion, s: float) -> Quaternion:
    return Quaternion(q.a * s, q.b * s, q.c * s, q.d * s)
