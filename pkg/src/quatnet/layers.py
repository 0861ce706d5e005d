"""Quaternion network layers on top of :mod:`quatnet.autograd`.

A quaternion feature tensor ("QTensor") is an ordinary :class:`Tensor` whose
channel axis (axis 1) has ``N = 4 * M`` entries: channels ``[0, M)`` are the
real parts, ``[M, 2M)`` the i parts, then j, then k.

Quaternion convolution with kernel ``W = A + iB + jC + kD`` on input
``h = w + ix + jy + kz`` is carried out as one real convolution with the
block kernel::

    [[A, -B, -C, -D],
     [B,  A, -D,  C],
     [C,  D,  A, -B],
     [D, -C,  B,  A]]

which is the left-multiplication matrix of ``W`` with each entry replaced by a
kernel bank.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError
from .init import init_layer
from .linalg4 import (
    DEFAULT_EPS,
    cholesky,
    cholesky_op,
    group_mix_op,
    group_outer_op,
    tri_inverse,
    tri_inverse_op,
)

# gamma (symmetric 4x4) from its ten free entries, row-major upper triangle:
# rr ri rj rk ii ij ik jj jk kk
SYM_INDEX = np.array(
    [
        [0, 1, 2, 3],
        [1, 4, 5, 6],
        [2, 5, 7, 8],
        [3, 6, 8, 9],
    ]
)
_GAMMA_DIAG = np.array([0, 4, 7, 9])


def check_quaternion(x: Tensor, what: str = "input") -> int:
    """Return M = channels / 4, raising if the channel axis is not quaternion-shaped."""
    if x.ndim < 2:
        raise ShapeError(f"{what}: expected at least (N, C), got {x.shape}")
    c = x.shape[1]
    if c % 4:
        raise ShapeError(f"{what}: quaternion tensors need channels divisible by 4, got {c}")
    return c // 4


def lanes(x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Split a QTensor into its (r, i, j, k) channel blocks."""
    m = check_quaternion(x)
    return tuple(ag.slice_axis(x, q * m, (q + 1) * m, axis=1) for q in range(4))


def from_lanes(r: Tensor, i: Tensor, j: Tensor, k: Tensor) -> Tensor:
    return ag.concat([r, i, j, k], axis=1)


def split_relu(x: Tensor) -> Tensor:
    return ag.relu(x)


def split_sigmoid(x: Tensor) -> Tensor:
    return ag.sigmoid(x)


def hamilton_block(a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Stack four (out, in, ...) banks into the (4 out, 4 in, ...) real block kernel."""
    nb, nc, nd = -b, -c, -d
    rows = [
        ag.concat([a, nb, nc, nd], axis=1),
        ag.concat([b, a, nd, c], axis=1),
        ag.concat([c, d, a, nb], axis=1),
        ag.concat([d, nc, b, a], axis=1),
    ]
    return ag.concat(rows, axis=0)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_buffer(self, name: str, value: np.ndarray):
        """Assign a buffer by dotted name (used when loading checkpoints)."""
        *path, leaf = name.split(".")
        obj = self
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        current = getattr(obj, leaf)
        if np.shape(current) != np.shape(value):
            raise ShapeError(f"buffer {name}: expected shape {np.shape(current)}, got {np.shape(value)}")
        setattr(obj, leaf, np.array(value, dtype=np.asarray(current).dtype))


def _param(data, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


# -- quaternion layers -------------------------------------------------------------
class QConv2d(Module):
    """Quaternion 2-D convolution; channel counts are real feature maps (multiples of 4)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int | None = None,
        bias: bool = False,
        init: str = "he",
        rng=None,
        dtype=np.float64,
    ):
        if in_channels % 4 or out_channels % 4:
            raise ShapeError(
                f"QConv2d: channels must be divisible by 4, got {in_channels} -> {out_channels}"
            )
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride
        self.padding = kernel_size // 2 if padding is None else padding
        shape = (out_channels // 4, in_channels // 4, kernel_size, kernel_size)
        self.weight_r = _param(np.zeros(shape), dtype)
        self.weight_i = _param(np.zeros(shape), dtype)
        self.weight_j = _param(np.zeros(shape), dtype)
        self.weight_k = _param(np.zeros(shape), dtype)
        self.bias = _param(np.zeros(out_channels), dtype) if bias else None
        if init is not None:
            init_layer(self, init, rng=rng)

    def banks(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.weight_r, self.weight_i, self.weight_j, self.weight_k

    def block_weight(self) -> Tensor:
        return hamilton_block(*self.banks())

    def forward(self, x: Tensor) -> Tensor:
        check_quaternion(x, "QConv2d input")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"QConv2d: expected {self.in_channels} input channels, got input {x.shape}"
            )
        return ag.conv2d(x, self.block_weight(), self.bias, self.stride, self.padding)


class QDense(Module):
    """Quaternion fully-connected layer on (N, features) inputs, features in lane layout."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True, init: str = "glorot",
                 rng=None, dtype=np.float64):
        if in_features % 4 or out_features % 4:
            raise ShapeError(f"QDense: features must be divisible by 4, got {in_features} -> {out_features}")
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features // 4, in_features // 4)
        self.weight_r = _param(np.zeros(shape), dtype)
        self.weight_i = _param(np.zeros(shape), dtype)
        self.weight_j = _param(np.zeros(shape), dtype)
        self.weight_k = _param(np.zeros(shape), dtype)
        self.bias = _param(np.zeros(out_features), dtype) if bias else None
        if init is not None:
            init_layer(self, init, rng=rng)

    def banks(self):
        return self.weight_r, self.weight_i, self.weight_j, self.weight_k

    def block_weight(self) -> Tensor:
        return hamilton_block(*self.banks())

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"QDense: expected (N, {self.in_features}) input, got {x.shape}")
        out = x @ ag.transpose(self.block_weight())
        return out if self.bias is None else out + self.bias


class QBatchNorm(Module):
    """Quaternion batch normalization by Cholesky whitening.

    For each quaternion channel group the (batch x spatial) positions form an
    (n, 4) sample. Training mode whitens with the batch statistics, keeping the
    statistics on the tape so gradients flow through them; eval mode uses the
    running mean and covariance. The whitened value is then mapped by the
    symmetric 4x4 ``gamma`` (ten free entries) and shifted by the quaternion
    ``beta``.

    ``granularity="layer"`` pools all groups into one shared covariance.
    """

    _buffers = ("running_mean", "running_cov", "num_batches_tracked")

    def __init__(self, channels: int, eps: float = DEFAULT_EPS, momentum: float = 0.9,
                 granularity: str = "group", dtype=np.float64):
        if channels % 4:
            raise ShapeError(f"QBatchNorm: channels must be divisible by 4, got {channels}")
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {momentum}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if granularity not in ("group", "layer"):
            raise ValueError(f"granularity must be 'group' or 'layer', got {granularity!r}")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.granularity = granularity
        self.groups = channels // 4
        g = self.groups if granularity == "group" else 1
        gamma = np.zeros((g, 10))
        gamma[:, _GAMMA_DIAG] = 1.0 / np.sqrt(4.0)
        self.gamma = _param(gamma, dtype)
        self.beta = _param(np.zeros((g, 4)), dtype)
        self.running_mean = np.zeros((g, 4), dtype=dtype)
        self.running_cov = np.tile(np.eye(4, dtype=dtype), (g, 1, 1))
        self.num_batches_tracked = np.zeros((), dtype=np.int64)

    def gamma_matrix(self) -> Tensor:
        return ag.gather(self.gamma, SYM_INDEX)

    def _grouped(self, x: Tensor) -> Tensor:
        """(N, C, ...) -> (N, 4, G, S) view; G = 1 for layer granularity."""
        n = x.shape[0]
        s = int(np.prod(x.shape[2:], dtype=np.int64))
        if self.granularity == "group":
            return ag.reshape(x, (n, 4, self.groups, s))
        return ag.reshape(x, (n, 4, 1, self.groups * s))

    def whiten(self, x: Tensor) -> Tensor:
        """Whitened activations before gamma/beta, same layout as ``x``; running stats untouched."""
        return self._forward(x, affine=False, update=False)

    def forward(self, x: Tensor) -> Tensor:
        return self._forward(x, affine=True)

    def _forward(self, x: Tensor, affine: bool, update: bool = True) -> Tensor:
        check_quaternion(x, "QBatchNorm input")
        if x.shape[1] != self.channels:
            raise ShapeError(f"QBatchNorm: expected {self.channels} channels, got input {x.shape}")
        xg = self._grouped(x)
        if self.training:
            if x.shape[0] < 2:
                raise ValueError(f"QBatchNorm needs a batch of at least 2 in train mode, got {x.shape[0]}")
            n = xg.shape[0] * xg.shape[3]
            xc, mu = ag.center(xg, axis=(0, 3))
            cov = group_outer_op(xc, xc) * (1.0 / n)
            eye = np.eye(4, dtype=x.dtype)
            w = tri_inverse_op(cholesky_op(cov + self.eps * eye))
            if update:
                self._update_running(mu[0, :, :, 0].T, cov.data)
        else:
            if int(self.num_batches_tracked) == 0:
                raise RuntimeError("QBatchNorm: eval mode before any training step (no running statistics)")
            w = Tensor(self.eval_whitener().astype(x.dtype))
            xc = xg - Tensor(self.running_mean.T[None, :, :, None].astype(x.dtype))
        if affine:
            y = group_mix_op(ag.matmul(self.gamma_matrix(), w), xc, self.beta)
        else:
            y = group_mix_op(w, xc)
        return ag.reshape(y, x.shape)

    def _update_running(self, mean: np.ndarray, cov: np.ndarray):
        m = self.momentum
        self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(self.running_mean.dtype)
        self.running_cov = (m * self.running_cov + (1 - m) * cov).astype(self.running_cov.dtype)
        self.num_batches_tracked = self.num_batches_tracked + 1

    def eval_whitener(self) -> np.ndarray:
        eye = np.eye(4)
        return np.stack(
            [tri_inverse(cholesky(v + self.eps * eye)) for v in self.running_cov.astype(np.float64)]
        ).astype(self.running_cov.dtype)


# -- real layers (input block and baselines) ---------------------------------
class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, bias=False,
                 rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel_size, kernel_size))
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(out_channels), dtype) if bias else None

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Dense(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = _param(rng.uniform(-limit, limit, (in_features, out_features)), dtype)
        self.bias = _param(np.zeros(out_features), dtype) if bias else None

    def forward(self, x):
        out = x @ self.weight
        return out if self.bias is None else out + self.bias


class BatchNorm2d(Module):
    """Per-channel real batch normalization."""

    _buffers = ("running_mean", "running_var", "num_batches_tracked")

    def __init__(self, channels, eps=DEFAULT_EPS, momentum=0.9, dtype=np.float64):
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.num_batches_tracked = np.zeros((), dtype=np.int64)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm2d: expected (N, {self.channels}, H, W), got {x.shape}")
        shape = (1, self.channels, 1, 1)
        if self.training:
            if x.shape[0] < 2:
                raise ValueError(f"BatchNorm2d needs a batch of at least 2 in train mode, got {x.shape[0]}")
            xc, mu = ag.center(x, axis=(0, 2, 3))
            var = ag.mean(xc * xc, axis=(0, 2, 3), keepdims=True)
            y = xc * ag.power(var + self.eps, -0.5)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu.reshape(-1)).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var.data.reshape(-1)).astype(self.running_var.dtype)
            self.num_batches_tracked = self.num_batches_tracked + 1
        else:
            if int(self.num_batches_tracked) == 0:
                raise RuntimeError("BatchNorm2d: eval mode before any training step (no running statistics)")
            scale = 1.0 / np.sqrt(self.running_var + self.eps)
            y = (x - Tensor(self.running_mean.reshape(shape))) * Tensor(scale.reshape(shape).astype(x.dtype))
        return y * ag.reshape(self.gamma, shape) + ag.reshape(self.beta, shape)


# -- blocks --------------------------------------------------------------------
class ResidualBlock(Module):
    """BN -> ReLU -> Conv -> BN -> ReLU -> Conv, plus a shortcut.

    The shortcut is the identity when shapes match, otherwise a strided 1x1
    convolution projection.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, algebra: str = "quaternion",
                 kernel_size: int = 3, bn_granularity: str = "group", rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.algebra = algebra
        if algebra == "quaternion":
            conv = lambda i, o, k, s: QConv2d(i, o, k, s, rng=rng, dtype=dtype)
            bn = lambda c: QBatchNorm(c, granularity=bn_granularity, dtype=dtype)
        elif algebra == "real":
            conv = lambda i, o, k, s: Conv2d(i, o, k, s, rng=rng, dtype=dtype)
            bn = lambda c: BatchNorm2d(c, dtype=dtype)
        else:
            raise ValueError(f"unknown algebra {algebra!r}")
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        self.bn1 = bn(in_channels)
        self.conv1 = conv(in_channels, out_channels, kernel_size, stride)
        self.bn2 = bn(out_channels)
        self.conv2 = conv(out_channels, out_channels, kernel_size, 1)
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = conv(in_channels, out_channels, 1, stride)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"ResidualBlock: expected {self.in_channels} channels, got input {x.shape}")
        h = self.conv1(ag.relu(self.bn1(x)))
        h = self.conv2(ag.relu(self.bn2(h)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return skip + h


class LearnImaginaryBlock(Module):
    """Builds a QTensor from a real image: real lane = image, i/j/k lanes = image + residual_q(image)."""

    def __init__(self, in_channels: int = 3, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.in_channels = in_channels
        self.blocks = [ResidualBlock(in_channels, in_channels, algebra="real", rng=rng, dtype=dtype) for _ in range(3)]

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != self.in_channels:
            raise ShapeError(f"LearnImaginaryBlock: expected (N, {self.in_channels}, H, W), got {image.shape}")
        return ag.concat([image] + [blk(image) for blk in self.blocks], axis=1)


LUMA = (0.299, 0.587, 0.114)


def rgb_to_quaternion(image: Tensor) -> Tensor:
    """(N, 3, H, W) RGB -> (N, 4, H, W) QTensor: real = BT.601 luma, i/j/k = R/G/B."""
    image = ag.as_tensor(image)
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"rgb_to_quaternion: expected (N, 3, H, W), got {image.shape}")
    coeff = np.array(LUMA, dtype=image.dtype).reshape(1, 3, 1, 1)
    gray = ag.tsum(image * coeff, axis=1, keepdims=True)
    return ag.concat([gray, image], axis=1)
