"""CIFAR binary batches and procedural stand-ins (road segmentation, CIFAR-format
synthetic images) for runs without real data.

CIFAR-10 binary layout: each record is 1 label byte followed by 3072 pixel
bytes (1024 red, then 1024 green, then 1024 blue, row-major 32x32). The
CIFAR-100 variant has two label bytes (coarse, fine).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

IMAGE_SHAPE = (3, 32, 32)
IMAGE_BYTES = 3 * 32 * 32
RECORD_BYTES = 1 + IMAGE_BYTES
CIFAR10_TRAIN = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST = "test_batch.bin"
CIFAR100_TRAIN = ("train.bin",)
CIFAR100_TEST = "test.bin"


@dataclass
class Split:
    """Images (N, C, H, W) float, targets: int labels (N,) or {0,1} masks (N, 1, H, W)."""

    x: np.ndarray
    y: np.ndarray
    task: str

    def __len__(self):
        return len(self.x)

    def subset(self, n: int) -> "Split":
        if n <= 0 or n >= len(self):
            return self
        return Split(self.x[:n], self.y[:n], self.task)


@dataclass
class Dataset:
    train: Split
    val: Split
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def task(self) -> str:
        return self.train.task


# -- CIFAR binary ------------------------------------------------------------------
def parse_records(buf: bytes, label_bytes: int = 1, num_classes: int = 10, source: str = "<bytes>"):
    """Decode a run of CIFAR records into (uint8 images (N, 3, 32, 32), int64 labels (N,)).

    With two label bytes (CIFAR-100) the second (fine) label is returned.
    """
    rec = label_bytes + IMAGE_BYTES
    if len(buf) % rec:
        whole = len(buf) // rec
        raise DataFormatError(
            f"{source}: {len(buf)} bytes is not a whole number of {rec}-byte records; "
            f"record {whole} at byte offset {whole * rec} is truncated to {len(buf) - whole * rec} bytes",
            offset=whole * rec,
        )
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(
            f"{source}: record {i} at byte offset {i * rec} has label {labels[i]}, expected 0..{num_classes - 1}",
            offset=i * rec,
        )
    images = raw[:, label_bytes:].reshape(-1, *IMAGE_SHAPE)
    return images, labels


def read_batch_file(path, label_bytes: int = 1, num_classes: int = 10):
    path = Path(path)
    return parse_records(path.read_bytes(), label_bytes, num_classes, source=str(path))


def encode_records(images, labels) -> bytes:
    """Inverse of :func:`parse_records` for the one-label-byte format."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.shape[1:] != IMAGE_SHAPE:
        raise DataFormatError(f"expected uint8 images of shape (N, 3, 32, 32), got {images.dtype} {images.shape}")
    if labels.shape != (len(images),) or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise DataFormatError(f"labels must be (N,) bytes, got shape {labels.shape}")
    out = np.empty((len(images), RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = labels
    out[:, 1:] = images.reshape(len(images), -1)
    return out.tobytes()


def write_batch_file(path, images, labels):
    Path(path).write_bytes(encode_records(images, labels))


def _read_files(root: Path, names, label_bytes, num_classes):
    xs, ys = [], []
    for name in names:
        p = root / name
        if p.exists():
            x, y = read_batch_file(p, label_bytes, num_classes)
            xs.append(x)
            ys.append(y)
    if not xs:
        return None
    return np.concatenate(xs), np.concatenate(ys)


def normalize(x_uint8, mean, std, dtype=np.float32):
    x = x_uint8.astype(np.float64) / 255.0
    return ((x - mean[None, :, None, None]) / std[None, :, None, None]).astype(dtype)


def load_cifar(
    path,
    train_subset: int = 0,
    val_subset: int = 0,
    variant: str = "cifar10",
    dtype=np.float32,
) -> Dataset:
    """Load CIFAR binary batches from ``path``.

    Training images come from the training batch files present (at least one is
    required), in file order; validation images from the test batch, or, when
    it is absent, from the records following the training subset. Subsets take
    the first ``n`` records. Channels are normalized to zero mean and unit
    variance using statistics of the training images actually used.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"CIFAR directory not found: {root}")
    if variant == "cifar10":
        train_names, test_name, label_bytes, k = CIFAR10_TRAIN, CIFAR10_TEST, 1, 10
    elif variant == "cifar100":
        train_names, test_name, label_bytes, k = CIFAR100_TRAIN, CIFAR100_TEST, 2, 100
    else:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    train = _read_files(root, train_names, label_bytes, k)
    if train is None:
        raise FileNotFoundError(f"no training batches ({', '.join(train_names)}) in {root}")
    xtr, ytr = train
    test = _read_files(root, (test_name,), label_bytes, k)
    if train_subset > 0:
        if test is None:
            test = (xtr[train_subset:], ytr[train_subset:])
        xtr, ytr = xtr[:train_subset], ytr[:train_subset]
    if test is None:
        raise FileNotFoundError(f"no {test_name} in {root} and no training records left over for validation")
    xva, yva = test
    if val_subset > 0:
        xva, yva = xva[:val_subset], yva[:val_subset]
    if len(xva) == 0:
        raise DataFormatError(f"validation split in {root} is empty")

    pix = xtr.astype(np.float64) / 255.0
    mean = pix.mean(axis=(0, 2, 3))
    std = pix.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return Dataset(
        Split(normalize(xtr, mean, std, dtype), ytr, "classify"),
        Split(normalize(xva, mean, std, dtype), yva, "classify"),
        mean,
        std,
    )


def load_cifar10(path, train_subset: int = 0, val_subset: int = 0, dtype=np.float32) -> Dataset:
    return load_cifar(path, train_subset, val_subset, "cifar10", dtype)


# -- synthetic data --------------------------------------------------------------------
def _smooth_noise(rng, size, scale):
    """Low-frequency texture: coarse noise upsampled by repetition."""
    cells = max(2, size // 4)
    coarse = rng.standard_normal((3, cells, cells))
    rep = -(-size // cells)
    return scale * np.kron(coarse, np.ones((rep, rep)))[:, :size, :size]


def synth_segmentation(
    seed: int,
    count: int,
    size: int = 32,
    area_bounds: tuple[float, float] = (0.1, 0.5),
    dtype=np.float32,
):
    """Road-like wedges seen from a forward camera.

    The road is the region between two edges rising from the bottom border to a
    vanishing point on the horizon. Returns
    ``(images (count, 3, size, size), masks (count, 1, size, size) uint8)``;
    every mask's road fraction lies within ``area_bounds``.
    """
    lo, hi = area_bounds
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"area_bounds must satisfy 0 <= lo < hi <= 1, got {area_bounds}")
    if size < 4:
        raise ValueError(f"size must be >= 4, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    images = np.empty((count, 3, size, size), dtype=dtype)
    masks = np.empty((count, 1, size, size), dtype=np.uint8)
    for n in range(count):
        for _ in range(1000):
            horizon = rng.uniform(0.25, 0.55) * size
            vx = rng.uniform(0.3, 0.7) * size
            left = rng.uniform(-0.4, 0.4) * size
            right = left + rng.uniform(0.5, 1.2) * size
            t = np.clip((yy - horizon) / (size - horizon), 0.0, None)
            m = (yy > horizon) & (xx >= vx + (left - vx) * t) & (xx <= vx + (right - vx) * t)
            frac = m.mean()
            if lo <= frac <= hi:
                break
        else:
            raise RuntimeError(f"could not draw a wedge with area fraction in {area_bounds}")
        road = rng.uniform(0.3, 0.5) + 0.05 * rng.standard_normal(3)
        ground = np.array([0.25, 0.5, 0.2]) + 0.1 * rng.standard_normal(3)
        sky = np.array([0.5, 0.7, 0.95]) + 0.05 * rng.standard_normal(3)
        img = np.where((yy < horizon)[None], sky[:, None, None], ground[:, None, None])
        img = np.where(m[None], road[:, None, None], img)
        img = img + _smooth_noise(rng, size, 0.05) + 0.03 * rng.standard_normal((3, size, size))
        images[n] = img
        masks[n, 0] = m
    return images, masks


def segmentation_dataset(seed: int, count: int, size: int = 32, val_fraction: float = 0.25, dtype=np.float32) -> Dataset:
    x, m = synth_segmentation(seed, count, size, dtype=dtype)
    n_val = max(1, int(round(count * val_fraction)))
    if count - n_val < 2:
        raise ValueError(f"need at least {n_val + 2} images for a train/val split, got {count}")
    mean = x[:-n_val].mean(axis=(0, 2, 3))
    std = x[:-n_val].std(axis=(0, 2, 3))
    x = ((x - mean[None, :, None, None]) / std[None, :, None, None]).astype(dtype)
    return Dataset(Split(x[:-n_val], m[:-n_val], "segment"), Split(x[-n_val:], m[-n_val:], "segment"), mean, std)


def synth_cifar_images(seed: int, count: int, num_classes: int = 10):
    """Class-conditional 32x32 uint8 images: each class has its own tint and stripe orientation."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, count)
    yy, xx = np.mgrid[0:32, 0:32] / 32.0
    angles = np.linspace(0, np.pi, num_classes, endpoint=False)
    tints = np.random.default_rng(12345).uniform(0.2, 0.8, (num_classes, 3))
    images = np.empty((count, 3, 32, 32), dtype=np.uint8)
    for n, c in enumerate(labels):
        a = angles[c] + rng.normal(0, 0.15)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = 0.5 + 0.5 * np.sin(2 * np.pi * 4 * (xx * np.cos(a) + yy * np.sin(a)) + phase)
        img = 0.6 * tints[c][:, None, None] + 0.4 * stripes[None] + 0.5 * rng.standard_normal((3, 32, 32))
        images[n] = np.clip(img * 255, 0, 255).astype(np.uint8)
    return images, labels


def write_synthetic_cifar(directory, seed: int = 0, n_train: int = 2000, n_test: int = 500) -> Path:
    """Write ``data_batch_1.bin`` and ``test_batch.bin`` with synthetic class-conditional images."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    x, y = synth_cifar_images(seed, n_train + n_test)
    write_batch_file(root / CIFAR10_TRAIN[0], x[:n_train], y[:n_train])
    write_batch_file(root / CIFAR10_TEST, x[n_train:], y[n_train:])
    return root
