"""Small fixtures shared by the training tests."""
import numpy as np

from quatnet.config import ExperimentConfig
from quatnet.data import Dataset, Split, synth_cifar_images


def tiny_classify_dataset(n_train=48, n_val=20, seed=0, dtype=np.float64):
    x, y = synth_cifar_images(seed, n_train + n_val)
    x = x.astype(dtype) / 255.0
    mean, std = x[:n_train].mean(axis=(0, 2, 3)), x[:n_train].std(axis=(0, 2, 3))
    x = (x - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(Split(x[:n_train], y[:n_train], "classify"), Split(x[n_train:], y[n_train:], "classify"), mean, std)


def tiny_config(tmp_path, **kw):
    values = dict(epochs=2, batch_size=8, seed=0, out_dir=str(tmp_path), timing=False)
    values.update(kw)
    return ExperimentConfig.from_preset("tiny", **values)
