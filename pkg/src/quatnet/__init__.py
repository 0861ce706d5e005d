"""Quaternion convolutional networks on a small numpy autodiff engine."""
from ._kernels import BACKEND
from .autograd import Tensor, grad_check, no_grad
from .config import ExperimentConfig, load_config
from .init import InitSpec, chi4_cdf, chi4_pdf, chi4_sample, init_layer, init_qweight, sample_axis
from .layers import QBatchNorm, QConv2d, QDense
from .linalg4 import build_whitener, cholesky, tri_inverse, whiten
from .models import ResNet, build_model, count_params
from .optim import SGD, LRSchedule, clip_gradients, lr_at, nesterov_step
from .quat_core import Quaternion, embed, qmul

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ExperimentConfig",
    "InitSpec",
    "LRSchedule",
    "QBatchNorm",
    "QConv2d",
    "QDense",
    "Quaternion",
    "ResNet",
    "SGD",
    "Tensor",
    "build_model",
    "build_whitener",
    "chi4_cdf",
    "chi4_pdf",
    "chi4_sample",
    "cholesky",
    "clip_gradients",
    "count_params",
    "embed",
    "grad_check",
    "init_layer",
    "init_qweight",
    "load_config",
    "lr_at",
    "nesterov_step",
    "no_grad",
    "qmul",
    "sample_axis",
    "tri_inverse",
    "whiten",
]
