"""Residual network assembly for classification and segmentation."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    LearnImaginaryBlock,
    Module,
    QBatchNorm,
    QConv2d,
    ResidualBlock,
    rgb_to_quaternion,
)

INPUT_MODES = ("learned-imaginary", "rgb-axes")


class ResNet(Module):
    """Three stages of residual blocks; widths double from stage to stage.

    ``base_filters`` counts quaternion filters, so the first stage carries
    ``4 * base_filters`` real feature maps. With ``algebra="real"`` the same
    graph is built from real layers at the same real widths (i.e. a real
    network with 4x the quaternion filter count).

    classify: stem -> stages (strided first conv in stages 2 and 3) -> BN ->
    ReLU -> global average pool -> dense logits.
    segment: no striding; the head is a 1x1 convolution producing one logit
    per pixel (sigmoid gives the heatmap).
    """

    def __init__(
        self,
        task: str = "classify",
        blocks=(2, 1, 1),
        base_filters: int = 8,
        input_mode: str = "learned-imaginary",
        in_channels: int = 3,
        num_classes: int = 10,
        algebra: str = "quaternion",
        bn_granularity: str = "group",
        rng=None,
        dtype=np.float32,
    ):
        if task not in ("classify", "segment"):
            raise ValueError(f"unknown task {task!r}")
        if input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {input_mode!r}; expected one of {INPUT_MODES}")
        if algebra not in ("quaternion", "real"):
            raise ValueError(f"unknown algebra {algebra!r}")
        if base_filters < 1 or len(blocks) != 3 or min(blocks) < 1:
            raise ValueError(f"need three stages with >= 1 block and base_filters >= 1, got {blocks}, {base_filters}")
        if input_mode == "rgb-axes" and in_channels != 3:
            raise ShapeError(f"rgb-axes input needs 3 channels, got {in_channels}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.task, self.algebra, self.input_mode = task, algebra, input_mode
        self.in_channels, self.num_classes = in_channels, num_classes
        self.dtype = np.dtype(dtype)
        widths = [4 * base_filters * 2**s for s in range(3)]
        self.widths = widths

        quat = algebra == "quaternion"
        if quat:
            self.input_block = LearnImaginaryBlock(in_channels, rng=rng, dtype=dtype) if input_mode == "learned-imaginary" else None
            stem_in = 4 * in_channels if input_mode == "learned-imaginary" else 4
            self.stem = QConv2d(stem_in, widths[0], 3, rng=rng, dtype=dtype)
            self.stem_bn = QBatchNorm(widths[0], granularity=bn_granularity, dtype=dtype)
        else:
            self.input_block = None
            self.stem = Conv2d(in_channels, widths[0], 3, rng=rng, dtype=dtype)
            self.stem_bn = BatchNorm2d(widths[0], dtype=dtype)

        self.stages = []
        prev = widths[0]
        for s, (n_blocks, width) in enumerate(zip(blocks, widths)):
            for b in range(n_blocks):
                stride = 2 if (task == "classify" and s > 0 and b == 0) else 1
                self.stages.append(
                    ResidualBlock(prev, width, stride, algebra=algebra, bn_granularity=bn_granularity, rng=rng, dtype=dtype)
                )
                prev = width

        self.final_bn = QBatchNorm(prev, granularity=bn_granularity, dtype=dtype) if quat else BatchNorm2d(prev, dtype=dtype)
        if task == "classify":
            self.head = Dense(prev, num_classes, rng=rng, dtype=dtype)
        else:
            self.head = Conv2d(prev, 1, 1, bias=True, rng=rng, dtype=dtype)

    def to_quaternion(self, image: Tensor) -> Tensor:
        if self.input_block is not None:
            return self.input_block(image)
        return rgb_to_quaternion(image)

    def forward(self, image) -> Tensor:
        """Logits: (N, num_classes) for classify, (N, 1, H, W) for segment."""
        image = ag.as_tensor(image, dtype=self.dtype)
        if image.ndim != 4 or image.shape[1] != self.in_channels:
            raise ShapeError(f"model expects (N, {self.in_channels}, H, W) images, got {image.shape}")
        h = self.to_quaternion(image) if self.algebra == "quaternion" else image
        h = ag.relu(self.stem_bn(self.stem(h)))
        for block in self.stages:
            h = block(h)
        h = ag.relu(self.final_bn(h))
        if self.task == "classify":
            return self.head(ag.global_avg_pool(h))
        return self.head(h)

    def predict(self, image) -> np.ndarray:
        """Class probabilities (classify) or the sigmoid heatmap (segment), without a tape."""
        with ag.no_grad():
            logits = self.forward(image).data
        if self.task == "classify":
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        return ag._sigmoid(logits)


MODEL_PRESETS = {
    "tiny": {"blocks": (1, 1, 1), "base_filters": 2},
    "shallow": {"blocks": (2, 1, 1), "base_filters": 8},
    "deep": {"blocks": (10, 9, 9), "base_filters": 8},
}


def build_model(config, algebra: str = "quaternion") -> ResNet:
    """Assemble a :class:`ResNet` from an :class:`~quatnet.config.ExperimentConfig`."""
    return ResNet(
        task=config.task,
        blocks=tuple(config.blocks),
        base_filters=config.base_filters,
        input_mode=config.input_mode,
        in_channels=3,
        num_classes=config.num_classes,
        algebra=algebra,
        bn_granularity=config.bn_granularity,
        rng=np.random.default_rng(config.seed),
        dtype=np.dtype(config.dtype),
    )


def count_params(model: Module | None) -> int:
    """Total number of learnable scalars."""
    if model is None:
        return 0
    return int(sum(p.size for p in model.parameters()))
