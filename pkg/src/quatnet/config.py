"""Experiment configuration: a flat ``key = value`` text file plus CLI overrides.

Example::

    # tiny CIFAR-10 run
    task = classify
    data = /data/cifar-10-batches-bin
    model = shallow
    epochs = 20
    batch_size = 32
    seed = 0

Unset keys fall back to the dataclass defaults; ``model`` fills ``blocks`` and
``base_filters`` from its preset unless those keys are given explicitly.
No data augmentation is applied; batch size defaults to 32.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .models import INPUT_MODES, MODEL_PRESETS


@dataclass
class ExperimentConfig:
    task: str = "classify"
    data: str = ""
    model: str = "tiny"
    blocks: tuple = (1, 1, 1)
    base_filters: int = 2
    input_mode: str = "learned-imaginary"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    dtype: str = "float32"
    schedule: str = "classification"
    out_dir: str = "runs/default"
    num_classes: int = 10
    momentum: float = 0.9
    clip_norm: float = 1.0
    lr_scale: float = 1.0
    bn_granularity: str = "group"
    train_subset: int = 0
    val_subset: int = 0
    seg_count: int = 64
    seg_size: int = 32
    data_seed: int = 0
    timing: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in ("classify", "segment"):
            raise ValueError(f"task must be classify or segment, got {self.task!r}")
        if self.model not in MODEL_PRESETS:
            raise ValueError(f"model must be one of {sorted(MODEL_PRESETS)}, got {self.model!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.schedule not in ("classification", "segmentation", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        self.blocks = tuple(int(b) for b in self.blocks)
        if len(self.blocks) != 3 or min(self.blocks) < 1:
            raise ValueError(f"blocks must be three positive counts, got {self.blocks}")
        if self.base_filters < 1:
            raise ValueError("base_filters must be positive")
        if self.lr_scale <= 0 or self.momentum < 0 or (self.clip_norm is not None and self.clip_norm <= 0):
            raise ValueError("lr_scale and clip_norm must be positive, momentum non-negative")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")

    @property
    def stage_filters(self) -> list[int]:
        """Quaternion filters per stage (doubling)."""
        return [self.base_filters * 2**s for s in range(3)]

    @classmethod
    def from_preset(cls, model: str = "tiny", **overrides) -> "ExperimentConfig":
        values = dict(MODEL_PRESETS[model])
        values.update(overrides)
        return cls(model=model, **values)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "blocks":
                v = ",".join(str(b) for b in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ValueError(f"unknown config key {name!r}")
    t = types[name]
    raw = raw.strip()
    if name == "blocks":
        return tuple(int(p) for p in raw.replace("/", ",").split(",") if p.strip())
    if t == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"config key {name!r}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a config file (optional) and apply non-None overrides on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    model = values.get("model", "tiny")
    if model not in MODEL_PRESETS:
        raise ValueError(f"model must be one of {sorted(MODEL_PRESETS)}, got {model!r}")
    merged = dict(MODEL_PRESETS[model])
    merged.update(values)
    return ExperimentConfig(**merged)
