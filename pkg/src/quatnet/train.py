"""Training and evaluation loops with metrics CSV and checkpointing."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .config import ExperimentConfig
from .data import Dataset, Split, load_cifar10, segmentation_dataset
from .errors import NonFiniteError, TrainingDivergedError
from .models import ResNet, build_model
from .optim import SGD, LRSchedule, lr_at

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_metric", "val_metric", "seconds")
LAST_NAME, BEST_NAME, METRICS_NAME = "last.qnc", "best.qnc", "metrics.csv"
EVAL_BATCH = 100


# -- metrics -----------------------------------------------------------------------
def classification_error(logits_or_labels, labels) -> float:
    """Fraction misclassified; accepts (N, K) scores or (N,) predicted labels."""
    pred = np.asarray(logits_or_labels)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
    labels = np.asarray(labels)
    if pred.shape != labels.shape or labels.size == 0:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {labels.shape}")
    return float(np.mean(pred != labels))


def iou_counts(probs, masks, threshold: float = 0.5) -> tuple[int, int]:
    pred = np.asarray(probs) > threshold
    gt = np.asarray(masks).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"heatmap shape {pred.shape} does not match masks {gt.shape}")
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def iou(probs, masks, threshold: float = 0.5) -> float:
    """|P & G| / |P | G| over the whole set with P = probs > threshold; 1 when both are empty."""
    inter, union = iou_counts(probs, masks, threshold)
    return 1.0 if union == 0 else inter / union


def higher_is_better(task: str) -> bool:
    return task == "segment"


# -- metrics report --------------------------------------------------------------
@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row):
        missing = set(METRIC_COLUMNS) - set(row)
        if missing:
            raise ValueError(f"metrics row missing {sorted(missing)}")
        self.rows.append({k: row[k] for k in METRIC_COLUMNS})

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRIC_COLUMNS[1:]])
        return out.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path) -> "MetricsReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rep = cls()
        for r in rows:
            rep.append(epoch=int(r["epoch"]), **{k: float(r[k]) for k in METRIC_COLUMNS[1:]})
        return rep

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


@dataclass
class TrainResult:
    report: MetricsReport
    model: ResNet
    out_dir: Path
    best_path: Path
    last_path: Path
    best_metric: float | None


# -- data -------------------------------------------------------------------------
def load_dataset(config: ExperimentConfig) -> Dataset:
    dtype = np.dtype(config.dtype)
    if config.task == "classify":
        if not config.data:
            raise ValueError("classification needs a CIFAR-10 directory (config key 'data')")
        return load_cifar10(config.data, config.train_subset, config.val_subset, dtype=dtype)
    if config.data not in ("", "synthetic"):
        raise ValueError(f"segmentation uses the procedural dataset; set data = synthetic, got {config.data!r}")
    return segmentation_dataset(config.data_seed, config.seg_count, config.seg_size, dtype=dtype)


def check_task(task: str, split: Split):
    if split.task != task:
        raise ValueError(f"task mismatch: model is for {task!r} but the dataset is for {split.task!r}")
    if task == "classify" and split.y.ndim != 1:
        raise ValueError(f"classification needs (N,) labels, dataset has targets of shape {split.y.shape}")
    if task == "segment" and split.y.ndim != 4:
        raise ValueError(f"segmentation needs (N, 1, H, W) masks, dataset has targets of shape {split.y.shape}")


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index batches over a permutation (or in order); a trailing batch of one is dropped
    because batch statistics need at least two samples."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2 and rng is not None:
            break
        yield idx


def loss_fn(task: str, logits, targets):
    if task == "classify":
        return ag.softmax_cross_entropy(logits, targets)
    return ag.sigmoid_binary_cross_entropy(logits, targets)


# -- evaluation ---------------------------------------------------------------------
def evaluate_split(model: ResNet, split: Split, batch_size: int = EVAL_BATCH) -> float:
    """Error rate (classify) or IoU (segment) of ``model`` in eval mode."""
    check_task(model.task, split)
    was_training = model.training
    model.eval()
    try:
        wrong = inter = union = 0
        for idx in batches(len(split), batch_size):
            probs = model.predict(split.x[idx])
            if model.task == "classify":
                wrong += int(np.count_nonzero(probs.argmax(axis=1) != split.y[idx]))
            else:
                i, u = iou_counts(probs, split.y[idx])
                inter, union = inter + i, union + u
    finally:
        model.train(was_training)
    if model.task == "classify":
        return wrong / len(split)
    return 1.0 if union == 0 else inter / union


def model_from_checkpoint(ck: ckpt_io.Checkpoint) -> tuple[ResNet, ExperimentConfig]:
    config = ExperimentConfig.from_dict(ck.meta["config"])
    model = build_model(config, algebra=ck.meta.get("algebra", "quaternion"))
    ckpt_io.restore(model, ck)
    model.eval()
    return model, config


def evaluate(checkpoint, data=None, task: str | None = None) -> dict:
    """Evaluate a checkpoint on a dataset.

    ``data`` is a CIFAR directory, ``"synthetic"``, a :class:`Dataset`/:class:`Split`,
    or None to reuse the dataset recorded in the checkpoint's config. For a
    dataset the validation split is used.
    """
    ck = checkpoint if isinstance(checkpoint, ckpt_io.Checkpoint) else ckpt_io.load(checkpoint)
    model, config = model_from_checkpoint(ck)
    if task is not None and task != config.task:
        raise ValueError(f"task mismatch: checkpoint was trained for {config.task!r}, asked to evaluate {task!r}")
    if isinstance(data, Split):
        split = data
    elif isinstance(data, Dataset):
        split = data.val
    else:
        if data is not None:
            kind = "segment" if str(data) == "synthetic" else "classify"
            if kind != config.task:
                raise ValueError(f"task mismatch: checkpoint was trained for {config.task!r} but {data!r} is {kind!r} data")
            config.data = str(data)
        split = load_dataset(config).val
    value = evaluate_split(model, split)
    key = "error" if config.task == "classify" else "iou"
    return {"task": config.task, key: value, "n": len(split), "epoch": ck.meta.get("epoch", 0)}


# -- training ---------------------------------------------------------------------
def _meta(config, epoch, report, best, algebra):
    return {
        "config": config.to_dict(),
        "epoch": epoch,
        "metrics": report.rows,
        "best_metric": best,
        "algebra": algebra,
    }


def train(
    config: ExperimentConfig,
    dataset: Dataset | None = None,
    resume: str | Path | None = None,
    algebra: str = "quaternion",
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train ``config.epochs`` epochs; metrics.csv plus last and best checkpoints go to ``config.out_dir``.

    Deterministic for a fixed seed: batch order for epoch ``e`` comes from
    ``default_rng([seed, e])``, so a resumed run continues exactly as an
    uninterrupted one would.
    """
    dataset = dataset if dataset is not None else load_dataset(config)
    check_task(config.task, dataset.train)
    check_task(config.task, dataset.val)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    last_path, best_path, metrics_path = out / LAST_NAME, out / BEST_NAME, out / METRICS_NAME

    model = build_model(config, algebra=algebra)
    opt = SGD(model.parameters(), lr=lr_at(config.schedule, 1) * config.lr_scale,
              momentum=config.momentum, clip_norm=config.clip_norm)
    schedule = LRSchedule.named(config.schedule)
    report = MetricsReport()
    best = None
    start = 0
    if resume is not None:
        ck = ckpt_io.load(resume)
        ckpt_io.restore(model, ck, opt)
        start = int(ck.meta["epoch"])
        for row in ck.meta.get("metrics", []):
            report.append(**row)
        best = ck.meta.get("best_metric")
    if start == 0 and config.epochs == 0:
        snap = ckpt_io.capture(model, opt, _meta(config, 0, report, best, algebra))
        ckpt_io.save(last_path, snap)
        ckpt_io.save(best_path, snap)

    x, y = dataset.train.x, dataset.train.y
    model.train()
    for epoch in range(start + 1, config.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = lr_at(schedule, epoch) * config.lr_scale
        rng = np.random.default_rng([config.seed, epoch])
        loss_sum, seen, wrong, inter, union = 0.0, 0, 0, 0, 0
        for step, idx in enumerate(batches(len(x), config.batch_size, rng), 1):
            try:
                logits = model(x[idx])
                loss = loss_fn(config.task, logits, y[idx])
            except NonFiniteError:
                raise TrainingDivergedError(epoch, step, float("nan")) from None
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += value * len(idx)
            seen += len(idx)
            if config.task == "classify":
                wrong += int(np.count_nonzero(logits.data.argmax(axis=1) != y[idx]))
            else:
                i, u = iou_counts(logits.data > 0, y[idx])
                inter, union = inter + i, union + u
        train_metric = wrong / seen if config.task == "classify" else (1.0 if union == 0 else inter / union)
        val_metric = evaluate_split(model, dataset.val)
        seconds = time.perf_counter() - t0 if config.timing else 0.0
        report.append(epoch=epoch, lr=opt.lr, train_loss=loss_sum / seen, train_metric=train_metric,
                      val_metric=val_metric, seconds=seconds)
        improved = best is None or (val_metric > best if higher_is_better(config.task) else val_metric < best)
        if improved:
            best = val_metric
        snap = ckpt_io.capture(model, opt, _meta(config, epoch, report, best, algebra))
        ckpt_io.save(last_path, snap)
        if improved:
            ckpt_io.save(best_path, snap)
        report.write(metrics_path)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {opt.lr:.4g}  loss {loss_sum / seen:.4f}  "
                f"train {train_metric:.4f}  val {val_metric:.4f}  {seconds:.1f}s")
    report.write(metrics_path)
    return TrainResult(report, model, out, best_path, last_path, best)
