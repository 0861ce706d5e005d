import numpy as np
import pytest

from quatnet import checkpoint as ck
from quatnet.config import ExperimentConfig
from quatnet.data import Dataset, Split, write_synthetic_cifar
from quatnet.errors import TrainingDivergedError
from quatnet.models import build_model
from quatnet.train import (
    METRIC_COLUMNS,
    MetricsReport,
    batches,
    classification_error,
    evaluate,
    evaluate_split,
    iou,
    train,
)

from helpers import tiny_classify_dataset, tiny_config


# -- metrics ------------------------------------------------------------------------------
def test_error_perfect_and_constant():
    labels = np.repeat(np.arange(10), 5)
    assert classification_error(labels, labels) == 0.0
    assert classification_error(np.zeros(50, dtype=int), labels) == pytest.approx(0.9)
    scores = np.eye(10)[labels]
    assert classification_error(scores, labels) == 0.0
    with pytest.raises(ValueError):
        classification_error(labels[:3], labels)


def test_iou_cases():
    m = np.zeros((1, 1, 4, 4), dtype=np.uint8)
    m[..., :2, :] = 1
    assert iou(m.astype(float), m) == 1.0
    assert iou(1.0 - m, m) == 0.0
    half = m.copy().astype(float)
    half[..., 1, :] = 0
    assert iou(half, m) == pytest.approx(0.5)
    assert iou(np.zeros_like(m, dtype=float), np.zeros_like(m)) == 1.0
    assert iou(np.full(m.shape, 0.5), m) == 0.0  # threshold is strict


def test_batches_drop_singleton_tail():
    rng = np.random.default_rng(0)
    sizes = [len(b) for b in batches(33, 8, rng)]
    assert sizes == [8, 8, 8, 8]
    assert [len(b) for b in batches(33, 8)] == [8, 8, 8, 8, 1]  # evaluation keeps everything
    idx = np.concatenate(list(batches(20, 8, np.random.default_rng(1))))
    assert sorted(idx) == list(range(20))


def test_metrics_csv_round_trip(tmp_path):
    rep = MetricsReport()
    rep.append(epoch=1, lr=0.01, train_loss=2.5, train_metric=0.8, val_metric=0.75, seconds=0.0)
    rep.append(epoch=2, lr=0.01, train_loss=1 / 3, train_metric=0.5, val_metric=0.5, seconds=1.25)
    text = rep.to_csv()
    assert text.splitlines()[0] == ",".join(METRIC_COLUMNS)
    rep.write(tmp_path / "m.csv")
    assert MetricsReport.read(tmp_path / "m.csv").rows == rep.rows
    with pytest.raises(ValueError, match="missing"):
        rep.append(epoch=3)


# -- training -------------------------------------------------------------------------------
def test_zero_epoch_run_saves_initialization(tmp_path):
    cfg = tiny_config(tmp_path, epochs=0)
    result = train(cfg, dataset=tiny_classify_dataset(dtype=np.float32))
    init = build_model(cfg)
    saved = ck.load(result.last_path)
    for name, p in init.named_parameters():
        np.testing.assert_array_equal(saved.tensors[f"param/{name}"], p.data)
    assert ck.load(result.best_path).meta["epoch"] == 0
    assert result.report.rows == []


def test_metrics_rows_and_files(tmp_path):
    result = train(tiny_config(tmp_path), dataset=tiny_classify_dataset(dtype=np.float32))
    rows = result.report.rows
    assert [r["epoch"] for r in rows] == [1, 2]
    assert all(0 <= r["train_metric"] <= 1 and 0 <= r["val_metric"] <= 1 for r in rows)
    assert all(r["lr"] == pytest.approx(0.01) for r in rows)
    assert all(r["seconds"] == 0.0 for r in rows)
    on_disk = MetricsReport.read(tmp_path / "metrics.csv")
    assert on_disk.rows == rows
    assert result.best_metric == min(r["val_metric"] for r in rows)


def test_same_seed_bit_identical_metrics(tmp_path):
    ds = tiny_classify_dataset(dtype=np.float32)
    train(tiny_config(tmp_path / "a"), dataset=ds)
    train(tiny_config(tmp_path / "b"), dataset=ds)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    ds = tiny_classify_dataset(dtype=np.float32)
    full = train(tiny_config(tmp_path / "full", epochs=3), dataset=ds)
    train(tiny_config(tmp_path / "part", epochs=2), dataset=ds)
    resumed = train(tiny_config(tmp_path / "part", epochs=3), dataset=ds, resume=tmp_path / "part" / "last.qnc")
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()
    for (n, a), (_, b) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)


def test_evaluate_checkpoint_and_round_trip(tmp_path):
    ds = tiny_classify_dataset(dtype=np.float32)
    result = train(tiny_config(tmp_path), dataset=ds)
    direct = evaluate_split(result.model, ds.val)
    out = evaluate(result.last_path, ds)
    assert out == {"task": "classify", "error": direct, "n": len(ds.val), "epoch": 2}
    assert result.model.training  # evaluation restores the mode


def test_evaluate_task_mismatch(tmp_path):
    ds = tiny_classify_dataset(dtype=np.float32)
    result = train(tiny_config(tmp_path, epochs=0), dataset=ds)
    with pytest.raises(ValueError, match="task mismatch"):
        evaluate(result.last_path, task="segment")
    with pytest.raises(ValueError, match="task mismatch"):
        evaluate(result.last_path, "synthetic")
    seg = Split(ds.val.x, np.zeros((len(ds.val), 1, 32, 32), np.uint8), "segment")
    with pytest.raises(ValueError, match="task mismatch"):
        evaluate(result.last_path, seg)


def test_segmentation_training_and_eval(tmp_path):
    cfg = tiny_config(tmp_path, task="segment", schedule="segmentation", seg_count=16, seg_size=16, data="synthetic")
    result = train(cfg)
    assert all(0 <= r["val_metric"] <= 1 for r in result.report.rows)
    out = evaluate(result.best_path, "synthetic")
    assert out["task"] == "segment" and out["n"] == 4
    assert out["iou"] == pytest.approx(max(r["val_metric"] for r in result.report.rows))


def test_training_reads_cifar_directory(tmp_path):
    write_synthetic_cifar(tmp_path / "data", seed=0, n_train=40, n_test=10)
    cfg = tiny_config(tmp_path / "run", data=str(tmp_path / "data"), epochs=1)
    result = train(cfg)
    assert len(result.report.rows) == 1
    assert evaluate(result.last_path)["n"] == 10


def test_non_finite_loss_aborts_with_location(tmp_path):
    ds = tiny_classify_dataset(dtype=np.float32)
    ds.train.x[9] = np.nan  # whichever batch draws this image aborts the run
    with pytest.raises(TrainingDivergedError) as e:
        train(tiny_config(tmp_path), dataset=ds)
    assert e.value.epoch == 1 and e.value.step >= 1
    assert "epoch 1" in str(e.value)


def test_classify_requires_data(tmp_path):
    with pytest.raises(ValueError, match="CIFAR-10 directory"):
        train(tiny_config(tmp_path))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_halves_on_tiny_config(tmp_path, seed):
    # 500-image surrogate in CIFAR format; a constant 0.1 rate because a five-epoch
    # run would otherwise sit entirely in the 0.01 warmup
    write_synthetic_cifar(tmp_path / "data", seed=0, n_train=500, n_test=100)
    cfg = ExperimentConfig.from_preset(
        "tiny", data=str(tmp_path / "data"), epochs=5, seed=seed, schedule="constant", lr_scale=10.0,
        out_dir=str(tmp_path / "run"), timing=False,
    )
    losses = train(cfg).report.column("train_loss")
    assert losses[-1] < 0.5 * losses[0]
