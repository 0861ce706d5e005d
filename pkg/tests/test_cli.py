import csv
import io
import json
import shutil
import subprocess

import numpy as np
import pytest

from quatnet import __version__
from quatnet.cli import main
from quatnet.data import write_synthetic_cifar
from quatnet.init import InitSpec


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cifar_dir(tmp_path):
    return write_synthetic_cifar(tmp_path / "cifar", seed=0, n_train=40, n_test=10)


def write_config(path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def test_train_then_eval(capsys, tmp_path, cifar_dir):
    cfg = write_config(tmp_path / "run.cfg", task="classify", data=cifar_dir, batch_size=8,
                       out_dir=tmp_path / "out", timing="false")
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--epochs", "2", "--seed", "3", "--model", "tiny")
    assert code == 0
    assert "epoch   2" in out
    rows = list(csv.DictReader(open(tmp_path / "out" / "metrics.csv")))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "train_metric", "val_metric", "seconds"]
    assert len(rows) == 2

    code, out, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "out" / "best.qnc"), "--data", str(cifar_dir))
    assert code == 0
    res = json.loads(out)
    assert res["task"] == "classify" and res["n"] == 10 and 0 <= res["error"] <= 1


def test_train_segment_override(capsys, tmp_path):
    cfg = write_config(tmp_path / "seg.cfg", seg_count=12, seg_size=16, batch_size=4, schedule="segmentation",
                       out_dir=tmp_path / "seg", timing="false")
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--task", "segment", "--epochs", "1")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "seg" / "last.qnc"))
    assert json.loads(out)["task"] == "segment"


def test_eval_task_mismatch_exits_with_error(capsys, tmp_path, cifar_dir):
    cfg = write_config(tmp_path / "run.cfg", data=cifar_dir, out_dir=tmp_path / "out", epochs=0)
    assert run(capsys, "train", "--config", str(cfg))[0] == 0
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "out" / "last.qnc"), "--data", "synthetic")
    assert code == 2 and "task mismatch" in err


def test_train_errors_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--epochs", "1", "--out", str(tmp_path))
    assert code == 2 and "CIFAR-10 directory" in err
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path))
    assert code == 2 and "not found" in err


def test_verify_suite(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "algebra", "--suite", "bn", "--threads", "2")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[-1] == "8/8 passed"
    assert all(l.startswith("PASS") for l in lines[:-1])


def test_verify_failure_exit_code(capsys, monkeypatch):
    from quatnet import verify

    monkeypatch.setitem(verify.SUITES, "algebra", {"always_fails": lambda rng: (False, "nope")})
    code, out, _ = run(capsys, "verify", "--suite", "algebra")
    assert code == 1 and "FAIL  algebra/always_fails: nope" in out


def test_count_params(capsys):
    code, out, _ = run(capsys, "count-params", "--model", "shallow", "--compare", "133560")
    assert code == 0
    assert "85588 parameters" in out
    assert "delta to 133560: -47972" in out
    code, out, _ = run(capsys, "count-params", "--model", "shallow", "--algebra", "real")
    assert int(out.split(": ")[1].split()[0]) > 85588


def test_sample_init_histogram(capsys, tmp_path):
    path = tmp_path / "h.csv"
    code, _, _ = run(capsys, "sample-init", "--n-in", "64", "--n-out", "64", "--samples", "50000",
                     "--bins", "40", "--seed", "1", "--out", str(path))
    assert code == 0
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["bin_left", "bin_right", "count", "density", "pdf"]
    assert len(rows) == 40 and sum(int(r["count"]) for r in rows) == 50000
    width = np.array([float(r["bin_right"]) - float(r["bin_left"]) for r in rows])
    dens = np.array([float(r["density"]) for r in rows])
    pdf = np.array([float(r["pdf"]) for r in rows])
    assert np.sum(dens * width) == pytest.approx(1.0, rel=1e-6)
    assert np.sum(np.abs(dens - pdf) * width) < 0.05  # histogram tracks the density
    sigma = InitSpec("glorot", 64, 64).sigma
    assert float(rows[int(np.argmax(dens))]["bin_left"]) == pytest.approx(sigma * np.sqrt(3), abs=2 * width[0])


def test_sample_init_stdout(capsys):
    code, out, _ = run(capsys, "sample-init", "--samples", "1000", "--bins", "5", "--scheme", "he")
    assert code == 0 and len(out.strip().splitlines()) == 6


def test_version_and_usage(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


@pytest.mark.skipif(shutil.which("quatnet") is None, reason="console script not installed")
def test_console_script_entry_point():
    out = subprocess.run(["quatnet", "verify", "--suite", "algebra"], capture_output=True, text=True)
    assert out.returncode == 0 and "4/4 passed" in out.stdout
