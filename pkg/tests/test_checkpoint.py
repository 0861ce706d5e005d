import struct

import numpy as np
import pytest

from quatnet import checkpoint as ck
from quatnet.config import ExperimentConfig
from quatnet.errors import CheckpointError
from quatnet.models import build_model
from quatnet.optim import SGD


def sample():
    return ck.Checkpoint(
        {"epoch": 3, "note": "x"},
        {
            "param/a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "buffer/n": np.array(5, dtype=np.int64),
            "optim/velocity/0": np.zeros((0, 4)),
            "mask": np.array([1, 0, 1], dtype=np.uint8),
        },
        np.dtype("<f4"),
    )


def test_round_trip_exact():
    c = sample()
    data = ck.dumps(c)
    assert data[:8] == b"QNETCKPT"
    version, tag = struct.unpack("<HB", data[8:11])
    assert version == ck.VERSION and ck.DTYPE_TAGS[tag] == np.dtype("<f4")
    back = ck.loads(data)
    assert back.meta == c.meta and back.dtype == c.dtype
    assert list(back.tensors) == list(c.tensors)
    for k, v in c.tensors.items():
        assert back.tensors[k].dtype == v.dtype
        np.testing.assert_array_equal(back.tensors[k], v)
    assert back.group("param") == {"a": back.tensors["param/a"]}


def test_big_endian_input_is_stored_little_endian():
    c = ck.Checkpoint({}, {"x": np.arange(3, dtype=">f8")})
    np.testing.assert_array_equal(ck.loads(ck.dumps(c)).tensors["x"], [0.0, 1.0, 2.0])


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: b"NOTACKPT" + d[8:], "bad magic"),
        (lambda d: d[:8] + struct.pack("<H", 99) + d[10:], "version 99"),
        (lambda d: d[:-3], "truncated"),
        (lambda d: d + b"\0", "trailing"),
        (lambda d: d[:10] + b"\x7f" + d[11:], "dtype tag"),
    ],
)
def test_corruption_detected(mutate, message):
    with pytest.raises(CheckpointError, match=message):
        ck.loads(mutate(ck.dumps(sample())))


def test_unsupported_dtype():
    with pytest.raises(CheckpointError, match="unsupported"):
        ck.dumps(ck.Checkpoint({}, {"c": np.zeros(2, dtype=np.complex128)}))


def test_save_is_atomic_and_loadable(tmp_path):
    path = ck.save(tmp_path / "sub" / "m.qnc", sample())
    assert path.exists() and not list(path.parent.glob("*.tmp"))
    assert ck.load(path).meta["epoch"] == 3


def _model_and_opt(seed):
    cfg = ExperimentConfig.from_preset("tiny", seed=seed, dtype="float64")
    model = build_model(cfg)
    return model, SGD(model.parameters())


def test_model_round_trip_gives_identical_outputs(tmp_path):
    rng = np.random.default_rng(0)
    model, opt = _model_and_opt(1)
    x = rng.standard_normal((4, 3, 32, 32))
    model(x)  # populate running statistics
    for p in model.parameters():
        p.grad = rng.standard_normal(p.shape)
    opt.step()
    model.eval()
    before = model.predict(x)
    ck.save(tmp_path / "m.qnc", ck.capture(model, opt, {"epoch": 1}))

    other, other_opt = _model_and_opt(2)
    loaded = ck.load(tmp_path / "m.qnc")
    ck.restore(other, loaded, other_opt)
    other.eval()
    np.testing.assert_array_equal(other.predict(x), before)
    for a, b in zip(opt.state.velocity, other_opt.state.velocity):
        np.testing.assert_array_equal(a, b)
    assert other_opt.state.steps == 1
    assert loaded.meta["optimizer"]["momentum"] == 0.9


def test_restore_rejects_mismatched_model():
    model, _ = _model_and_opt(0)
    snap = ck.capture(model)
    bigger = build_model(ExperimentConfig.from_preset("shallow"))
    with pytest.raises(CheckpointError, match="parameter names differ|shape"):
        ck.restore(bigger, snap)
    del snap.tensors[next(iter(snap.tensors))]
    with pytest.raises(CheckpointError, match="missing"):
        ck.restore(model, snap)
