import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quatnet.autograd import Tensor
from quatnet.errors import ShapeError
from quatnet.optim import SGD, LRSchedule, OptState, clip_gradients, global_norm, lr_at, nesterov_step

from strategies import seeds


def grads_from(seed, scale):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(s) * scale for s in ((3,), (2, 2), (4, 1, 2))]


# -- clipping -----------------------------------------------------------------------
def test_small_norm_unchanged():
    g = [np.array([0.3, 0.4])]  # norm 0.5
    out = clip_gradients(g, 1.0)
    np.testing.assert_array_equal(out[0], g[0])


def test_large_norm_scaled_to_max():
    g = [np.array([0.0, 4.0])]
    out = clip_gradients(g, 1.0)
    np.testing.assert_allclose(out[0], [0.0, 1.0])
    assert global_norm(out) == pytest.approx(1.0)


def test_norm_is_global_across_parameters():
    g = [np.array([3.0]), np.array([4.0])]  # joint norm 5
    out = clip_gradients(g, 1.0)
    np.testing.assert_allclose([out[0][0], out[1][0]], [0.6, 0.8])


@given(seeds, st.floats(1e-3, 1e3), st.floats(1e-2, 10))
def test_clipped_norm_bounded_and_idempotent(seed, scale, max_norm):
    g = grads_from(seed, scale)
    once = clip_gradients(g, max_norm)
    assert global_norm(once) <= max_norm + 1e-12
    twice = clip_gradients(once, max_norm)
    for a, b in zip(once, twice):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_clip_rejects_nonpositive():
    with pytest.raises(ValueError):
        clip_gradients([np.ones(2)], 0.0)


# -- nesterov -------------------------------------------------------------------------
def test_hand_iteration_on_scalar_quadratic():
    # f(p) = p^2, g = 2p; p0 = 1, lr 0.1, mu 0.9
    state = OptState(lr=0.1, momentum=0.9)
    p = [np.array([1.0])]
    p = nesterov_step(p, [2 * p[0]], state)
    assert p[0][0] == pytest.approx(0.62, abs=1e-15)
    assert state.velocity[0][0] == pytest.approx(-0.2, abs=1e-15)
    p = nesterov_step(p, [2 * p[0]], state)
    assert state.velocity[0][0] == pytest.approx(-0.304, abs=1e-15)
    assert p[0][0] == pytest.approx(0.2224, abs=1e-15)
    assert state.steps == 2


@given(seeds)
def test_zero_momentum_is_plain_sgd(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.standard_normal((2, 5))
    state = OptState(lr=0.05, momentum=0.0)
    for _ in range(3):
        new = nesterov_step([p], [g], state)[0]
        np.testing.assert_array_equal(new, p - 0.05 * g)
        p = new


def test_zero_gradient_zero_velocity_is_fixed_point():
    p = np.arange(4.0)
    out = nesterov_step([p], [np.zeros(4)], OptState(lr=0.1, momentum=0.9))
    np.testing.assert_array_equal(out[0], p)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        nesterov_step([np.zeros(3)], [np.zeros(4)], OptState())
    with pytest.raises(ShapeError):
        nesterov_step([np.zeros(3)], [], OptState())


def test_convex_quadratic_loss_monotone():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    a = q @ np.diag(np.linspace(1, 10, 6)) @ q.T
    loss = lambda x: 0.5 * x @ a @ x
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    opt = SGD([x], lr=1e-3, momentum=0.9, clip_norm=None)
    prev = loss(x.data)
    for _ in range(100):
        x.grad = a @ x.data
        opt.step()
        cur = loss(x.data)
        assert cur <= prev + 1e-15
        prev = cur


def test_sgd_clips_and_reports_norm():
    x = Tensor(np.zeros(2), requires_grad=True)
    opt = SGD([x], lr=1.0, momentum=0.0, clip_norm=1.0)
    x.grad = np.array([3.0, 4.0])
    assert opt.step() == pytest.approx(5.0)
    np.testing.assert_allclose(x.data, [-0.6, -0.8])
    opt.zero_grad()
    assert x.grad is None
    opt.step()  # missing gradients count as zero
    np.testing.assert_allclose(x.data, [-0.6, -0.8])


def test_velocity_mirrors_parameter_shapes():
    ps = [Tensor(np.zeros(s), requires_grad=True) for s in ((2, 3), (4,))]
    opt = SGD(ps)
    assert [v.shape for v in opt.state.velocity] == [(2, 3), (4,)]


# -- schedules -------------------------------------------------------------------------
@pytest.mark.parametrize(
    "epoch, lr",
    [(1, 0.01), (5, 0.01), (10, 0.01), (11, 0.1), (100, 0.1), (110, 0.1), (119, 0.1),
     (120, 0.01), (125, 0.01), (149, 0.01), (150, 0.001), (160, 0.001), (200, 0.001)],
)
def test_classification_schedule(epoch, lr):
    assert lr_at("classification", epoch) == pytest.approx(lr, rel=1e-12)


@pytest.mark.parametrize(
    "epoch, lr",
    [(1, 0.01), (10, 0.01), (11, 0.1), (50, 0.1), (99, 0.1), (100, 0.01), (149, 0.01), (150, 0.001)],
)
def test_segmentation_schedule(epoch, lr):
    assert lr_at(LRSchedule.named("segmentation"), epoch) == pytest.approx(lr, rel=1e-12)


def test_schedule_errors():
    with pytest.raises(ValueError):
        lr_at("classification", 0)
    with pytest.raises(ValueError):
        LRSchedule.named("cosine")


@given(st.integers(1, 300))
def test_schedules_piecewise_nonincreasing_after_warmup(epoch):
    for kind in ("classification", "segmentation"):
        if epoch > 11:
            assert lr_at(kind, epoch) <= lr_at(kind, epoch - 1)
