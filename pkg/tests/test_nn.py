import math

import numpy as np
import pytest

from drforge.errors import ShapeMismatch
from drforge.nn import (
    AdamW,
    Conv2d,
    GroupNorm,
    Linear,
    OptimizerConfig,
    Tensor,
    adamw_update,
    avgpool2d,
    bce_loss,
    concat,
    conv2d,
    cosine_lr,
    flatten,
    global_avgpool,
    grad_check,
    group_norm,
    linear,
    load_checkpoint,
    mse_loss,
    relu,
    save_checkpoint,
    sigmoid,
)
from drforge.nn.gradcheck import f64
from drforge.nn.layers import ResidualBlock
from drforge.nn.tensor import tsum


def naive_conv(x, w, b, stride, pad):
    """Independent oracle: direct nested-loop cross-correlation."""
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((N, O, OH, OW))
    for n in range(N):
        for o in range(O):
            for i in range(OH):
                for j in range(OW):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 6)).astype(np.float32)
    w = np.zeros((3, 3, 1, 1), dtype=np.float32)
    for c in range(3):
        w[c, c] = 1
    out = conv2d(Tensor(x), Tensor(w))
    assert np.array_equal(out.data, x)


def test_conv_hand_worked():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 3, 3))
    out = conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_array_equal(out[0, 0], [[45, 54], [81, 90]])


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 3), (1, 1, 3), (2, 0, 1), (2, 2, 5)])
def test_conv_matches_naive(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 3, 9, 7))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), atol=1e-10)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 4, 3, 3))))
    with pytest.raises(ShapeMismatch):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeMismatch):
        mse_loss(Tensor(np.zeros(3)), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        bce_loss(Tensor(np.zeros(3)), np.zeros(2))


def test_relu_basics():
    x = f64(np.array([-2.0, -0.5, 0.5, 3.0]))
    y = relu(x)
    np.testing.assert_array_equal(y.data, [0, 0, 0.5, 3.0])
    tsum(y).backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1, 1])


def test_losses_closed_form():
    x = Tensor(np.array([0.3, -1.0]))
    assert mse_loss(x, x.data).item() == 0.0
    assert mse_loss(Tensor(np.array([1.0, 2.0])), np.zeros(2)).item() == pytest.approx(2.5)
    assert bce_loss(Tensor(np.array([0.5])), np.array([1.0])).item() == pytest.approx(math.log(2))
    # extreme probabilities are clamped, not infinite
    assert bce_loss(Tensor(np.array([0.0])), np.array([1.0])).item() == pytest.approx(-math.log(1e-7))


def test_groupnorm_statistics():
    x = Tensor(np.random.default_rng(1).normal(3.0, 2.0, (2, 8, 5, 4)))
    y = group_norm(x, 4).data.reshape(2, 4, -1)
    np.testing.assert_allclose(y.mean(axis=2), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(axis=2), 1.0, atol=1e-5)


def test_sigmoid_stable():
    y = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


# --- gradient checks (float64, h = 1e-4) ------------------------------------


def _rng(i=0):
    return np.random.default_rng(100 + i)


def test_gradcheck_linear():
    x, w, b = f64((4, 5), _rng(1)), f64((3, 5), _rng(2)), f64((3,), _rng(3))
    target = _rng(4).normal(size=(4, 3))
    assert grad_check(lambda: mse_loss(linear(x, w, b), target), [x, w, b]) <= 1e-4


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (2, 0)])
def test_gradcheck_conv(stride, pad):
    x, w, b = f64((2, 3, 6, 5), _rng(5)), f64((4, 3, 3, 3), _rng(6)), f64((4,), _rng(7))
    out_shape = conv2d(x, w, b, stride, pad).shape
    target = _rng(8).normal(size=out_shape)
    assert grad_check(lambda: mse_loss(conv2d(x, w, b, stride, pad), target), [x, w, b]) <= 1e-4


def test_gradcheck_relu_sigmoid_pool():
    # keep inputs away from the relu kink
    data = _rng(9).normal(size=(2, 3, 4, 6))
    data = np.where(np.abs(data) < 0.05, 0.3, data)
    x = f64(data)
    target = _rng(10).normal(size=(2, 3, 2, 3))
    assert grad_check(lambda: mse_loss(avgpool2d(relu(x), 2), target), [x]) <= 1e-4
    t2 = _rng(11).uniform(size=(2, 3))
    assert grad_check(lambda: mse_loss(sigmoid(global_avgpool(x)), t2), [x]) <= 1e-4


def test_gradcheck_groupnorm():
    x, g, b = f64((2, 6, 3, 4), _rng(12)), f64((6,), _rng(13)), f64((6,), _rng(14))
    target = _rng(15).normal(size=(2, 6, 3, 4))
    assert grad_check(lambda: mse_loss(group_norm(x, 3, g, b), target), [x, g, b]) <= 1e-4


def test_gradcheck_bce_and_concat():
    a, b = f64((3, 2), _rng(16)), f64((3, 1), _rng(17))
    label = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    assert grad_check(lambda: bce_loss(sigmoid(concat([a, b], axis=1)), label), [a, b]) <= 1e-4


def test_gradcheck_residual_block():
    rng = np.random.default_rng(3)
    block = ResidualBlock(4, 8, 2, rng, groups=4).astype(np.float64)
    x = f64((2, 4, 7, 6), _rng(18))
    out_shape = block(x).shape
    target = _rng(19).normal(size=out_shape)
    params = list(block.parameters().values()) + [x]
    err = grad_check(lambda: mse_loss(flatten(block(x)), target.reshape(2, -1)), params, n_samples=150)
    assert err <= 1e-4


# --- optimiser -----------------------------------------------------------------


def test_cosine_endpoints_and_midpoint():
    cfg = OptimizerConfig(total_steps=1000)
    assert cosine_lr(0, cfg) == 3e-4
    assert cosine_lr(1000, cfg) == 1e-6
    assert cosine_lr(500, cfg) == pytest.approx((3e-4 + 1e-6) / 2, abs=1e-7)
    lrs = [cosine_lr(t, cfg) for t in range(1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def _scalar_param(v, g):
    p = Tensor(np.array([v], dtype=np.float64), requires_grad=True)
    p.grad = np.array([g], dtype=np.float64)
    return p


def test_adamw_zero_grad():
    cfg = OptimizerConfig(weight_decay=0.0)
    p = _scalar_param(1.5, 0.0)
    m, v = {"p": np.zeros(1)}, {"p": np.zeros(1)}
    adamw_update({"p": p}, m, v, 1, cfg, 1e-3)
    assert p.data[0] == 1.5
    cfg = OptimizerConfig(weight_decay=0.01)
    p = _scalar_param(1.5, 0.0)
    adamw_update({"p": p}, {"p": np.zeros(1)}, {"p": np.zeros(1)}, 1, cfg, 1e-3)
    assert p.data[0] == pytest.approx(1.5 * (1 - 1e-3 * 0.01), abs=1e-12)


def test_adamw_closed_form_two_steps():
    cfg = OptimizerConfig(weight_decay=0.01)
    b1, b2, eps, wd = 0.9, 0.999, 1e-8, 0.01
    p = _scalar_param(0.7, 0.3)
    opt = AdamW({"p": p}, cfg)
    want, m, v = 0.7, 0.0, 0.0
    for t, (g, lr) in enumerate([(0.3, 1e-3), (-0.2, 5e-4)], start=1):
        p.grad = np.array([g])
        opt.step(lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**t), v / (1 - b2**t)
        want = want - lr * (mh / (math.sqrt(vh) + eps) + wd * want)
        assert abs(p.data[0] - want) <= 1e-7


def test_layers_init_and_determinism():
    a = Conv2d(3, 8, 3, np.random.default_rng(0))
    b = Conv2d(3, 8, 3, np.random.default_rng(0))
    assert np.array_equal(a.weight.data, b.weight.data)
    bound = math.sqrt(6 / 27)
    assert np.abs(a.weight.data).max() <= bound
    lin = Linear(10, 4, np.random.default_rng(1))
    assert lin.weight.shape == (4, 10) and np.all(lin.bias.data == 0)
    gn = GroupNorm(16)
    assert gn.weight.shape == (16,)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, dtype=np.float32)}
    save_checkpoint(tmp_path / "c.ckpt", tensors, {"step": 5})
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"step": 5}
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    data = bytearray((tmp_path / "c.ckpt").read_bytes())
    data[40] ^= 1
    (tmp_path / "c.ckpt").write_bytes(bytes(data))
    from drforge.errors import ChecksumMismatch

    with pytest.raises(ChecksumMismatch):
        load_checkpoint(tmp_path / "c.ckpt")
