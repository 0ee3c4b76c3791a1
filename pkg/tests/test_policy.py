import math

import numpy as np
import pytest

from drforge import nn
from drforge.dataset import EpisodeDataset, ProxyDataset, generate_demos, generate_proxy
from drforge.domainrand import DRConfig, ImgAugConfig
from drforge.errors import ConfigError, ShapeMismatch
from drforge.nn import grad_check
from drforge.policy import (
    LossConfig,
    PolicyConfig,
    PolicyNet,
    ProxyConfig,
    ProxyNet,
    augment_batch,
    bc_loss,
    load_model,
    policy_forward,
    policy_inputs,
    preset_steps,
    proxy_forward,
    proxy_inputs,
    train_policy,
    train_proxy,
)
from drforge.world import task_spec

TINY = dict(resolution=(40, 32), widths=(8, 8, 16, 16), feature_dim=16, hidden=(16, 16))


def _frames(rng, b, w, h, t=3):
    return rng.integers(0, 256, (b, 2, t, h, w, 3), dtype=np.uint8)


def test_output_arity_and_feature_dim():
    cfg = PolicyConfig()
    assert cfg.head_in == 512 + 512 + 15 == 1039
    model = PolicyNet(cfg, seed=0)
    rng = np.random.default_rng(0)
    fr = _frames(rng, 2, 120, 90)
    pr = rng.normal(size=(2, 15)).astype(np.float32)
    feats = model.features(*policy_inputs(cfg, fr, pr))
    assert feats.shape == (2, 1039)
    v, w, g = policy_forward(model, fr, pr)
    assert v.shape == (2, 3) and w.shape == (2, 3) and g.shape == (2,)
    assert np.all((g > 0) & (g < 1))
    v2, w2, g2 = policy_forward(model, fr, pr)
    assert np.array_equal(v, v2) and np.array_equal(g, g2)


def test_degenerate_resolution_rejected():
    with pytest.raises(ConfigError):
        PolicyNet(PolicyConfig(resolution=(24, 16)))


def test_baseline_head_width():
    assert PolicyConfig(n_views=1, n_frames=1, use_proprio=False).head_in == 512
    with pytest.raises(ConfigError):
        PolicyConfig(n_frames=2)
    with pytest.raises(ConfigError):
        PolicyConfig(encoder="vgg")


def test_shape_mismatch_on_resolution():
    model = PolicyNet(PolicyConfig(**TINY))
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatch):
        policy_forward(model, _frames(rng, 1, 48, 32), np.zeros((1, 15)))
    with pytest.raises(ShapeMismatch):
        proxy_inputs(ProxyConfig(**TINY), _frames(rng, 1, 40, 36, t=1))


def test_bc_loss_hand_computed():
    pred = np.zeros((1, 7))
    pred[0, 0] = 1.0  # velocity error (1, 0, 0, 0, 0, 0); logit 0 -> prob 0.5
    expert = np.zeros((1, 7))
    expert[0, 6] = 1.0
    L, mse, bce = bc_loss(nn.Tensor(pred), expert)
    assert L.item() == pytest.approx(0.8 * (1 / 6) + 0.2 * math.log(2), abs=1e-12)
    assert mse.item() == pytest.approx(1 / 6)
    assert bce.item() == pytest.approx(math.log(2))


def test_bc_loss_identity_and_perfect():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(8, 7))
    expert = rng.normal(size=(8, 7))
    expert[:, 6] = rng.integers(0, 2, 8)
    for lam in (0.0, 0.3, 0.8, 1.0):
        L, mse, bce = bc_loss(nn.Tensor(pred), expert, LossConfig(lam))
        assert L.item() >= 0
        assert L.item() == pytest.approx(lam * mse.item() + (1 - lam) * bce.item(), abs=1e-12)
    perfect = expert.copy()
    perfect[:, 6] = np.where(expert[:, 6] > 0.5, 30.0, -30.0)
    L, _, _ = bc_loss(nn.Tensor(perfect), expert)
    assert L.item() < 1e-7  # floor set by the 1e-7 probability clamp
    with pytest.raises(ConfigError):
        LossConfig(1.2)


def test_full_policy_loss_gradcheck():
    cfg = PolicyConfig(**TINY)
    model = PolicyNet(cfg, seed=3).astype(np.float64)
    rng = np.random.default_rng(4)
    xf, xl, pr = policy_inputs(cfg, _frames(rng, 2, 40, 32), rng.normal(size=(2, 15)), dtype=np.float64)
    expert = rng.normal(0, 0.1, (2, 7))
    expert[:, 6] = [0.0, 1.0]
    params = list(model.parameters().values())
    st = {}
    err = grad_check(lambda: bc_loss(model(xf, xl, pr), expert)[0], params, n_samples=100, rng=np.random.default_rng(5), skip_kinks=True, stats=st)
    assert err <= 1e-3
    assert st["checked"] == 100 and st["kinks"] <= 25


def test_proxy_loss_gradcheck():
    cfg = ProxyConfig(**TINY)
    model = ProxyNet(cfg, seed=1).astype(np.float64)
    rng = np.random.default_rng(6)
    xf, xl = proxy_inputs(cfg, _frames(rng, 2, 40, 32, t=1), dtype=np.float64)
    target = rng.normal(0, 0.1, (2, 9))
    st = {}
    err = grad_check(lambda: nn.mse_loss(model(xf, xl), target), list(model.parameters().values()), n_samples=100, skip_kinks=True, stats=st)
    assert err <= 1e-3
    assert st["checked"] == 100 and st["kinks"] <= 25


def test_view_swap_changes_output():
    cfg = PolicyConfig(**TINY)
    model = PolicyNet(cfg, seed=0)
    rng = np.random.default_rng(2)
    fr = _frames(rng, 3, 40, 32)
    pr = rng.normal(size=(3, 15)).astype(np.float32)
    a = policy_forward(model, fr, pr)
    b = policy_forward(model, fr[:, ::-1], pr)
    assert not np.allclose(a[0], b[0])
    pm = ProxyNet(ProxyConfig(**TINY))
    p1 = proxy_forward(pm, fr[:, :, :1])
    p2 = proxy_forward(pm, fr[:, ::-1, :1])
    assert p1.shape == (3, 9) and not np.allclose(p1, p2)


def test_encoders_do_not_share_weights():
    model = PolicyNet(PolicyConfig(**TINY))
    assert not np.array_equal(model.enc_front.stem.weight.data, model.enc_left.stem.weight.data)


def test_reference_encoder_shapes():
    cfg = PolicyConfig(encoder="reference", resolution=(32, 24))
    model = PolicyNet(cfg)
    rng = np.random.default_rng(0)
    v, w, g = policy_forward(model, _frames(rng, 1, 32, 24), np.zeros((1, 15), np.float32))
    assert v.shape == (1, 3)
    names = model.enc_front.parameters()
    convs = [k for k in names if k == "stem.weight" or k.endswith(("conv1.weight", "conv2.weight"))]
    assert len(convs) == 17  # plus the policy head's first layer makes 18


def test_presets():
    assert preset_steps("stacking", "full") == 400_000
    assert preset_steps("sweeping", "full") == 1_000_000
    assert preset_steps("proxy") == 20_000
    assert preset_steps("assembling") == 50_000


def test_augment_shared_across_frames():
    rng = np.random.default_rng(0)
    f = np.repeat(_frames(rng, 2, 40, 32, t=1), 3, axis=2)
    out = augment_batch(f, ImgAugConfig(), np.random.default_rng(1))
    assert np.array_equal(out[:, :, 0], out[:, :, 1]) and np.array_equal(out[:, :, 1], out[:, :, 2])
    assert not np.array_equal(out[:, 0], out[:, 1])
    assert augment_batch(f, None, rng) is f


@pytest.fixture(scope="module")
def tiny_demos(tmp_path_factory):
    root = tmp_path_factory.mktemp("demos")
    generate_demos(task_spec("stacking"), 2, DRConfig.off(), 3, root, resolution=(40, 32))
    return root


def test_policy_loss_decreases_and_resumes(tiny_demos, tmp_path):
    ds = EpisodeDataset(tiny_demos)
    ds.index = ds.index[:16]  # fixed tiny dataset: one batch
    cfg = PolicyConfig(**TINY)
    opt = nn.OptimizerConfig(total_steps=100, batch_size=16, lr_init=3e-4)
    res = train_policy(ds, cfg, opt, seed=0, out=tmp_path / "a", log_interval=1, ckpt_interval=50)
    losses = [m[2] for m in res.metrics]
    assert len(losses) == 100
    assert all(b < a for a, b in zip(losses, losses[1:]))  # strictly decreasing
    assert losses[-1] < 0.2 * losses[0]
    lines = (tmp_path / "a" / "metrics.log").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 100 and len(lines[0].split(",")) == 5

    # a run interrupted after its step-50 checkpoint resumes to the same weights
    assert train_policy_until(ds, cfg, 50, tmp_path / "d") == 50
    resumed = train_policy(ds, cfg, opt, seed=0, out=tmp_path / "d", log_interval=1, ckpt_interval=50, resume=True)
    for k, v in res.model.state_dict().items():
        np.testing.assert_allclose(resumed.model.state_dict()[k], v, rtol=1e-5, atol=1e-6)
    assert len((tmp_path / "d" / "metrics.log").read_text().splitlines()) == 100

    model, meta = load_model(tmp_path / "a" / "checkpoint.ckpt")
    assert meta["kind"] == "policy" and meta["step"] == 100
    for k, v in res.model.state_dict().items():
        assert np.array_equal(model.state_dict()[k], v)


def train_policy_until(ds, cfg, stop, out):
    """Run the 100-step schedule but stop after ``stop`` steps, as a crash would."""
    from drforge import policy

    class Stop(Exception):
        pass

    orig = policy._save
    calls = {"n": 0}

    def save(path, model, opt, meta):
        orig(path, model, opt, meta)
        if meta["step"] >= stop:
            calls["n"] = meta["step"]
            raise Stop

    policy._save = save
    try:
        train_policy(ds, cfg, nn.OptimizerConfig(total_steps=100, batch_size=16, lr_init=3e-4), seed=0, out=out, log_interval=1, ckpt_interval=50)
    except Stop:
        pass
    finally:
        policy._save = orig
    return calls["n"]


def test_training_is_deterministic(tiny_demos):
    ds = EpisodeDataset(tiny_demos)
    cfg = PolicyConfig(**TINY)
    opt = nn.OptimizerConfig(total_steps=5, batch_size=4)
    a = train_policy(ds, cfg, opt, seed=1, aug=ImgAugConfig())
    b = train_policy(ds, cfg, opt, seed=1, aug=ImgAugConfig())
    for k, v in a.model.state_dict().items():
        assert np.array_equal(b.model.state_dict()[k], v)


def test_constant_images_converge_to_mean_offsets(tmp_path):
    generate_proxy(24, DRConfig.off(), 11, tmp_path, resolution=(40, 32))
    ds = ProxyDataset(tmp_path)
    ds.records = ds.records.copy()
    ds.records["front"] = 128
    ds.records["left"] = 128
    mean = ds.records["target"].astype(np.float64).mean(axis=0)
    cfg = ProxyConfig(**TINY)
    opt = nn.OptimizerConfig(total_steps=300, batch_size=24, lr_init=3e-3, lr_min=1e-5)
    res = train_proxy(ds, cfg, opt, seed=0)
    pred = proxy_forward(res.model, ds.batch([0])[0])[0]
    spread = np.abs(ds.records["target"] - mean).mean()
    assert np.abs(pred - mean).max() < 0.1 * spread
