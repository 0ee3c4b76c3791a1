"""Visuomotor policy, cube-localization proxy network, BC objective and training loops."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dataset import EpisodeDataset, ProxyDataset, frames_to_input
from .domainrand import ImgAugConfig, apply_augmentation, sample_aug_params
from .errors import ConfigError, ShapeMismatch
from .nn import tensor as T
from .nn.layers import MLP, Conv2d, GroupNorm, Linear, Module, ResidualBlock
from .scene import RngStream

PROPRIO_DIM = 15
ACTION_DIM = 7
PROXY_DIM = 9

# gradient steps at full scale; desk presets divide by DESK_STEP_DIVISOR
STEP_PRESETS = {
    "proxy": 400_000,
    "stacking": 400_000,
    "pushing": 400_000,
    "pushing_to_pick": 400_000,
    "assembling": 1_000_000,
    "sweeping": 1_000_000,
}
DESK_STEP_DIVISOR = 20


def preset_steps(name: str, scale: str = "desk") -> int:
    steps = STEP_PRESETS[name]
    return steps // DESK_STEP_DIVISOR if scale == "desk" else steps


# ----------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class PolicyConfig:
    encoder: str = "desk"  # desk | reference
    feature_dim: int = 512
    hidden: tuple = (512, 512)
    n_views: int = 2
    n_frames: int = 3
    use_proprio: bool = True
    resolution: tuple = (120, 90)
    widths: tuple = (16, 32, 64, 128)

    def __post_init__(self):
        if self.encoder not in ("desk", "reference"):
            raise ConfigError(f"unknown encoder preset {self.encoder!r}")
        if self.n_views not in (1, 2) or self.n_frames not in (1, 3):
            raise ConfigError("n_views must be 1 or 2 and n_frames 1 or 3")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "widths", tuple(int(r) for r in self.widths))

    @property
    def head_in(self) -> int:
        return self.feature_dim * self.n_views + (PROPRIO_DIM if self.use_proprio else 0)


@dataclass(frozen=True)
class ProxyConfig:
    encoder: str = "desk"
    feature_dim: int = 512
    hidden: tuple = (512, 512)
    resolution: tuple = (120, 90)
    widths: tuple = (16, 32, 64, 128)
    base_frame: bool = True  # offsets in robot-base axes (not gripper-rotated)

    def __post_init__(self):
        if self.encoder not in ("desk", "reference"):
            raise ConfigError(f"unknown encoder preset {self.encoder!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "widths", tuple(int(r) for r in self.widths))


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")


# ----------------------------------------------------------------------------
# networks


class Encoder(Module):
    """Residual image encoder producing a ``feature_dim`` vector.

    ``desk``: stride-2 stem and four stride-2 residual blocks; the final
    feature map is flattened (keeping spatial layout) and projected.
    ``reference``: 18-layer residual network with global average pooling.
    """

    def __init__(self, in_ch: int, preset: str, resolution, rng, feature_dim=512, widths=(16, 32, 64, 128)):
        w, h = resolution
        self._preset = preset
        if preset == "desk":
            self.stem = Conv2d(in_ch, widths[0], 3, rng, stride=2)
            self.stem_norm = GroupNorm(widths[0])
            chans = [widths[0]] + list(widths)
            self.blocks = [ResidualBlock(a, b, 2, rng) for a, b in zip(chans[:-1], chans[1:])]
            fh, fw = _down(h, 1 + len(widths)), _down(w, 1 + len(widths))
            if fh * fw < 2:
                # a 1x1 map normalizes to exactly zero and kills every gradient
                raise ConfigError(f"resolution {w}x{h} is too small for the desk encoder")
            self.proj = Linear(widths[-1] * fh * fw, feature_dim, rng)
        else:
            self.stem = Conv2d(in_ch, 64, 7, rng, stride=2, padding=3)
            self.stem_norm = GroupNorm(64)
            blocks, c = [], 64
            for i, width in enumerate((64, 128, 256, 512)):
                blocks.append(ResidualBlock(c, width, 1 if i == 0 else 2, rng))
                blocks.append(ResidualBlock(width, width, 1, rng))
                c = width
            self.blocks = blocks
            self.proj = Linear(512, feature_dim, rng) if feature_dim != 512 else None

    def forward(self, x):
        h = T.relu(self.stem_norm(self.stem(x)))
        if self._preset == "reference":
            h = T.avgpool2d(h, 2)
        for b in self.blocks:
            h = b(h)
        if self._preset == "desk":
            return T.relu(self.proj(T.flatten(h)))
        h = T.global_avgpool(h)
        return h if self.proj is None else T.relu(self.proj(h))


def _down(n: int, times: int) -> int:
    for _ in range(times):
        n = (n + 1) // 2
    return n


class PolicyNet(Module):
    def __init__(self, cfg: PolicyConfig, seed: int = 0):
        self._cfg = cfg
        root = RngStream(seed, 0)
        in_ch = 3 * cfg.n_frames
        self.enc_front = Encoder(in_ch, cfg.encoder, cfg.resolution, root.child("enc_front").generator(), cfg.feature_dim, cfg.widths)
        if cfg.n_views == 2:
            self.enc_left = Encoder(in_ch, cfg.encoder, cfg.resolution, root.child("enc_left").generator(), cfg.feature_dim, cfg.widths)
        self.head = MLP([cfg.head_in, *cfg.hidden, ACTION_DIM], root.child("head").generator())

    @property
    def cfg(self) -> PolicyConfig:
        return self._cfg

    def features(self, x_front, x_left, proprio):
        feats = [self.enc_front(x_front)]
        if self._cfg.n_views == 2:
            feats.append(self.enc_left(x_left))
        if self._cfg.use_proprio:
            feats.append(proprio if isinstance(proprio, nn.Tensor) else nn.Tensor(np.asarray(proprio, dtype=x_front.dtype)))
        return T.concat(feats, axis=1)

    def forward(self, x_front, x_left, proprio):
        """Raw 7-d output: v (3), omega (3), gripper logit."""
        return self.head(self.features(x_front, x_left, proprio))


class ProxyNet(Module):
    def __init__(self, cfg: ProxyConfig, seed: int = 0):
        self._cfg = cfg
        root = RngStream(seed, 1)
        self.enc_front = Encoder(3, cfg.encoder, cfg.resolution, root.child("enc_front").generator(), cfg.feature_dim, cfg.widths)
        self.enc_left = Encoder(3, cfg.encoder, cfg.resolution, root.child("enc_left").generator(), cfg.feature_dim, cfg.widths)
        self.head = MLP([2 * cfg.feature_dim, *cfg.hidden, PROXY_DIM], root.child("head").generator())

    @property
    def cfg(self) -> ProxyConfig:
        return self._cfg

    def forward(self, x_front, x_left):
        return self.head(T.concat([self.enc_front(x_front), self.enc_left(x_left)], axis=1))


# ----------------------------------------------------------------------------
# input plumbing


def policy_inputs(cfg: PolicyConfig, frames: np.ndarray, proprio: np.ndarray, dtype=np.float32):
    """(B, 2, 3, H, W, 3) uint8 frames + (B, 15) proprio -> network tensors."""
    if frames.ndim != 6 or frames.shape[1] != 2 or frames.shape[2] != 3:
        raise ShapeMismatch(f"expected frames (B, 2, 3, H, W, 3), got {frames.shape}")
    w, h = cfg.resolution
    if frames.shape[3:5] != (h, w):
        raise ShapeMismatch(f"frames are {frames.shape[4]}x{frames.shape[3]}, model expects {w}x{h}")
    if cfg.n_frames == 1:
        frames = frames[:, :, -1:]
    x = frames_to_input(frames).astype(dtype, copy=False)
    p = np.asarray(proprio, dtype=dtype).reshape(-1, PROPRIO_DIM)
    return nn.Tensor(np.ascontiguousarray(x[:, 0])), nn.Tensor(np.ascontiguousarray(x[:, 1])), nn.Tensor(p)


def proxy_inputs(cfg: ProxyConfig, frames: np.ndarray, dtype=np.float32):
    """(B, 2, 1, H, W, 3) or (B, 2, H, W, 3) uint8 frames -> two tensors."""
    if frames.ndim == 5:
        frames = frames[:, :, None]
    w, h = cfg.resolution
    if frames.ndim != 6 or frames.shape[1] != 2 or frames.shape[3:5] != (h, w):
        raise ShapeMismatch(f"expected frames (B, 2, 1, {h}, {w}, 3), got {frames.shape}")
    x = frames_to_input(frames).astype(dtype, copy=False)
    return nn.Tensor(np.ascontiguousarray(x[:, 0])), nn.Tensor(np.ascontiguousarray(x[:, 1]))


def policy_forward(model: PolicyNet, frames, proprio):
    """Returns (v_hat (B,3), omega_hat (B,3), g_prob (B,)) as numpy arrays."""
    with nn.no_grad():
        out = model(*policy_inputs(model.cfg, frames, proprio)).data
    prob = 0.5 * (1.0 + np.tanh(0.5 * out[:, 6]))
    return out[:, 0:3], out[:, 3:6], prob


def proxy_forward(model: ProxyNet, frames) -> np.ndarray:
    with nn.no_grad():
        return model(*proxy_inputs(model.cfg, frames)).data


def bc_loss(pred: nn.Tensor, expert: np.ndarray, cfg: LossConfig = LossConfig()):
    """L = lam * MSE(6 velocity components) + (1 - lam) * BCE(gripper); returns (L, L_MSE, L_BCE)."""
    expert = np.asarray(expert, dtype=pred.dtype)
    if pred.shape[-1] != ACTION_DIM or expert.shape != pred.shape:
        raise ShapeMismatch(f"bc_loss: prediction {pred.shape} vs expert {expert.shape}")
    l_mse = T.mse_loss(pred[:, 0:6], expert[:, 0:6])
    l_bce = T.bce_loss(T.sigmoid(pred[:, 6:7]), expert[:, 6:7])
    lam = nn.Tensor(np.asarray(cfg.lam, dtype=pred.dtype))
    rest = nn.Tensor(np.asarray(1.0 - cfg.lam, dtype=pred.dtype))
    total = T.add(T.mul(l_mse, lam), T.mul(l_bce, rest))
    return total, l_mse, l_bce


# ----------------------------------------------------------------------------
# augmentation


def augment_batch(frames: np.ndarray, cfg: ImgAugConfig | None, rng: np.random.Generator) -> np.ndarray:
    """Per (sample, view) augmentation shared by all stacked frames of that view."""
    if cfg is None:
        return frames
    out = np.empty_like(frames)
    B, V, Tn = frames.shape[:3]
    for b in range(B):
        for v in range(V):
            p = sample_aug_params(cfg, rng)
            for t in range(Tn):
                out[b, v, t] = apply_augmentation(frames[b, v, t], p)
    return out


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: Module
    metrics: list = field(default_factory=list)  # (step, lr, L, L_MSE, L_BCE)
    checkpoint: Path | None = None
    seconds: float = 0.0


def _batch_rows(n: int, batch: int, step: int, seed: int) -> np.ndarray:
    """Seeded epoch-permutation sampler; depends only on (seed, step)."""
    per_epoch = max(1, n // batch) if n >= batch else 1
    epoch, k = divmod(step, per_epoch)
    perm = RngStream(seed, 2).child(("epoch", epoch)).generator().permutation(n)
    if n < batch:
        return np.resize(perm, batch)
    return perm[k * batch : (k + 1) * batch]


def _model_meta(kind: str, model, opt_cfg, loss_cfg, seed, step, aug):
    return {
        "kind": kind,
        "model": asdict(model.cfg),
        "optimizer": asdict(opt_cfg),
        "loss": asdict(loss_cfg) if loss_cfg is not None else None,
        "seed": seed,
        "step": step,
        "img_aug": asdict(aug) if aug is not None else None,
    }


def _save(path, model, opt, meta):
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"opt.{k}": v for k, v in opt.state_dict().items()})
    nn.save_checkpoint(path, tensors, meta)


def load_model(path):
    """Rebuild a PolicyNet or ProxyNet from a checkpoint; returns (model, meta)."""
    tensors, meta = nn.load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "policy":
        cfg = PolicyConfig(**meta["model"])
        model = PolicyNet(cfg, meta.get("seed", 0))
    elif kind == "proxy":
        cfg = ProxyConfig(**meta["model"])
        model = ProxyNet(cfg, meta.get("seed", 0))
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param.")})
    return model, meta


def _train_loop(kind, model, sample_fn, loss_fn, opt_cfg, loss_cfg, seed, out, aug, log_interval, ckpt_interval, resume, verbose):
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.ckpt" if out is not None else None
    log = out / "metrics.log" if out is not None else None
    opt = nn.AdamW(model.parameters(), opt_cfg)
    start = 0
    metrics = []
    if resume and ckpt is not None and ckpt.exists():
        tensors, meta = nn.load_checkpoint(ckpt)
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param.")})
        opt.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("opt.")}, meta["step"])
        start = meta["step"]
        if log.exists():
            lines = [ln for ln in log.read_text(encoding="utf-8").splitlines() if ln.strip()]
            lines = [ln for ln in lines if int(ln.split(",")[0]) <= start]
            log.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
            metrics = [tuple(float(x) for x in ln.split(",")) for ln in lines]
    elif log is not None:
        log.write_text("", encoding="utf-8")
    t0 = time.time()
    for step in range(start, opt_cfg.total_steps):
        lr = nn.cosine_lr(step, opt_cfg)
        inputs, target = sample_fn(step)
        model.zero_grad()
        L, l_mse, l_bce = loss_fn(model, inputs, target)
        L.backward()
        opt.step(lr)
        done = step + 1
        if done % log_interval == 0:
            rec = (done, lr, float(L.data), float(l_mse.data), float(l_bce.data))
            metrics.append(rec)
            if log is not None:
                with open(log, "a", encoding="utf-8") as f:
                    f.write(f"{rec[0]}, {rec[1]:.6e}, {rec[2]:.6e}, {rec[3]:.6e}, {rec[4]:.6e}\n")
            if verbose:
                print(f"[{kind}] step {done}/{opt_cfg.total_steps} lr {lr:.2e} L {rec[2]:.5f} ({time.time() - t0:.0f}s)", flush=True)
        if ckpt is not None and (done % ckpt_interval == 0 or done == opt_cfg.total_steps):
            _save(ckpt, model, opt, _model_meta(kind, model, opt_cfg, loss_cfg, seed, done, aug))
    return TrainResult(model, metrics, ckpt, time.time() - t0)


def train_policy(
    data: EpisodeDataset | str | Path,
    cfg: PolicyConfig,
    opt_cfg: nn.OptimizerConfig,
    loss_cfg: LossConfig = LossConfig(),
    seed: int = 0,
    out=None,
    aug: ImgAugConfig | None = None,
    log_interval: int = 10,
    ckpt_interval: int = 1000,
    resume: bool = False,
    verbose: bool = False,
) -> TrainResult:
    ds = data if isinstance(data, EpisodeDataset) else EpisodeDataset(data)
    if tuple(ds.resolution) != tuple(cfg.resolution):
        raise ShapeMismatch(f"dataset resolution {ds.resolution} vs model {cfg.resolution}")
    model = PolicyNet(cfg, seed)
    n = len(ds)

    def sample(step):
        rows = _batch_rows(n, opt_cfg.batch_size, step, seed)
        frames, prop, act = ds.batch(rows)
        frames = augment_batch(frames, aug, RngStream(seed, 3).child(("aug", step)).generator())
        return policy_inputs(cfg, frames, prop), act

    def loss(model, inputs, target):
        return bc_loss(model(*inputs), target, loss_cfg)

    return _train_loop("policy", model, sample, loss, opt_cfg, loss_cfg, seed, out, aug, log_interval, ckpt_interval, resume, verbose)


def train_proxy(
    data: ProxyDataset | str | Path,
    cfg: ProxyConfig,
    opt_cfg: nn.OptimizerConfig,
    seed: int = 0,
    out=None,
    aug: ImgAugConfig | None = None,
    log_interval: int = 10,
    ckpt_interval: int = 1000,
    resume: bool = False,
    verbose: bool = False,
) -> TrainResult:
    ds = data if isinstance(data, ProxyDataset) else ProxyDataset(data)
    if tuple(ds.resolution) != tuple(cfg.resolution):
        raise ShapeMismatch(f"dataset resolution {ds.resolution} vs model {cfg.resolution}")
    model = ProxyNet(cfg, seed)
    n = len(ds)

    def sample(step):
        rows = _batch_rows(n, opt_cfg.batch_size, step, seed)
        frames, y = ds.batch(rows)
        frames = augment_batch(frames, aug, RngStream(seed, 3).child(("aug", step)).generator())
        return proxy_inputs(cfg, frames), y

    zero = nn.Tensor(np.zeros((), dtype=np.float32))

    def loss(model, inputs, target):
        l = T.mse_loss(model(*inputs), target)
        return l, l, zero

    return _train_loop("proxy", model, sample, loss, opt_cfg, None, seed, out, aug, log_interval, ckpt_interval, resume, verbose)


def describe(model: Module) -> str:
    return json.dumps({"params": model.n_params(), "config": asdict(model.cfg)}, sort_keys=True)
