"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class OptimizerConfig:
    lr_init: float = 3e-4
    lr_min: float = 1e-6
    total_steps: int = 1000
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 32

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_init:
            raise ConfigError("need 0 <= lr_min <= lr_init")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        object.__setattr__(self, "betas", (float(b1), float(b2)))


def cosine_lr(t: int, cfg: OptimizerConfig) -> float:
    T = cfg.total_steps
    if t <= 0:
        return cfg.lr_init
    if t >= T:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * t / T))


class AdamW:
    def __init__(self, params: dict, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float):
        self.t += 1
        adamw_update(self.params, self.m, self.v, self.t, self.cfg, lr)

    def state_dict(self) -> dict:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict, t: int):
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(state[f"v.{k}"], dtype=self.v[k].dtype)
        self.t = t


def adamw_update(params: dict, m: dict, v: dict, t: int, cfg: OptimizerConfig, lr: float):
    """One in-place step: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m[k] *= b1
        m[k] += (1.0 - b1) * g
        v[k] *= b2
        v[k] += (1.0 - b2) * g * g
        mhat = m[k] / c1
        vhat = v[k] / c2
        p.data -= (lr * (mhat / (np.sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data)).astype(p.dtype)
