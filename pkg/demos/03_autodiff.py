"""
The numpy autodiff core
=======================

Builds a small convolutional model out of the tape-based tensor library,
checks its gradients against central finite differences and fits it to a
toy regression target with AdamW and a cosine learning rate.
"""

import numpy as np

from drforge import nn
from drforge.nn.gradcheck import f64

rng = np.random.default_rng(0)

# gradient check of conv -> group norm -> relu -> pool in double precision
x = f64((2, 3, 8, 8), rng)
w = f64((4, 3, 3, 3), rng, 0.3)
g, b = f64((4,), rng), f64((4,), rng)
target = rng.normal(size=(2, 4))


def loss():
    h = nn.relu(nn.group_norm(nn.conv2d(x, w, None, 1, 1), 2, g, b))
    return nn.mse_loss(nn.global_avgpool(h), target)


print("max relative gradient error", nn.grad_check(loss, [x, w, g, b], h=1e-5, skip_kinks=True))

# fit y = sin(3x) with a two-layer MLP
mlp = nn.MLP([1, 32, 1], rng)
xs = np.linspace(-1, 1, 64, dtype=np.float32)[:, None]
ys = np.sin(3 * xs)
cfg = nn.OptimizerConfig(total_steps=400, lr_init=1e-2, lr_min=1e-4, weight_decay=0.0)
opt = nn.AdamW(mlp.parameters(), cfg)
for t in range(cfg.total_steps):
    for p in mlp.parameters().values():
        p.grad = None
    L = nn.mse_loss(mlp(nn.Tensor(xs)), ys)
    L.backward()
    opt.step(nn.cosine_lr(t, cfg))
    if t % 100 == 0:
        print(f"step {t:3d} lr {nn.cosine_lr(t, cfg):.2e} loss {L.item():.4f}")
print("final loss", L.item())
