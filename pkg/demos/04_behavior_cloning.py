"""
Behavior cloning a visuomotor policy
====================================

Records a handful of stacking demonstrations, trains the two-view,
three-frame policy with the combined MSE + BCE loss, and runs a short
closed-loop rollout.  The budget here is tiny, so expect the rollout to
fail; the point is the pipeline, not the success rate.
"""

from pathlib import Path

from drforge import nn
from drforge.dataset import generate_demos
from drforge.domainrand import DRConfig, ImgAugConfig
from drforge.evalsearch import eval_policy
from drforge.policy import PolicyConfig, PolicyNet, describe, load_model, train_policy

root = Path("demo_out/bc")
res = (64, 48)
generate_demos("stacking", 4, DRConfig.full(), 0, root / "data", resolution=res)

cfg = PolicyConfig(resolution=res, widths=(8, 16, 32, 32), feature_dim=64, hidden=(64, 64))
print(describe(PolicyNet(cfg)))

opt = nn.OptimizerConfig(total_steps=60, batch_size=16)
result = train_policy(root / "data", cfg, opt, seed=0, out=root / "run", aug=ImgAugConfig(), log_interval=10)
for step, lr, L, mse, bce in result.metrics:
    print(f"step {step:3d} lr {lr:.2e} L {L:.4f} (mse {mse:.4f}, bce {bce:.4f})")

model, meta = load_model(result.checkpoint)
print("checkpoint step", meta["step"])
ev = eval_policy(model, "stacking", n_episodes=2)
print("success", ev.successes, "/", ev.n, "wilson 95%", [round(x, 3) for x in ev.interval])
