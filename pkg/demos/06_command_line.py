"""
The command-line workflow
=========================

Drives the ``drforge`` commands in-process: preview a scene, generate data,
train briefly, and evaluate on the pseudo-real domain.  The same calls work
from a shell as ``drforge render ...`` and so on.
"""

from pathlib import Path

from drforge.cli import main

out = Path("demo_out/cli")
cfg = out / "run.cfg"
out.mkdir(parents=True, exist_ok=True)
cfg.write_text(
    "[run]\nresolution = mini\n\n[dr]\npreset = full\n\n"
    "[model]\nwidths = 8, 16, 32, 32\nfeature_dim = 32\nhidden = 32, 32\n\n"
    "[optimizer]\nbatch_size = 8\n\n[train]\nlog_interval = 5\n"
)

steps = [
    ["render", "--task", "stacking", "--seed", "1", "--config", cfg, "--out", out / "preview"],
    ["gen-data", "--task", "stacking", "--n", "2", "--seed", "1", "--config", cfg, "--out", out / "data"],
    ["train", "--mode", "policy", "--task", "stacking", "--data", out / "data", "--config", cfg,
     "--steps", "10", "--out", out / "run", "--quiet"],
    ["eval", "--checkpoint", out / "run" / "checkpoint.ckpt", "--task", "stacking",
     "--domain", "pseudo-real", "--episodes", "1", "--out", out / "eval"],
]
for args in steps:
    args = [str(a) for a in args]
    print("$ drforge", " ".join(args))
    code = main(args)
    print("exit", code)
