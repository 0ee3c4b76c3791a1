"""
Rendering a tabletop scene and randomizing its appearance
=========================================================

Resets a stacking scene, renders both camera views with the software
rasterizer, then draws a few domain-randomized versions of the same state.
Images are written as PNG files to ``demo_out/render``.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from drforge.domainrand import DRConfig, randomize_scene
from drforge.scene import RngStream
from drforge.tabletop import render_views, scene_for_state
from drforge.world import reset, task_spec

out = Path("demo_out/render")
out.mkdir(parents=True, exist_ok=True)

# a reset draws cube poses, colors and the gripper start from one stream
task = task_spec("stacking")
state = reset(task, RngStream(0, 0).generator())
nominal = scene_for_state(state, resolution=(120, 90))
front, left = render_views(state, nominal)
print("front view", front.shape, front.dtype, "mean intensity", front.mean().round(1))

# the full randomization: asset textures, light, object HSV jitter, camera jitter
randomized = []
for k in range(4):
    scene = randomize_scene(nominal, DRConfig.full(), RngStream(0, 0).child(("demo", k)))
    randomized.append(render_views(state, scene)[0])

# nominal image on top, randomized variants below
row = np.concatenate(randomized, axis=1)
top = np.concatenate([front, left, np.zeros_like(front), np.zeros_like(front)], axis=1)
Image.fromarray(np.concatenate([top, row], axis=0)).save(out / "views.png")
print("wrote", out / "views.png")
