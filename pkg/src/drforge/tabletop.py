"""The tabletop scene: appearance of the fixed surroundings plus per-state geometry.

A :class:`TabletopScene` carries everything that domain randomization may
touch (surface materials, object colors, lights, the two cameras).  Object
and gripper poses come from a :class:`~drforge.world.WorldState` at render
time, so one randomized scene is reused for every step of an episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .render import Drawable, Material, Mesh, RenderScene, make_primitive, render
from .scene import CameraSpec, LightSpec, Pose

TABLE_Z = 0.0
WORKSPACE_CENTER = (0.0, 0.0, 0.10)
CAMERA_DISTANCE = 0.9
CAMERA_ELEVATION = math.radians(30.0)
CAMERA_FOV = 36.0
# front camera faces the robot from +x, the left one from +y
CAMERA_AZIMUTHS = {"front": 0.0, "left": math.pi / 2}

RESOLUTIONS = {"paper": (240, 180), "desk": (120, 90), "mini": (64, 48)}

NOMINAL_SURFACES = {
    "table": (0.62, 0.55, 0.47),
    "wall": (0.82, 0.82, 0.80),
    "floor": (0.36, 0.36, 0.40),
    "gripper": (0.22, 0.22, 0.25),
}
SURFACE_UV_SCALE = {"table": 2.5, "wall": 1.0, "floor": 1.0, "gripper": 10.0}
RANDOMIZABLE_SURFACES = tuple(NOMINAL_SURFACES)

# gripper geometry (m); the pose is the fingertip center
FINGER_SIZE = (0.012, 0.02, 0.05)
FINGER_OPEN_GAP = 0.08
WRIST_SIZE = (0.04, 0.11, 0.04)
BROOM_SIZE = (0.07, 0.07, 0.015)


def nominal_light() -> LightSpec:
    # midpoint of the light sampling sphere portion
    d, az, polar = 2.0, math.pi / 4, math.pi / 4
    c = np.array(WORKSPACE_CENTER)
    pos = c + d * np.array([math.sin(polar) * math.cos(az), math.sin(polar) * math.sin(az), math.cos(polar)])
    return LightSpec(pos, 0.3, 0.3, 0.3)


def nominal_camera(view: str, width: int = 120, height: int = 90) -> CameraSpec:
    az = CAMERA_AZIMUTHS[view]
    c = np.array(WORKSPACE_CENTER)
    offset = CAMERA_DISTANCE * np.array(
        [math.cos(CAMERA_ELEVATION) * math.cos(az), math.cos(CAMERA_ELEVATION) * math.sin(az), math.sin(CAMERA_ELEVATION)]
    )
    return CameraSpec(position=c + offset, target=c, fov_deg=CAMERA_FOV, width=width, height=height)


@dataclass(frozen=True)
class TabletopScene:
    surfaces: dict  # tag -> Material
    object_colors: dict  # object id -> rgb tuple
    lights: tuple
    cameras: tuple  # (front, left)

    def with_resolution(self, width: int, height: int) -> "TabletopScene":
        return replace(self, cameras=tuple(c.with_resolution(width, height) for c in self.cameras))


def nominal_scene(object_colors: dict | None = None, resolution=(120, 90)) -> TabletopScene:
    w, h = resolution
    surfaces = {tag: Material(color=c, uv_scale=SURFACE_UV_SCALE[tag]) for tag, c in NOMINAL_SURFACES.items()}
    return TabletopScene(
        surfaces=surfaces,
        object_colors=dict(object_colors or {}),
        lights=(nominal_light(),),
        cameras=(nominal_camera("front", w, h), nominal_camera("left", w, h)),
    )


def scene_for_state(state, resolution=(120, 90)) -> TabletopScene:
    """Nominal scene whose object colors come from the state's objects."""
    return nominal_scene({o.id: o.color for o in state.objects}, resolution)


@lru_cache(maxsize=None)
def _static_meshes():
    return {
        "table": make_primitive("plane", (1.4, 1.4)),
        "floor": make_primitive("plane", (8.0, 8.0)),
        "wall": make_primitive("plane", (8.0, 3.0)),
        "finger": make_primitive("finger", FINGER_SIZE),
        "wrist": make_primitive("box", WRIST_SIZE),
        "broom": make_primitive("broom", BROOM_SIZE),
        "particle": make_primitive("cube", 0.015),
    }


@lru_cache(maxsize=256)
def _object_mesh(kind: str, dims: tuple):
    if kind == "cube":
        return make_primitive("cube", dims[0])
    if kind == "marker":
        return make_primitive("marker", dims[:2])
    if kind == "nut":
        return make_primitive("nut", dims)
    return make_primitive("box", dims)


def _static_drawables(scene: TabletopScene):
    meshes = _static_meshes()
    s = scene.surfaces
    out = [
        Drawable(meshes["floor"], s["floor"], Pose((0.0, 0.0, -0.75)), "floor"),
        Drawable(meshes["table"], s["table"], Pose((0.0, 0.0, TABLE_Z)), "table"),
    ]
    # two upright walls behind the table, one seen by each camera
    out.append(Drawable(_upright_wall("x"), s["wall"], Pose((-1.2, 0.0, 0.0)), "wall"))
    out.append(Drawable(_upright_wall("y"), s["wall"], Pose((0.0, -1.2, 0.0)), "wall"))
    return out


@lru_cache(maxsize=4)
def _upright_wall(facing: str) -> Mesh:
    mesh = _static_meshes()["wall"]
    v = mesh.vertices
    if facing == "x":  # plane x = 0 facing +x, spanning y and z
        verts = np.stack([np.zeros(len(v)), v[:, 0], v[:, 1] + 0.75], axis=1)
        normals = np.tile([1.0, 0.0, 0.0], (len(v), 1))
    else:  # plane y = 0 facing +y, spanning x and z
        verts = np.stack([v[:, 0], np.zeros(len(v)), v[:, 1] + 0.75], axis=1)
        normals = np.tile([0.0, 1.0, 0.0], (len(v), 1))
    return Mesh(verts, normals, mesh.uvs.copy(), mesh.faces.copy(), closed=False)


def _gripper_drawables(state, scene: TabletopScene, broom: bool):
    meshes = _static_meshes()
    g = state.gripper
    mat = scene.surfaces["gripper"]
    gap = FINGER_OPEN_GAP * g.openness
    attached = state.attached_object()
    if attached is not None:
        gap = max(gap, attached.grip_width)
    fx, fy, fz = FINGER_SIZE
    out = []
    for side in (-1.0, 1.0):
        local = np.array([0.0, side * (gap / 2 + fy / 2), fz / 2])
        out.append(Drawable(meshes["finger"], mat, Pose(g.pose.transform_point(local), g.pose.yaw), "gripper"))
    wrist_local = np.array([0.0, 0.0, fz + WRIST_SIZE[2] / 2])
    out.append(Drawable(meshes["wrist"], mat, Pose(g.pose.transform_point(wrist_local), g.pose.yaw), "gripper"))
    if broom:
        local = np.array([0.0, 0.0, -BROOM_SIZE[2] / 2])
        out.append(Drawable(meshes["broom"], Material(color=(0.55, 0.35, 0.2)), Pose(g.pose.transform_point(local), g.pose.yaw), "broom"))
    return out


def build_render_scene(state, scene: TabletopScene, broom: bool = False) -> RenderScene:
    drawables = _static_drawables(scene)
    for obj in state.objects:
        color = scene.object_colors.get(obj.id, obj.color)
        drawables.append(Drawable(_object_mesh(obj.kind, tuple(obj.dims)), Material(color=color), obj.pose, obj.id))
    if len(state.particles):
        pm = _static_meshes()["particle"]
        color = scene.object_colors.get("particles", (0.95, 0.6, 0.1))
        mat = Material(color=color)
        for p in state.particles:
            drawables.append(Drawable(pm, mat, Pose(p), "particles"))
    drawables.extend(_gripper_drawables(state, scene, broom))
    return RenderScene(tuple(drawables), tuple(scene.lights))


def render_views(state, scene: TabletopScene, broom: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Render (front, left) uint8 frames of ``state``."""
    rs = build_render_scene(state, scene, broom)
    return tuple(render(rs, cam) for cam in scene.cameras)
