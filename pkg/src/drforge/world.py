"""Quasi-static tabletop world: tasks, a kinematic step function and scripted experts.

Objects move only when the gripper carries them or when a closed fingertip
(or the sweeping broom) penetrates their footprint; penetration is resolved
by translating the object horizontally.  Footprints are discs of the
inscribed radius for contact and of the circumscribed radius for clearance
and separation checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, OracleStuck, SamplingFailed
from .scene import Pose, array_eq, Workspace, clamp_to_workspace, normalize_yaw, yaw_matrix
from .tabletop import FINGER_OPEN_GAP, FINGER_SIZE, BROOM_SIZE, TABLE_Z

V_MAX = 0.25
OMEGA_MAX = 1.0
DT = 0.1
OPENNESS_RATE = 4.0
GRASP_TOLERANCE = 0.015
MIN_SEPARATION = 0.02
MAX_RESET_TRIES = 1000
STALL_LIMIT = 100

TASK_IDS = ("stacking", "pushing", "pushing_to_pick", "sweeping", "assembling")
RESERVED_TASK_IDS = ("box_retrieving", "rope_shaping")
OPEN_LOOP_TASKS = ("stacking", "pushing_to_pick", "assembling")

RED = (0.85, 0.12, 0.10)
GREEN = (0.12, 0.70, 0.18)
YELLOW = (0.92, 0.85, 0.12)
PINK = (0.95, 0.45, 0.72)
GREEN_MARKER = (0.20, 0.75, 0.30)
NUT_COLOR = (0.55, 0.55, 0.62)

# closed fingertip box, gripper frame: x is the heading, fingers close along y
TIP_HALF = (FINGER_SIZE[0] / 2, FINGER_SIZE[1], FINGER_SIZE[2])
BROOM_HALF = (BROOM_SIZE[0] / 2, BROOM_SIZE[1] / 2, BROOM_SIZE[2])
PARTICLE_SIDE = 0.015


@dataclass(frozen=True)
class Action:
    """End-effector command; clamps are applied on construction."""

    v: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).reshape(3).copy()
        n = float(np.linalg.norm(v))
        if n > V_MAX:
            v *= V_MAX / n
        w = np.clip(np.asarray(self.omega, dtype=np.float64).reshape(3), -OMEGA_MAX, OMEGA_MAX)
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "g", 1.0 if float(self.g) >= 0.5 else 0.0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega, [self.g]]).astype(np.float64)

    @classmethod
    def from_vector(cls, vec) -> "Action":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[0:3], vec[3:6], vec[6])


@dataclass(frozen=True)
class WorldObject:
    id: str
    kind: str  # cube | marker | peg | nut
    pose: Pose
    dims: tuple
    color: tuple
    graspable: bool = True
    fixed: bool = False

    @property
    def size(self) -> tuple:
        """(sx, sy, sz) of the bounding box."""
        if self.kind == "cube":
            s = self.dims[0]
            return (s, s, s)
        if self.kind == "marker":
            return (self.dims[0], self.dims[1], 0.002)
        if self.kind == "nut":
            return (self.dims[0], self.dims[0], self.dims[2])
        return tuple(self.dims)

    @property
    def half_height(self) -> float:
        return self.size[2] / 2

    @property
    def bottom(self) -> float:
        return float(self.pose.position[2]) - self.half_height

    @property
    def top(self) -> float:
        return float(self.pose.position[2]) + self.half_height

    @property
    def contact_radius(self) -> float:
        sx, sy, _ = self.size
        return min(sx, sy) / 2

    @property
    def clearance_radius(self) -> float:
        sx, sy, _ = self.size
        return math.hypot(sx, sy) / 2

    @property
    def grasp_local(self) -> np.ndarray:
        if self.kind == "nut":
            outer, hole, _ = self.dims
            return np.array([(outer + hole) / 4, 0.0, 0.0])
        return np.zeros(3)

    def grasp_point(self) -> np.ndarray:
        return self.pose.transform_point(self.grasp_local)

    @property
    def grip_width(self) -> float:
        if self.kind == "nut":
            return (self.dims[0] - self.dims[1]) / 2
        return self.size[1]

    def moved_to(self, position, yaw=None) -> "WorldObject":
        return replace(self, pose=Pose(position, self.pose.yaw if yaw is None else yaw))


@array_eq
@dataclass(frozen=True, eq=False)
class GripperState:
    pose: Pose
    openness: float = 1.0
    attached: str | None = None
    grasp_offset: tuple | None = None  # (local position (3,), yaw offset)
    tool: str = "fingers"  # fingers | broom
    command: float = 1.0  # last openness command


@array_eq
@dataclass(frozen=True, eq=False)
class WorldState:
    task_id: str
    gripper: GripperState
    objects: tuple
    particles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    time_step: int = 0

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=np.float64).reshape(-1, 3)
        p.flags.writeable = False
        object.__setattr__(self, "particles", p)

    def obj(self, obj_id: str) -> WorldObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def attached_object(self) -> WorldObject | None:
        if self.gripper.attached is None:
            return None
        return self.obj(self.gripper.attached)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    max_steps: int = 300
    dims: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    workspace: Workspace = field(default_factory=Workspace)

    def __post_init__(self):
        if self.task_id in RESERVED_TASK_IDS:
            raise ConfigError(f"task {self.task_id!r} is reserved: articulated/deformable bodies are not simulated")
        if self.task_id not in TASK_IDS:
            raise ConfigError(f"unknown task {self.task_id!r}; expected one of {TASK_IDS}")
        for k, v in self.dims.items():
            if np.any(np.asarray(v) <= 0):
                raise ConfigError(f"dimension {k} must be positive")
        for k, v in self.tolerances.items():
            if v <= 0:
                raise ConfigError(f"tolerance {k} must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


def task_spec(task_id: str, **overrides) -> TaskSpec:
    """Preset task definition with default tolerances."""
    presets = {
        "stacking": dict(dims={"cube": 0.05}, tolerances={"xy": 0.025, "z": 0.01}),
        "pushing": dict(dims={"cube": 0.04, "marker": 0.06}, tolerances={"xy": 0.03}),
        "pushing_to_pick": dict(dims={"cube": 0.05, "gap": 0.006}, tolerances={"lift": 0.08}),
        "sweeping": dict(dims={"particle": PARTICLE_SIDE, "marker": 0.16, "count": 14}, tolerances={"inside": 12}),
        "assembling": dict(
            dims={"peg": (0.035, 0.035, 0.105), "nut": (0.09, 0.045, 0.015)},
            tolerances={"xy": 0.01, "yaw": 0.15},
        ),
    }
    if task_id not in presets:
        TaskSpec(task_id)  # raises with the right message
    kw = dict(presets[task_id])
    kw.update(overrides)
    return TaskSpec(task_id, **kw)


# ----------------------------------------------------------------------------
# reset


def _gap(a_xy, ra, b_xy, rb) -> float:
    return float(np.hypot(*(np.asarray(a_xy) - np.asarray(b_xy)))) - ra - rb


def _uniform_xy(rng, ws: Workspace, margin: float) -> np.ndarray:
    lo, hi = ws.low[:2] + margin, ws.high[:2] - margin
    if np.any(lo > hi):
        raise SamplingFailed(f"workspace too small for a {margin:.3f} m placement margin")
    return rng.uniform(lo, hi)


def _cube(obj_id, xy, side, color, yaw) -> WorldObject:
    return WorldObject(obj_id, "cube", Pose((xy[0], xy[1], TABLE_Z + side / 2), yaw), (side,), color)


def _sample_gripper(rng, ws: Workspace, objects, particles=(), tool="fingers") -> GripperState | None:
    p = rng.uniform(ws.low, ws.high)
    yaw = rng.uniform(-math.pi / 2, math.pi / 2)
    for o in objects:
        if o.fixed and o.kind == "marker":
            continue
        horiz = _gap(p[:2], 0.0, o.pose.position[:2], o.clearance_radius)
        vert = p[2] - o.top
        if max(horiz, vert) < MIN_SEPARATION:
            return None
    if tool == "broom" and len(particles):
        d = np.hypot(*(np.asarray(particles)[:, :2] - p[:2]).T)
        if p[2] - BROOM_HALF[2] < PARTICLE_SIDE + MIN_SEPARATION and np.any(d < BROOM_HALF[0] * math.sqrt(2) + MIN_SEPARATION):
            return None
    return GripperState(Pose(p, yaw), 1.0, tool=tool, command=1.0)


def _separated(xy, r, placed) -> bool:
    return all(_gap(xy, r, q, rq) >= MIN_SEPARATION for q, rq in placed)


def _hue_distance(a, b) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def reset(task: TaskSpec, rng: np.random.Generator) -> WorldState:
    """Sample an initial state; raises SamplingFailed after too many rejections."""
    ws = task.workspace
    for _ in range(MAX_RESET_TRIES):
        state = _try_reset(task, rng, ws)
        if state is not None:
            return state
    raise SamplingFailed(f"{task.task_id}: no valid initial configuration in {MAX_RESET_TRIES} tries")


def _try_reset(task: TaskSpec, rng, ws: Workspace) -> WorldState | None:
    tid = task.task_id
    objects = []
    particles = np.zeros((0, 3))
    tool = "fingers"
    if tid == "stacking":
        s = task.dims["cube"]
        r = math.hypot(s, s) / 2
        placed = []
        for obj_id, color in (("red", RED), ("green", GREEN)):
            xy = _uniform_xy(rng, ws, r)
            if not _separated(xy, r, placed):
                return None
            placed.append((xy, r))
            objects.append(_cube(obj_id, xy, s, color, rng.uniform(-math.pi, math.pi)))
    elif tid == "pushing":
        s, m = task.dims["cube"], task.dims["marker"]
        rc, rm = math.hypot(s, s) / 2, math.hypot(m, m) / 2
        cube_xy = _uniform_xy(rng, ws, 0.06)
        marker_xy = _uniform_xy(rng, ws, m / 2)
        if _gap(cube_xy, rc, marker_xy, rm) < MIN_SEPARATION:
            return None
        objects.append(_cube("cube", cube_xy, s, GREEN, rng.uniform(-math.pi, math.pi)))
        objects.append(
            WorldObject("marker", "marker", Pose((marker_xy[0], marker_xy[1], TABLE_Z + 0.001), 0.0), (m, m), PINK, False, True)
        )
    elif tid == "pushing_to_pick":
        s, gap = task.dims["cube"], task.dims["gap"]
        d = s + gap
        xy = _uniform_xy(rng, ws, 0.12)
        theta = rng.uniform(-math.pi, math.pi)
        u = np.array([math.cos(theta), math.sin(theta)])
        w = np.array([-math.sin(theta), math.cos(theta)])
        objects.append(_cube("red", xy, s, RED, theta))
        for k, off in enumerate((u * d, -u * d, -w * d)):
            while True:
                hue = rng.uniform(0, 1)
                if _hue_distance(hue, 0.0) > 0.15:
                    break
            from .scene import hsv_to_rgb

            color = tuple(float(c) for c in hsv_to_rgb([hue, rng.uniform(0.6, 0.9), rng.uniform(0.6, 0.9)]))
            objects.append(_cube(f"obstacle{k}", xy + off, s, color, theta))
    elif tid == "sweeping":
        m = task.dims["marker"]
        n = int(task.dims["count"])
        side = task.dims["particle"]
        marker_xy = _uniform_xy(rng, ws, m / 2)
        objects.append(
            WorldObject("marker", "marker", Pose((marker_xy[0], marker_xy[1], TABLE_Z + 0.001), 0.0), (m, m), GREEN_MARKER, False, True)
        )
        pts = []
        margin = BROOM_HALF[0] + side + 0.012
        while len(pts) < n:
            xy = _uniform_xy(rng, ws, margin)
            if np.all(np.abs(xy - marker_xy) < m / 2 + side):
                continue
            if pts and np.min(np.hypot(*(np.array(pts) - xy).T)) < side + MIN_SEPARATION:
                continue
            pts.append(xy)
        particles = np.column_stack([np.array(pts), np.full(n, TABLE_Z + side / 2)])
        tool = "broom"
    elif tid == "assembling":
        peg_dims, nut_dims = task.dims["peg"], task.dims["nut"]
        rp = math.hypot(peg_dims[0], peg_dims[1]) / 2
        rn = nut_dims[0] * math.sqrt(2) / 2
        peg_xy = _uniform_xy(rng, ws, 0.06)
        nut_xy = _uniform_xy(rng, ws, rn)
        if _gap(peg_xy, rp, nut_xy, rn) < MIN_SEPARATION:
            return None
        objects.append(
            WorldObject("peg", "peg", Pose((peg_xy[0], peg_xy[1], TABLE_Z + peg_dims[2] / 2), rng.uniform(-math.pi, math.pi)),
                        tuple(peg_dims), PINK, False, True)
        )
        objects.append(
            WorldObject("nut", "nut", Pose((nut_xy[0], nut_xy[1], TABLE_Z + nut_dims[2] / 2), rng.uniform(-math.pi, math.pi)),
                        tuple(nut_dims), NUT_COLOR)
        )
    gripper = _sample_gripper(rng, ws, objects, particles, tool)
    if gripper is None:
        return None
    return WorldState(tid, gripper, tuple(objects), particles, 0)


def proxy_state(rng: np.random.Generator, ws: Workspace | None = None, side: float = 0.05) -> WorldState:
    """Localization scene: green, red and yellow cubes plus a free gripper."""
    ws = ws or Workspace()
    r = math.hypot(side, side) / 2
    for _ in range(MAX_RESET_TRIES):
        placed, objects = [], []
        ok = True
        for obj_id, color in (("green", GREEN), ("red", RED), ("yellow", YELLOW)):
            xy = _uniform_xy(rng, ws, r)
            if not _separated(xy, r, placed):
                ok = False
                break
            placed.append((xy, r))
            objects.append(_cube(obj_id, xy, side, color, rng.uniform(-math.pi, math.pi)))
        if not ok:
            continue
        g = _sample_gripper(rng, ws, objects)
        if g is not None:
            return WorldState("stacking", g, tuple(objects))
    raise SamplingFailed("proxy scene sampling failed")


PROXY_ORDER = ("green", "red", "yellow")


def proxy_targets(state: WorldState) -> np.ndarray:
    """Cube offsets from the gripper tip in base-frame axes, (green, red, yellow) order."""
    tip = state.gripper.pose.position
    return np.concatenate([state.obj(k).pose.position - tip for k in PROXY_ORDER])


# ----------------------------------------------------------------------------
# dynamics


def _box_push(center_xy, radius, box_pose: Pose, half_x, half_y):
    """Push a disc out of an oriented rectangle; returns the new center or None."""
    c, s = math.cos(box_pose.yaw), math.sin(box_pose.yaw)
    d = np.asarray(center_xy) - box_pose.position[:2]
    lx, ly = c * d[0] + s * d[1], -s * d[0] + c * d[1]
    qx, qy = min(max(lx, -half_x), half_x), min(max(ly, -half_y), half_y)
    if qx == lx and qy == ly:
        # center inside: leave through the nearest face
        pen = [half_x - lx, half_x + lx, half_y - ly, half_y + ly]
        k = int(np.argmin(pen))
        if k == 0:
            lx = half_x + radius
        elif k == 1:
            lx = -half_x - radius
        elif k == 2:
            ly = half_y + radius
        else:
            ly = -half_y - radius
    else:
        ex, ey = lx - qx, ly - qy
        dist = math.hypot(ex, ey)
        if dist >= radius:
            return None
        lx, ly = qx + ex / dist * radius, qy + ey / dist * radius
    return box_pose.position[:2] + np.array([c * lx - s * ly, s * lx + c * ly])


def _vertical_overlap(a0, a1, b0, b1) -> bool:
    return a0 < b1 and b0 < a1


def _resolve_chain(objects: list, moved: set):
    """Disc-disc separation between pushable objects, deterministic order."""
    for _ in range(4):
        changed = False
        for i, a in enumerate(objects):
            if i not in moved:
                continue
            for j, b in enumerate(objects):
                if j == i or b.fixed or b.kind == "marker":
                    continue
                if not _vertical_overlap(a.bottom, a.top, b.bottom, b.top):
                    continue
                rab = a.contact_radius + b.contact_radius
                dvec = b.pose.position[:2] - a.pose.position[:2]
                dist = float(np.hypot(*dvec))
                if dist >= rab:
                    continue
                direction = dvec / dist if dist > 1e-12 else np.array([1.0, 0.0])
                xy = a.pose.position[:2] + direction * rab
                objects[j] = b.moved_to((xy[0], xy[1], b.pose.position[2]))
                moved.add(j)
                changed = True
        if not changed:
            return


def _push(objects: list, particles: np.ndarray, gpose: Pose, tool: str, attached: str | None):
    """Apply the pusher at ``gpose`` to objects and particles (in place)."""
    tip_z = float(gpose.position[2])
    if tool == "broom":
        hx, hy, hz = BROOM_HALF
        z0, z1 = tip_z - hz, tip_z
        box_pose = gpose
    else:
        hx, hy, hz = TIP_HALF
        z0, z1 = tip_z, tip_z + hz
        box_pose = gpose
    moved = set()
    for i, o in enumerate(objects):
        if o.fixed or o.id == attached or not _vertical_overlap(z0, z1, o.bottom, o.top):
            continue
        new_xy = _box_push(o.pose.position[:2], o.contact_radius, box_pose, hx, hy)
        if new_xy is not None:
            objects[i] = o.moved_to((new_xy[0], new_xy[1], o.pose.position[2]))
            moved.add(i)
    if moved:
        _resolve_chain(objects, moved)
    if tool == "broom" and len(particles):
        r = PARTICLE_SIDE / 2
        for k in range(len(particles)):
            p = particles[k]
            if not _vertical_overlap(z0, z1, p[2] - r, p[2] + r):
                continue
            new_xy = _box_push(p[:2], r, box_pose, hx, hy)
            if new_xy is not None:
                particles[k, :2] = new_xy


def finger_slots_clear(state: WorldState, target: WorldObject, gpose: Pose) -> bool:
    """True if no other object intrudes into the two open-finger slots."""
    fx, fy, _ = FINGER_SIZE
    for side in (-1.0, 1.0):
        center = gpose.transform_point(np.array([0.0, side * (FINGER_OPEN_GAP / 2 + fy / 2), 0.0]))
        slot = Pose(center, gpose.yaw)
        for o in state.objects:
            if o.id == target.id or o.kind == "marker":
                continue
            if o.kind == "peg" and target.kind == "nut":
                continue
            if o.top <= gpose.position[2] - 0.005:
                continue
            if _box_push(o.pose.position[:2], o.clearance_radius, slot, fx / 2, fy / 2) is not None:
                return False
    return True


def support_height(obj: WorldObject, others) -> float:
    """Top of the highest surface under ``obj``'s footprint (table if none)."""
    top = TABLE_Z
    for o in others:
        if o.id == obj.id or o.kind == "marker":
            continue
        dist = float(np.hypot(*(obj.pose.position[:2] - o.pose.position[:2])))
        if obj.kind == "nut" and o.kind == "peg":
            clearance = obj.dims[1] / 2 - o.contact_radius
            if dist < clearance:
                continue
        if dist < obj.contact_radius + o.contact_radius:
            top = max(top, o.top)
    return top


def _attached_pose(gpose: Pose, offset) -> Pose:
    local, dyaw = offset
    return Pose(gpose.transform_point(local), gpose.yaw + dyaw)


def step(s: WorldState, a: Action, dt: float = DT, workspace: Workspace | None = None) -> WorldState:
    """Advance one control period; total and deterministic."""
    ws = workspace or Workspace()
    g = s.gripper
    objects = list(s.objects)
    particles = s.particles.copy()
    attached = g.attached
    att_obj = s.attached_object()

    target = clamp_to_workspace(g.pose.position + a.v * dt, ws)
    if att_obj is not None:
        min_z = TABLE_Z + att_obj.half_height - g.grasp_offset[0][2]
        target[2] = max(target[2], min_z)
    new_yaw = g.pose.yaw + a.omega[2] * dt

    pushing = g.tool == "broom" or (a.g == 0.0 and g.openness <= 0.5 and attached is None)
    start = g.pose.position
    delta = target - start
    n_sub = max(1, int(math.ceil(float(np.linalg.norm(delta)) / 0.004)))
    if pushing:
        dyaw = normalize_yaw(new_yaw - g.pose.yaw)
        for k in range(1, n_sub + 1):
            sub = Pose(start + delta * (k / n_sub), g.pose.yaw + dyaw * (k / n_sub))
            _push(objects, particles, sub, g.tool, attached)
    gpose = Pose(target, new_yaw)

    openness = g.openness + float(np.clip(a.g - g.openness, -OPENNESS_RATE * dt, OPENNESS_RATE * dt))
    offset = g.grasp_offset

    if attached is not None and a.g == 1.0:
        idx = next(i for i, o in enumerate(objects) if o.id == attached)
        o = objects[idx]
        o = o.moved_to(o.pose.position)
        z = support_height(o, objects) + o.half_height
        objects[idx] = o.moved_to((o.pose.position[0], o.pose.position[1], z))
        attached, offset = None, None
    elif attached is None and g.tool == "fingers" and a.g == 0.0 and g.openness > 0.5 >= openness:
        attached, offset = _try_grasp(s, objects, gpose)

    if attached is not None:
        idx = next(i for i, o in enumerate(objects) if o.id == attached)
        objects[idx] = replace(objects[idx], pose=_attached_pose(gpose, offset))

    gripper = GripperState(gpose, openness, attached, offset, g.tool, a.g)
    return WorldState(s.task_id, gripper, tuple(objects), particles, s.time_step + 1)


def _try_grasp(s: WorldState, objects, gpose: Pose):
    best, best_d = None, GRASP_TOLERANCE
    for o in objects:
        if not o.graspable or o.fixed:
            continue
        d = float(np.linalg.norm(o.grasp_point() - gpose.position))
        if d <= best_d:
            best, best_d = o, d
    if best is None:
        return None, None
    probe = replace(s, objects=tuple(objects))
    if not finger_slots_clear(probe, best, gpose):
        return None, None
    local = gpose.inverse_transform_point(best.pose.position)
    local.flags.writeable = False
    return best.id, (local, normalize_yaw(best.pose.yaw - gpose.yaw))


# ----------------------------------------------------------------------------
# success


def _yaw_mod(a: float, period: float) -> float:
    r = math.fmod(a, period)
    if r < 0:
        r += period
    return min(r, period - r)


def particles_inside(s: WorldState, marker: WorldObject) -> int:
    if not len(s.particles):
        return 0
    half = marker.dims[0] / 2
    d = np.abs(s.particles[:, :2] - marker.pose.position[:2])
    return int(np.sum(np.all(d < half, axis=1)))


def success(task: TaskSpec, s: WorldState) -> bool:
    tid = task.task_id
    tol = task.tolerances
    if tid == "stacking":
        red, green = s.obj("red"), s.obj("green")
        horiz = float(np.hypot(*(red.pose.position[:2] - green.pose.position[:2])))
        gap = float(red.pose.position[2] - green.pose.position[2])
        return s.gripper.attached is None and horiz <= tol["xy"] and abs(gap - green.size[2]) <= tol["z"]
    if tid == "pushing":
        cube, marker = s.obj("cube"), s.obj("marker")
        return float(np.hypot(*(cube.pose.position[:2] - marker.pose.position[:2]))) <= tol["xy"]
    if tid == "pushing_to_pick":
        red = s.obj("red")
        return s.gripper.attached == "red" and red.bottom - TABLE_Z >= tol["lift"]
    if tid == "sweeping":
        return particles_inside(s, s.obj("marker")) >= tol["inside"]
    if tid == "assembling":
        nut, peg = s.obj("nut"), s.obj("peg")
        horiz = float(np.hypot(*(nut.pose.position[:2] - peg.pose.position[:2])))
        yaw_err = _yaw_mod(nut.pose.yaw - peg.pose.yaw, math.pi / 2)
        return horiz <= tol["xy"] and yaw_err <= tol["yaw"] and nut.pose.position[2] < peg.top
    raise ConfigError(tid)


# ----------------------------------------------------------------------------
# scripted experts


@dataclass(frozen=True)
class Waypoint:
    position: tuple
    yaw: float
    g: float


@dataclass(frozen=True)
class OracleState:
    fsm_state: str = "init"
    plan: tuple = ()
    index: int = 0
    target: int | None = None
    stall: int = 0
    best: float = math.inf


def _drive(s: WorldState, pos, yaw, g) -> Action:
    gp = s.gripper.pose
    v = (np.asarray(pos, dtype=np.float64) - gp.position) / DT
    n = float(np.linalg.norm(v))
    if n > V_MAX:
        v *= V_MAX / n
    w = float(np.clip(normalize_yaw(yaw - gp.yaw) / DT, -OMEGA_MAX, OMEGA_MAX))
    return Action(v, (0.0, 0.0, w), g)


def _reached(s: WorldState, wp: Waypoint) -> bool:
    gp = s.gripper.pose
    if np.linalg.norm(gp.position - np.asarray(wp.position)) > 1e-4:
        return False
    if abs(normalize_yaw(wp.yaw - gp.yaw)) > 1e-3:
        return False
    return abs(s.gripper.openness - wp.g) < 1e-9


def _nearest_yaw(current: float, base: float, period: float) -> float:
    k = round((current - base) / period)
    return normalize_yaw(base + k * period)


def _finger_yaw_for(s: WorldState, obj: WorldObject, current: float, ws: Workspace) -> float:
    """Gripper yaw aligned with the object's faces whose finger slots are clear."""
    candidates = sorted(
        (_nearest_yaw(current, obj.pose.yaw + k * math.pi / 2, math.pi) for k in range(2)),
        key=lambda y: abs(normalize_yaw(y - current)),
    )
    for yaw in candidates:
        probe = Pose(obj.grasp_point(), yaw)
        if finger_slots_clear(s, obj, probe):
            return yaw
    return candidates[0]


def _ws_point(ws: Workspace, x, y, z) -> tuple:
    p = clamp_to_workspace((x, y, z), ws)
    return (float(p[0]), float(p[1]), float(p[2]))


def _plan_stacking(task: TaskSpec, s: WorldState) -> tuple:
    ws = task.workspace
    red, green = s.obj("red"), s.obj("green")
    travel = 0.12
    yaw = _finger_yaw_for(s, red, s.gripper.pose.yaw, ws)
    rx, ry, rz = red.pose.position
    gx, gy, _ = green.pose.position
    place_z = green.top + red.half_height + 0.005
    return (
        Waypoint(_ws_point(ws, rx, ry, travel), yaw, 1.0),
        Waypoint(_ws_point(ws, rx, ry, rz), yaw, 1.0),
        Waypoint(_ws_point(ws, rx, ry, rz), yaw, 0.0),
        Waypoint(_ws_point(ws, rx, ry, travel), yaw, 0.0),
        Waypoint(_ws_point(ws, gx, gy, travel), yaw, 0.0),
        Waypoint(_ws_point(ws, gx, gy, place_z), yaw, 0.0),
        Waypoint(_ws_point(ws, gx, gy, place_z), yaw, 1.0),
        Waypoint(_ws_point(ws, gx, gy, travel), yaw, 1.0),
    )


def _plan_pushing_to_pick(task: TaskSpec, s: WorldState) -> tuple:
    ws = task.workspace
    red = s.obj("red")
    theta = red.pose.yaw
    w = np.array([-math.sin(theta), math.cos(theta)])
    push_yaw = math.atan2(w[1], w[0])
    plan = []
    cur = s.gripper.pose.position
    cur_yaw = s.gripper.pose.yaw
    plan.append(Waypoint(_ws_point(ws, cur[0], cur[1], max(cur[2], 0.10)), cur_yaw, 0.0))
    clear = 0.10
    push_z = 0.02
    r = red.contact_radius
    for k in ("obstacle0", "obstacle1"):
        ob = s.obj(k)
        c = ob.pose.position[:2]
        start = c - w * (r + TIP_HALF[0] + 0.004)
        end = c + w * 0.09
        plan += [
            Waypoint(_ws_point(ws, start[0], start[1], clear), push_yaw, 0.0),
            Waypoint(_ws_point(ws, start[0], start[1], push_z), push_yaw, 0.0),
            Waypoint(_ws_point(ws, end[0], end[1], push_z), push_yaw, 0.0),
            Waypoint(_ws_point(ws, end[0], end[1], clear), push_yaw, 0.0),
        ]
    grasp_yaw = _nearest_yaw(push_yaw, theta - math.pi / 2, math.pi)
    rx, ry, rz = red.pose.position
    plan += [
        Waypoint(_ws_point(ws, rx, ry, clear), grasp_yaw, 1.0),
        Waypoint(_ws_point(ws, rx, ry, rz), grasp_yaw, 1.0),
        Waypoint(_ws_point(ws, rx, ry, rz), grasp_yaw, 0.0),
        Waypoint(_ws_point(ws, rx, ry, 0.16), grasp_yaw, 0.0),
    ]
    return tuple(plan)


def _plan_assembling(task: TaskSpec, s: WorldState) -> tuple:
    ws = task.workspace
    nut, peg = s.obj("nut"), s.obj("peg")
    travel = 0.145
    # fingers close across the rim: gripper y axis along the nut's local x
    yaw = _nearest_yaw(s.gripper.pose.yaw, nut.pose.yaw + math.pi / 2, math.pi)
    gp = nut.grasp_point()
    local = Pose(gp, yaw).inverse_transform_point(nut.pose.position)
    dyaw = normalize_yaw(nut.pose.yaw - yaw)
    target_nut_yaw = _nearest_yaw(nut.pose.yaw, peg.pose.yaw, math.pi / 2)
    place_yaw = normalize_yaw(target_nut_yaw - dyaw)
    place_xy = peg.pose.position[:2] - (yaw_matrix(place_yaw) @ local)[:2]
    insert_z = 0.06
    return (
        Waypoint(_ws_point(ws, gp[0], gp[1], travel), yaw, 1.0),
        Waypoint(_ws_point(ws, gp[0], gp[1], gp[2]), yaw, 1.0),
        Waypoint(_ws_point(ws, gp[0], gp[1], gp[2]), yaw, 0.0),
        Waypoint(_ws_point(ws, gp[0], gp[1], travel), yaw, 0.0),
        Waypoint(_ws_point(ws, place_xy[0], place_xy[1], travel), place_yaw, 0.0),
        Waypoint(_ws_point(ws, place_xy[0], place_xy[1], insert_z), place_yaw, 0.0),
        Waypoint(_ws_point(ws, place_xy[0], place_xy[1], insert_z), place_yaw, 1.0),
        Waypoint(_ws_point(ws, place_xy[0], place_xy[1], travel), place_yaw, 1.0),
    )


_PLANNERS = {"stacking": _plan_stacking, "pushing_to_pick": _plan_pushing_to_pick, "assembling": _plan_assembling}


def _follow_plan(task, s, os: OracleState):
    plan, idx = os.plan, os.index
    while idx < len(plan) and _reached(s, plan[idx]):
        idx += 1
    stall = 0 if idx != os.index else os.stall + 1
    if idx >= len(plan):
        wp = plan[-1]
        return _drive(s, wp.position, wp.yaw, wp.g), replace(os, fsm_state="done", index=idx, stall=stall)
    wp = plan[idx]
    return _drive(s, wp.position, wp.yaw, wp.g), replace(os, fsm_state=f"waypoint{idx}", index=idx, stall=stall)


def _pushing_fsm(task, s, os: OracleState):
    ws = task.workspace
    cube, marker = s.obj("cube"), s.obj("marker")
    c, m = cube.pose.position[:2], marker.pose.position[:2]
    to_goal = m - c
    dist = float(np.hypot(*to_goal))
    d = to_goal / max(dist, 1e-9)
    heading = math.atan2(d[1], d[0])
    tip = s.gripper.pose.position
    standoff = cube.contact_radius + TIP_HALF[0] + 0.006
    pre = c - d * standoff
    push_z = 0.015
    safe_z = cube.top + 0.03
    rel = tip[:2] - c
    along = float(rel @ d)
    lateral = float(rel @ np.array([-d[1], d[0]]))
    state = os.fsm_state if os.fsm_state != "init" else "approach"
    if state == "push":
        if along > -cube.contact_radius or abs(lateral) > 0.012 or abs(normalize_yaw(heading - s.gripper.pose.yaw)) > 0.2:
            state = "lift"
    if state == "lift" and tip[2] >= safe_z - 1e-4:
        state = "approach"
    if state == "approach" and np.hypot(*(tip[:2] - pre)) < 2e-3 and abs(normalize_yaw(heading - s.gripper.pose.yaw)) < 0.02:
        state = "descend"
    if state == "descend" and abs(tip[2] - push_z) < 1e-3:
        state = "push"
    if state == "lift":
        a = _drive(s, _ws_point(ws, tip[0], tip[1], safe_z), s.gripper.pose.yaw, 0.0)
    elif state == "approach":
        z = safe_z if np.hypot(*(tip[:2] - pre)) > 0.01 else max(tip[2], push_z)
        a = _drive(s, _ws_point(ws, pre[0], pre[1], max(z, safe_z if tip[2] > safe_z - 0.005 else z)), heading, 0.0)
        if tip[2] < safe_z - 0.005 and np.hypot(*(tip[:2] - pre)) > 0.01:
            a = _drive(s, _ws_point(ws, tip[0], tip[1], safe_z), heading, 0.0)
    elif state == "descend":
        a = _drive(s, _ws_point(ws, pre[0], pre[1], push_z), heading, 0.0)
    else:
        # drive the face through the cube towards the goal, correcting drift
        goal = c + d * min(dist, V_MAX * DT) - d * (standoff - 0.006) - np.array([-d[1], d[0]]) * lateral * 0.0
        a = _drive(s, _ws_point(ws, goal[0], goal[1], push_z), heading, 0.0)
    progress = dist
    return a, _progress(os, state, progress)


def _progress(os: OracleState, state: str, metric: float, target=None) -> OracleState:
    if metric < os.best - 1e-3:
        return replace(os, fsm_state=state, best=metric, stall=0, target=target)
    return replace(os, fsm_state=state, stall=os.stall + 1, target=target)


def _sweeping_fsm(task, s, os: OracleState):
    ws = task.workspace
    marker = s.obj("marker")
    mc = marker.pose.position[:2]
    half = marker.dims[0] / 2
    inner = half - 0.03
    p = s.particles
    tip = s.gripper.pose.position
    sweep_z = BROOM_HALF[2] + 0.001
    safe_z = PARTICLE_SIDE + BROOM_HALF[2] + 0.02
    outside = [k for k in range(len(p)) if not np.all(np.abs(p[k, :2] - mc) < inner)]
    n_in = particles_inside(s, marker)
    state = os.fsm_state if os.fsm_state != "init" else "select"
    target = os.target
    if target is not None and target not in outside:
        target = None
        if state == "sweep":
            state = "lift"
    if target is None:
        if not outside:
            a = _drive(s, tip, s.gripper.pose.yaw, 1.0)
            return a, _progress(os, "idle", -n_in, None)
        dists = [float(np.hypot(*(p[k, :2] - mc))) for k in outside]
        target = outside[int(np.argmax(dists))]
        state = "approach" if tip[2] >= safe_z - 1e-4 else "lift"
    tp = p[target, :2]
    d = mc - tp
    d = d / max(float(np.hypot(*d)), 1e-9)
    heading = _nearest_yaw(s.gripper.pose.yaw, math.atan2(d[1], d[0]), math.pi / 2)
    standoff = BROOM_HALF[0] + PARTICLE_SIDE / 2 + 0.008
    pre = tp - d * standoff
    if state == "lift":
        if tip[2] >= safe_z - 1e-4:
            state = "approach"
        else:
            a = _drive(s, _ws_point(ws, tip[0], tip[1], safe_z), s.gripper.pose.yaw, 1.0)
    if state == "approach":
        if np.hypot(*(tip[:2] - pre)) < 2e-3 and abs(normalize_yaw(heading - s.gripper.pose.yaw)) < 0.02:
            state = "descend"
        else:
            a = _drive(s, _ws_point(ws, pre[0], pre[1], safe_z), heading, 1.0)
    if state == "descend":
        if abs(tip[2] - sweep_z) < 1e-3:
            state = "sweep"
        else:
            a = _drive(s, _ws_point(ws, tip[0], tip[1], sweep_z), heading, 1.0)
    if state == "sweep":
        goal = tip[:2] + d * V_MAX * DT
        a = _drive(s, _ws_point(ws, goal[0], goal[1], sweep_z), heading, 1.0)
    metric = -n_in * 10.0 + float(np.hypot(*(tp - mc)))
    return a, _progress(os, state, metric, target)


def oracle_step(task: TaskSpec, s: WorldState, os: OracleState | None = None):
    """Next expert action and oracle state; raises OracleStuck on a stalled FSM."""
    os = os or OracleState()
    tid = task.task_id
    if tid in OPEN_LOOP_TASKS:
        if not os.plan:
            os = replace(os, plan=_PLANNERS[tid](task, s), index=0, fsm_state="waypoint0")
        action, os = _follow_plan(task, s, os)
    elif tid == "pushing":
        action, os = _pushing_fsm(task, s, os)
    else:
        action, os = _sweeping_fsm(task, s, os)
    if os.stall > STALL_LIMIT:
        raise OracleStuck(f"{tid}: oracle made no progress for {STALL_LIMIT} steps (state {os.fsm_state})")
    return action, os


def run_oracle_episode(task: TaskSpec, rng: np.random.Generator, on_step=None):
    """Roll the expert from a fresh reset.

    Returns ``(states, actions, succeeded)`` where ``states[t]`` is the state
    before ``actions[t]`` and ``states[-1]`` is the final state.
    """
    s = reset(task, rng)
    os = OracleState()
    states, actions = [s], []
    for _ in range(task.max_steps):
        if success(task, s):
            return states, actions, True
        a, os = oracle_step(task, s, os)
        s = step(s, a, workspace=task.workspace)
        actions.append(a)
        states.append(s)
        if on_step is not None:
            on_step(s, a)
    return states, actions, success(task, s)
