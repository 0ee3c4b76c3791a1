"""Evaluation on a held-out appearance domain, variation scenarios, greedy DR search and reports."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .dataset import generate_proxy, proprio_of
from .domainrand import DRConfig, held_out_library
from .errors import ConfigError
from .policy import PolicyNet, ProxyConfig, load_model, policy_forward, preset_steps, proxy_forward, train_proxy
from .render import Material
from .scene import LightSpec, RngStream, hsv_to_rgb, look_angles, rgb_to_hsv, with_look_angles
from .tabletop import WORKSPACE_CENTER, render_views, scene_for_state
from .world import Action, OracleState, TaskSpec, oracle_step, proxy_state, proxy_targets, reset, step, success, task_spec

SCENARIOS = ("default", "tablecloth", "low_light", "multicolor_light", "object_color", "camera_pose")
SCENARIO_LABELS = {
    "default": "default",
    "tablecloth": "tablecloth",
    "low_light": "low light",
    "multicolor_light": "multicolor",
    "object_color": "object colors",
    "camera_pose": "camera",
}
IN_SIM_EPISODES = 250
SHIFTED_EPISODES = 20
PROXY_EVAL_IMAGES = 250


def _light_at(d, az, polar, ambient, diffuse, specular, color=(1.0, 1.0, 1.0)) -> LightSpec:
    c = np.asarray(WORKSPACE_CENTER, dtype=np.float64)
    pos = c + d * np.array([math.sin(polar) * math.cos(az), math.sin(polar) * math.sin(az), math.cos(polar)])
    return LightSpec(pos, ambient, diffuse, specular, np.asarray(color, dtype=np.float64))


# ----------------------------------------------------------------------------
# pseudo-real domain


@dataclass(frozen=True)
class PseudoRealDomain:
    """A fixed, held-out appearance standing in for real test imagery.

    Every factor sits inside the full randomization ranges but away from the
    nominal values, and the textures come from a library disjoint from the
    training one.
    """

    seed: int = 0
    textures: tuple = ()  # ((surface tag, texture index into the held-out library), ...)
    lights: tuple = ()
    camera_offset: tuple = (0.03, -0.02, 0.015, 0.02, -0.015, 0.5)  # dx, dy, dz, dyaw, dpitch, dfov
    color_offset: tuple = (0.02, -0.06, -0.05)  # added in HSV

    @classmethod
    def make(cls, seed: int = 0) -> "PseudoRealDomain":
        lib = held_out_library()
        order = RngStream(seed, 7).generator().permutation(len(lib))
        tex = (("table", int(order[0])), ("wall", int(order[1])), ("floor", int(order[2])))
        light = _light_at(1.5, 0.15 * math.pi, 0.3 * math.pi, 0.42, 0.22, 0.15)
        return cls(seed=seed, textures=tex, lights=(light,))

    def spare_texture(self) -> int:
        used = {i for _, i in self.textures}
        order = RngStream(self.seed, 7).generator().permutation(len(held_out_library()))
        return next(int(i) for i in order if int(i) not in used)

    def scene(self, state, resolution=(120, 90)):
        """TabletopScene for ``state`` rendered in this domain."""
        base = scene_for_state(state, resolution)
        lib = held_out_library()
        surfaces = dict(base.surfaces)
        for tag, idx in self.textures:
            old = base.surfaces[tag]
            surfaces[tag] = Material(texture=lib.textures[idx], shininess=old.shininess, uv_scale=old.uv_scale)
        colors = {k: _shift_hsv(v, self.color_offset) for k, v in base.object_colors.items()}
        dx, dy, dz, dyaw, dpitch, dfov = self.camera_offset
        cams = []
        for cam in base.cameras:
            d = np.array([dx, dy, dz])
            c = replace(cam, position=cam.position + d, target=cam.target + d, fov_deg=cam.fov_deg + dfov)
            yaw, pitch = look_angles(cam)
            cams.append(with_look_angles(c, yaw + dyaw, pitch + dpitch))
        lights = self.lights or base.lights
        return replace(base, surfaces=surfaces, object_colors=colors, lights=tuple(lights), cameras=tuple(cams))


def _shift_hsv(rgb, off) -> tuple:
    hsv = rgb_to_hsv(rgb) + np.asarray(off, dtype=np.float64)
    hsv[0] = hsv[0] % 1.0
    hsv[1:] = np.clip(hsv[1:], 0.0, 1.0)
    return tuple(float(c) for c in hsv_to_rgb(hsv))


class SimDomain:
    """The nominal simulator appearance (no randomization)."""

    seed = 0

    def scene(self, state, resolution=(120, 90)):
        return scene_for_state(state, resolution)


def variation(domain: PseudoRealDomain, name: str) -> PseudoRealDomain:
    """Modify exactly one appearance factor of ``domain``."""
    if name == "default":
        return domain
    if name == "tablecloth":
        tex = tuple((tag, domain.spare_texture() if tag == "table" else i) for tag, i in domain.textures)
        return replace(domain, textures=tex)
    if name == "low_light":
        return replace(domain, lights=tuple(replace(l, ambient=0.12, diffuse=0.12, specular=0.05) for l in domain.lights))
    if name == "multicolor_light":
        warm = _light_at(1.5, 0.15 * math.pi, 0.3 * math.pi, 0.25, 0.15, 0.1, (1.0, 0.45, 0.45))
        cool = _light_at(1.8, 0.45 * math.pi, 0.2 * math.pi, 0.2, 0.15, 0.1, (0.45, 0.6, 1.0))
        return replace(domain, lights=(warm, cool))
    if name == "object_color":
        return replace(domain, color_offset=(0.06, -0.2, 0.1))
    if name == "camera_pose":
        return replace(domain, camera_offset=(0.06, -0.05, 0.03, 0.05, -0.03, 1.5))
    raise ConfigError(f"unknown variation scenario {name!r}; expected one of {SCENARIOS}")


# ----------------------------------------------------------------------------
# proxy evaluation


def proxy_error_cm(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean Euclidean error over every cube of every image, in centimeters."""
    d = np.asarray(pred, dtype=np.float64).reshape(-1, 3, 3) - np.asarray(target, dtype=np.float64).reshape(-1, 3, 3)
    return float(np.linalg.norm(d, axis=2).mean() * 100.0)


def proxy_test_set(domain, n_images: int = PROXY_EVAL_IMAGES, resolution=(120, 90)):
    """Rendered (frames (n, 2, 1, H, W, 3), targets (n, 9)); deterministic in the domain seed."""
    w, h = resolution
    frames = np.zeros((n_images, 2, 1, h, w, 3), dtype=np.uint8)
    targets = np.zeros((n_images, 9), dtype=np.float32)
    for k in range(n_images):
        state = proxy_state(RngStream(domain.seed, 1_000_000 + k).child("proxy-eval").generator())
        frames[k, 0, 0], frames[k, 1, 0] = render_views(state, domain.scene(state, resolution))
        targets[k] = proxy_targets(state)
    return frames, targets


def _as_model(model):
    if isinstance(model, (str, Path)):
        return load_model(model)[0]
    return model


def eval_proxy(model, domain=None, n_images: int = PROXY_EVAL_IMAGES, test_set=None, batch: int = 50) -> float:
    """Mean localization error (cm) of a proxy model or checkpoint path."""
    model = _as_model(model)
    if test_set is None:
        test_set = proxy_test_set(domain or PseudoRealDomain.make(), n_images, model.cfg.resolution)
    frames, targets = test_set
    preds = np.concatenate([proxy_forward(model, frames[i : i + batch]) for i in range(0, len(frames), batch)])
    return proxy_error_cm(preds, targets)


# ----------------------------------------------------------------------------
# closed-loop rollouts


class ModelPolicy:
    """Adapter: network outputs -> Action, with the gripper thresholded at 0.5."""

    needs_images = True

    def __init__(self, model: PolicyNet):
        self.model = model
        self.resolution = model.cfg.resolution

    def reset(self, task, state):
        pass

    def act(self, frames, proprio, state) -> Action:
        v, w, p = policy_forward(self.model, frames[None], proprio[None])
        return Action(v[0].astype(np.float64), w[0].astype(np.float64), 1.0 if p[0] >= 0.5 else 0.0)


class OraclePolicy:
    """Adapter exposing the scripted expert through the rollout interface."""

    needs_images = False
    resolution = (120, 90)

    def reset(self, task, state):
        self.task, self.os = task, OracleState()

    def act(self, frames, proprio, state) -> Action:
        a, self.os = oracle_step(self.task, state, self.os)
        return a


def as_policy(p):
    if isinstance(p, (ModelPolicy, OraclePolicy)) or hasattr(p, "act"):
        return p
    return ModelPolicy(_as_model(p))


@dataclass
class RolloutResult:
    seed: int
    success: bool
    steps: int
    actions: np.ndarray = field(repr=False, default=None)


def rollout_stream(task: TaskSpec, seed: int) -> RngStream:
    # disjoint from generation streams, which use the stream id as episode index
    return RngStream(seed, 0xE7A1).child(("rollout", task.task_id))


def rollout(policy, task: TaskSpec | str, domain=None, seed: int = 0, max_steps: int | None = None) -> RolloutResult:
    """Closed-loop episode at 10 Hz; no image augmentation is ever applied."""
    task = task_spec(task) if isinstance(task, str) else task
    policy = as_policy(policy)
    domain = domain if domain is not None else SimDomain()
    limit = task.max_steps if max_steps is None else max_steps
    s = reset(task, rollout_stream(task, seed).child("world").generator())
    policy.reset(task, s)
    scene = domain.scene(s, policy.resolution) if policy.needs_images else None
    broom = s.gripper.tool == "broom"
    hist_f, hist_p = deque(maxlen=3), deque(maxlen=3)
    actions = []
    for t in range(limit):
        frames = None
        if policy.needs_images:
            front, left = render_views(s, scene, broom)
            if not hist_f:
                hist_f.extend([(front, left)] * 2)
                hist_p.extend([proprio_of(s)] * 2)
            hist_f.append((front, left))
            hist_p.append(proprio_of(s))
            frames = np.stack([np.stack([f for f, _ in hist_f]), np.stack([l for _, l in hist_f])])
            prop = np.concatenate(hist_p).astype(np.float32)
        else:
            prop = None
        a = policy.act(frames, prop, s)
        actions.append(a.as_vector())
        s = step(s, a, workspace=task.workspace)
        if success(task, s):
            return RolloutResult(seed, True, t + 1, np.array(actions))
    return RolloutResult(seed, False, limit, np.array(actions).reshape(-1, 7))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


@dataclass
class EvalResult:
    task_id: str
    domain: str
    episodes: list  # RolloutResult without actions

    @property
    def n(self) -> int:
        return len(self.episodes)

    @property
    def successes(self) -> int:
        return sum(1 for e in self.episodes if e.success)

    @property
    def rate(self) -> float:
        return self.successes / self.n if self.n else 0.0

    @property
    def interval(self):
        return wilson_interval(self.successes, self.n)


def eval_policy(policy, task, domain=None, n_episodes: int = IN_SIM_EPISODES, seed: int = 0, label: str | None = None) -> EvalResult:
    task = task_spec(task) if isinstance(task, str) else task
    policy = as_policy(policy)
    eps = []
    for i in range(n_episodes):
        r = rollout(policy, task, domain, seed + i)
        eps.append(RolloutResult(r.seed, r.success, r.steps))
    name = label or ("sim" if domain is None or isinstance(domain, SimDomain) else "pseudo-real")
    return EvalResult(task.task_id, name, eps)


def variation_suite(policy, task, n_episodes: int = SHIFTED_EPISODES, domain: PseudoRealDomain | None = None, seed: int = 0):
    """Success rates under the six scenarios, in the fixed report order."""
    domain = domain or PseudoRealDomain.make()
    policy = as_policy(policy)
    return [(name, eval_policy(policy, task, variation(domain, name), n_episodes, seed, label=name)) for name in SCENARIOS]


# ----------------------------------------------------------------------------
# reports


def success_table(results) -> str:
    """TSV rows: scenario, successes, n, rate, wilson_lo, wilson_hi."""
    lines = ["scenario\tsuccesses\tepisodes\trate\twilson_lo\twilson_hi"]
    for name, r in results:
        lo, hi = r.interval
        lines.append(f"{SCENARIO_LABELS.get(name, name)}\t{r.successes}\t{r.n}\t{r.rate:.4f}\t{lo:.4f}\t{hi:.4f}")
    return "\n".join(lines) + "\n"


def key_values(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


# ----------------------------------------------------------------------------
# greedy DR search

FACTORS = ("texture_mode", "light_coeff", "object_hsv", "camera_scale")
_TEXTURE_RANK = {"off": 0, "procedural": 1, "assets": 2}


def apply_factor(cfg: DRConfig, factor: str, value) -> DRConfig:
    if factor == "texture_mode":
        return replace(cfg, texture_mode=value)
    if factor == "light_coeff":
        if value is None:
            return replace(cfg, light=False, light_coeff_offset=0.0)
        return replace(cfg, light=True, light_coeff_offset=float(value))
    if factor == "object_hsv":
        return replace(cfg, object_hsv_offset=tuple(float(x) for x in value))
    if factor == "camera_scale":
        return cfg.with_camera_scale(float(value))
    raise ConfigError(f"unknown DR factor {factor!r}; expected one of {FACTORS}")


def range_size(factor: str, value) -> float:
    """Ordering used to break ties toward the narrower randomization."""
    if factor == "texture_mode":
        return _TEXTURE_RANK[value]
    if factor == "light_coeff":
        return -1.0 if value is None else float(value)
    if factor == "object_hsv":
        return float(sum(value))
    return float(value)


def format_value(factor, value) -> str:
    if factor == "light_coeff" and value is None:
        return "off"
    if factor == "object_hsv":
        return "/".join(f"{x:g}" for x in value)
    return str(value) if isinstance(value, str) else f"{value:g}"


def parse_value(factor, text: str):
    text = text.strip()
    if factor == "texture_mode":
        return text
    if factor == "light_coeff":
        return None if text == "off" else float(text)
    if factor == "object_hsv":
        parts = tuple(float(x) for x in text.split("/"))
        if len(parts) != 3:
            raise ConfigError(f"object_hsv candidate {text!r} needs three '/'-separated values")
        return parts
    return float(text)


@dataclass(frozen=True)
class SweepPlan:
    factors: tuple  # ((factor, (candidate, ...)), ...) in search order
    budget: int = 1000  # training steps per candidate
    n_images: int = 2000
    seed: int = 0
    resolution: tuple = (120, 90)
    base: DRConfig = field(default_factory=DRConfig.off)

    def __post_init__(self):
        for name, cands in self.factors:
            if name not in FACTORS:
                raise ConfigError(f"unknown DR factor {name!r}")
            if len(cands) < 1:
                raise ConfigError(f"factor {name!r} needs at least one candidate")
            for c in cands:
                apply_factor(self.base, name, c)  # validates

    @classmethod
    def default(cls, **kw) -> "SweepPlan":
        factors = (
            ("texture_mode", ("off", "procedural", "assets")),
            ("light_coeff", (None, 0.1, 0.3, 0.5)),
            ("object_hsv", ((0.0, 0.0, 0.0), (0.025, 0.05, 0.05), (0.05, 0.1, 0.1), (0.1, 0.2, 0.2))),
            ("camera_scale", (0.0, 0.5, 1.0, 2.0)),
        )
        kw.setdefault("budget", preset_steps("proxy", "full") // 40)
        return cls(factors=factors, **kw)


@dataclass
class SweepReport:
    curves: dict = field(default_factory=dict)  # factor -> [(value label, error cm), ...]
    selections: list = field(default_factory=list)  # [(factor, value label, error cm)]
    trainings: int = 0

    def curves_text(self) -> str:
        lines = ["factor\tvalue\terror_cm"]
        for factor, pts in self.curves.items():
            lines += [f"{factor}\t{x}\t{y:.4f}" for x, y in pts]
        return "\n".join(lines) + "\n"

    def ablation_text(self) -> str:
        lines = ["step\tfactor\tselected\terror_cm"]
        for i, (f, v, e) in enumerate(self.selections):
            err = "" if e is None else f"{e:.4f}"
            lines.append(f"{i}\t{f}\t{v}\t{err}")
        return "\n".join(lines) + "\n"


def _default_trainer(plan: SweepPlan, budget: int, workdir):
    def train(cfg: DRConfig, seed: int):
        import tempfile

        root = Path(workdir) if workdir is not None else Path(tempfile.mkdtemp(prefix="drforge-sweep-"))
        data = root / f"data-{cfg.digest():016x}"
        if not (data / "manifest.txt").exists():
            generate_proxy(plan.n_images, cfg, plan.seed, data, resolution=plan.resolution)
        opt = nn.OptimizerConfig(total_steps=budget)
        return train_proxy(data, ProxyConfig(resolution=plan.resolution), opt, seed=seed, aug=cfg.img_aug).model

    return train


def greedy_dr_search(plan: SweepPlan, budget: int | None = None, trainer=None, evaluator=None, workdir=None):
    """Coordinate-wise search: one training per candidate, argmin per factor.

    ``trainer(cfg, seed) -> model`` and ``evaluator(model) -> error`` may be
    injected; by default proxy models are trained and scored on the
    pseudo-real domain.
    """
    budget = plan.budget if budget is None else int(budget)
    if budget < 0:
        raise ConfigError("budget must be non-negative")
    if budget == 0 and any(len(c) > 1 for _, c in plan.factors):
        raise ConfigError("a zero budget only admits single-candidate factors")
    if trainer is None:
        trainer = _default_trainer(plan, budget, workdir)
    if evaluator is None:
        test = {}

        def evaluator(model):
            if "set" not in test:
                test["set"] = proxy_test_set(PseudoRealDomain.make(plan.seed), PROXY_EVAL_IMAGES, plan.resolution)
            return eval_proxy(model, test_set=test["set"])

    cfg = plan.base
    report = SweepReport()
    for factor, cands in plan.factors:
        if budget == 0:
            cfg = apply_factor(cfg, factor, cands[0])
            report.selections.append((factor, format_value(factor, cands[0]), None))
            continue
        scored = []
        for c in cands:
            trial = apply_factor(cfg, factor, c)
            err = float(evaluator(trainer(trial, plan.seed)))
            report.trainings += 1
            scored.append((err, range_size(factor, c), c))
        report.curves[factor] = [(format_value(factor, c), e) for e, _, c in scored]
        best = min(scored, key=lambda t: (t[0], t[1]))
        cfg = apply_factor(cfg, factor, best[2])
        report.selections.append((factor, format_value(factor, best[2]), best[0]))
    return cfg, report
