"""Plain-text run configuration: ``[section]`` headers and ``key = value`` lines.

Unknown sections or keys are errors, so a typo in a randomization range
fails loudly instead of silently falling back to a default.

Example::

    [run]
    task = stacking
    resolution = desk
    seed = 7

    [dr]
    preset = full
    camera_pos_offset = 0.05

    [optimizer]
    steps = 20000
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .domainrand import DRConfig, ImgAugConfig
from .errors import ConfigError
from .nn import OptimizerConfig
from .policy import LossConfig, PolicyConfig, ProxyConfig
from .tabletop import RESOLUTIONS

RUN_KEYS = {"task", "resolution", "seed", "texture_dir", "workers"}
TRAIN_KEYS = {"log_interval", "checkpoint_interval", "scale"}
MODEL_KEYS = {"encoder", "feature_dim", "hidden", "widths", "n_views", "n_frames", "use_proprio"}
OPT_KEYS = {"lr_init", "lr_min", "steps", "beta1", "beta2", "eps", "weight_decay", "batch_size"}
DR_KEYS = {f.name for f in fields(DRConfig) if f.name != "img_aug"} | {"preset", "img_aug"}
AUG_KEYS = {f.name for f in fields(ImgAugConfig)}
SECTIONS = {
    "run": RUN_KEYS,
    "dr": DR_KEYS,
    "img_aug": AUG_KEYS,
    "optimizer": OPT_KEYS,
    "loss": {"lambda"},
    "model": MODEL_KEYS,
    "train": TRAIN_KEYS,
}


@dataclass
class RunConfig:
    task: str | None = None
    resolution: tuple = RESOLUTIONS["desk"]
    seed: int | None = None
    texture_dir: str | None = None
    workers: int | None = None
    dr: DRConfig = field(default_factory=DRConfig.off)
    opt_fields: dict = field(default_factory=dict)
    loss: LossConfig = field(default_factory=LossConfig)
    model: dict = field(default_factory=dict)
    log_interval: int = 10
    checkpoint_interval: int = 1000
    scale: str = "desk"

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(resolution=self.resolution, **self.model)

    def proxy_config(self) -> ProxyConfig:
        kw = {k: v for k, v in self.model.items() if k in ("encoder", "feature_dim", "hidden", "widths")}
        return ProxyConfig(resolution=self.resolution, **kw)


def parse_resolution(text: str) -> tuple:
    text = text.strip()
    if text in RESOLUTIONS:
        return RESOLUTIONS[text]
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution must be one of {sorted(RESOLUTIONS)} or WxH, got {text!r}") from None
    if w < 8 or h < 8:
        raise ConfigError("resolution must be at least 8x8")
    return (w, h)


def _bool(section, key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {text!r}")


def _num(section, key, text, kind=float):
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {text!r}") from None


def _tuple(section, key, text, kind=float):
    return tuple(_num(section, key, p, kind) for p in text.replace("/", ",").split(",") if p.strip())


_DR_TUPLES = {"light_distance_range", "light_azimuth_range", "light_polar_range", "object_hsv_offset"}
_AUG_TUPLES = {"saturation_factor", "contrast_factor"}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        bad = set(cp[sec]) - SECTIONS[sec]
        if bad:
            raise ConfigError(f"{source}: unknown key(s) in [{sec}]: {', '.join(sorted(bad))}")

    rc = RunConfig()
    if cp.has_section("run"):
        s = cp["run"]
        rc.task = s.get("task", "").strip() or None
        if "resolution" in s:
            rc.resolution = parse_resolution(s["resolution"])
        if "seed" in s:
            rc.seed = _num("run", "seed", s["seed"], int)
        rc.texture_dir = s.get("texture_dir", "").strip() or None
        if "workers" in s:
            rc.workers = _num("run", "workers", s["workers"], int)

    aug = None
    if cp.has_section("img_aug"):
        kw = {}
        for k, v in cp["img_aug"].items():
            kw[k] = _tuple("img_aug", k, v) if k in _AUG_TUPLES else _num("img_aug", k, v, int if k == "translation" else float)
        aug = ImgAugConfig(**kw)
    if cp.has_section("dr"):
        s = dict(cp["dr"])
        preset = s.pop("preset", "off").strip()
        if preset not in ("off", "full"):
            raise ConfigError(f"[dr] preset must be 'off' or 'full', got {preset!r}")
        base = DRConfig.full() if preset == "full" else DRConfig.off()
        want_aug = _bool("dr", "img_aug", s.pop("img_aug")) if "img_aug" in s else aug is not None
        kw = {}
        for k, v in s.items():
            if k in _DR_TUPLES:
                kw[k] = _tuple("dr", k, v)
            elif k == "light":
                kw[k] = _bool("dr", k, v)
            elif k == "texture_mode":
                kw[k] = v.strip()
            else:
                kw[k] = _num("dr", k, v)
        rc.dr = replace(base, img_aug=(aug or ImgAugConfig()) if want_aug else None, **kw)
    elif aug is not None:
        rc.dr = replace(rc.dr, img_aug=aug)

    if cp.has_section("optimizer"):
        s = cp["optimizer"]
        kw = {}
        for k, v in s.items():
            if k == "steps":
                kw["total_steps"] = _num("optimizer", k, v, int)
            elif k == "batch_size":
                kw[k] = _num("optimizer", k, v, int)
            elif k in ("beta1", "beta2"):
                continue
            else:
                kw[k] = _num("optimizer", k, v)
        if "beta1" in s or "beta2" in s:
            kw["betas"] = (_num("optimizer", "beta1", s.get("beta1", "0.9")), _num("optimizer", "beta2", s.get("beta2", "0.999")))
        rc.opt_fields = kw
        OptimizerConfig(**{"total_steps": 1, **kw})  # validate early
    if cp.has_section("loss") and "lambda" in cp["loss"]:
        rc.loss = LossConfig(_num("loss", "lambda", cp["loss"]["lambda"]))
    if cp.has_section("model"):
        kw = {}
        for k, v in cp["model"].items():
            if k == "encoder":
                kw[k] = v.strip()
            elif k == "use_proprio":
                kw[k] = _bool("model", k, v)
            elif k in ("hidden", "widths"):
                kw[k] = _tuple("model", k, v, int)
            else:
                kw[k] = _num("model", k, v, int)
        rc.model = kw
        PolicyConfig(**kw)
    if cp.has_section("train"):
        s = cp["train"]
        if "log_interval" in s:
            rc.log_interval = _num("train", "log_interval", s["log_interval"], int)
        if "checkpoint_interval" in s:
            rc.checkpoint_interval = _num("train", "checkpoint_interval", s["checkpoint_interval"], int)
        if "scale" in s:
            rc.scale = s["scale"].strip()
            if rc.scale not in ("desk", "full"):
                raise ConfigError("[train] scale must be 'desk' or 'full'")
        if rc.log_interval < 1 or rc.checkpoint_interval < 1:
            raise ConfigError("[train] intervals must be >= 1")
    return rc


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def parse_plan(text: str, source: str = "<plan>"):
    """Sweep plan file: ``[plan]`` options plus one section per factor with ``candidates``."""
    from .evalsearch import FACTORS, SweepPlan, parse_value

    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    if not cp.has_section("plan"):
        raise ConfigError(f"{source}: missing [plan] section")
    plan_keys = {"factors", "budget", "n_images", "seed", "resolution", "base"}
    bad = set(cp["plan"]) - plan_keys
    if bad:
        raise ConfigError(f"{source}: unknown key(s) in [plan]: {', '.join(sorted(bad))}")
    s = cp["plan"]
    names = [x.strip() for x in s.get("factors", "").split(",") if x.strip()]
    if not names:
        raise ConfigError(f"{source}: [plan] factors is empty")
    factors = []
    for name in names:
        if name not in FACTORS:
            raise ConfigError(f"{source}: unknown factor {name!r}")
        if not cp.has_section(name) or "candidates" not in cp[name]:
            raise ConfigError(f"{source}: factor {name!r} needs a [{name}] section with candidates")
        if set(cp[name]) - {"candidates"}:
            raise ConfigError(f"{source}: unknown key(s) in [{name}]")
        cands = tuple(parse_value(name, c) for c in cp[name]["candidates"].split(",") if c.strip())
        factors.append((name, cands))
    extra = set(cp.sections()) - {"plan", *names}
    if extra:
        raise ConfigError(f"{source}: unknown section(s) {', '.join(sorted(extra))}")
    kw = {}
    if "budget" in s:
        kw["budget"] = _num("plan", "budget", s["budget"], int)
    if "n_images" in s:
        kw["n_images"] = _num("plan", "n_images", s["n_images"], int)
    if "seed" in s:
        kw["seed"] = _num("plan", "seed", s["seed"], int)
    if "resolution" in s:
        kw["resolution"] = parse_resolution(s["resolution"])
    if "base" in s:
        b = s["base"].strip()
        if b not in ("off", "full"):
            raise ConfigError("[plan] base must be 'off' or 'full'")
        kw["base"] = DRConfig.full() if b == "full" else DRConfig.off()
    return SweepPlan(factors=tuple(factors), **kw)
