"""Appearance randomization: textures, lighting, object colors, cameras, 2D augmentation.

Every sampler draws from its own child stream of the episode stream, so
switching one factor on or off never changes what the others sample.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyTextureLibrary
from .render import Material, Texture, read_ppm
from .scene import CameraSpec, LightSpec, RngStream, hsv_to_rgb, look_angles, rgb_to_hsv, with_look_angles
from .tabletop import RANDOMIZABLE_SURFACES, WORKSPACE_CENTER, TabletopScene

TEXTURE_SIZE = 256
TEXTURE_MODES = ("off", "procedural", "assets")
PROCEDURAL_KINDS = ("checkers", "gradient", "noise", "plain")
NOMINAL_LIGHT_COEFF = 0.3


@dataclass(frozen=True)
class ImgAugConfig:
    brightness_offset: float = 0.12
    hue_offset: float = 0.05
    saturation_factor: tuple = (0.5, 1.5)
    contrast_factor: tuple = (0.5, 1.5)
    translation: int = 4

    def __post_init__(self):
        for name in ("saturation_factor", "contrast_factor"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must be a positive, ordered range")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.brightness_offset < 0 or self.hue_offset < 0 or self.translation < 0:
            raise ConfigError("augmentation offsets must be non-negative")

    @classmethod
    def identity(cls) -> "ImgAugConfig":
        return cls(0.0, 0.0, (1.0, 1.0), (1.0, 1.0), 0)


def _ordered(name, rng_pair):
    lo, hi = rng_pair
    if lo > hi:
        raise ConfigError(f"{name} range is not ordered: {rng_pair}")
    return (float(lo), float(hi))


@dataclass(frozen=True)
class DRConfig:
    """Randomization ranges.  ``light`` toggles light sampling as a whole."""

    texture_mode: str = "off"
    light: bool = False
    light_distance_range: tuple = (1.0, 3.0)
    light_azimuth_range: tuple = (0.0, math.pi / 2)
    light_polar_range: tuple = (math.pi / 10, 4 * math.pi / 10)
    light_coeff_offset: float = 0.0
    object_hsv_offset: tuple = (0.0, 0.0, 0.0)
    camera_pos_offset: float = 0.0
    camera_ang_offset: float = 0.0
    camera_fov_offset: float = 0.0
    img_aug: ImgAugConfig | None = None

    def __post_init__(self):
        if self.texture_mode not in TEXTURE_MODES:
            raise ConfigError(f"texture_mode must be one of {TEXTURE_MODES}, got {self.texture_mode!r}")
        for name in ("light_distance_range", "light_azimuth_range", "light_polar_range"):
            object.__setattr__(self, name, _ordered(name, getattr(self, name)))
        if not 0.0 <= self.light_coeff_offset <= 1.0:
            raise ConfigError("light_coeff_offset must lie in [0, 1]")
        hsv = tuple(float(x) for x in self.object_hsv_offset)
        if len(hsv) != 3 or any(not 0.0 <= x <= 0.5 for x in hsv):
            raise ConfigError("object_hsv_offset components must lie in [0, 0.5]")
        object.__setattr__(self, "object_hsv_offset", hsv)
        for name in ("camera_pos_offset", "camera_ang_offset", "camera_fov_offset"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def off(cls) -> "DRConfig":
        return cls()

    @classmethod
    def full(cls) -> "DRConfig":
        """The selected setting: asset textures, psi_l = 0.3, HSV (0.05, 0.1, 0.1), small camera jitter."""
        return cls(
            texture_mode="assets",
            light=True,
            light_coeff_offset=0.3,
            object_hsv_offset=(0.05, 0.1, 0.1),
            camera_pos_offset=0.10,
            camera_ang_offset=0.05,
            camera_fov_offset=1.0,
        )

    def with_camera_scale(self, scale: float) -> "DRConfig":
        return replace(self, camera_pos_offset=0.10 * scale, camera_ang_offset=0.05 * scale, camera_fov_offset=1.0 * scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["img_aug"] = None if self.img_aug is None else asdict(self.img_aug)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DRConfig":
        d = dict(d)
        aug = d.pop("img_aug", None)
        for k in ("light_distance_range", "light_azimuth_range", "light_polar_range", "object_hsv_offset"):
            if k in d:
                d[k] = tuple(d[k])
        if aug is not None:
            aug = dict(aug)
            for k in ("saturation_factor", "contrast_factor"):
                if k in aug:
                    aug[k] = tuple(aug[k])
            aug = ImgAugConfig(**aug)
        return cls(img_aug=aug, **d)

    def digest(self) -> int:
        """64-bit digest of the canonical JSON form (stored in episode headers)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


# ----------------------------------------------------------------------------
# textures


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth tileable value noise in [0, 1] with ``cells`` lattice cells per side."""
    lattice = rng.random((cells, cells))
    t = np.arange(size) * cells / size
    i0 = np.floor(t).astype(np.int64)
    f = t - i0
    f = f * f * (3 - 2 * f)
    i1 = (i0 + 1) % cells
    rows0 = lattice[i0][:, i0] * (1 - f)[None, :] + lattice[i0][:, i1] * f[None, :]
    rows1 = lattice[i1][:, i0] * (1 - f)[None, :] + lattice[i1][:, i1] * f[None, :]
    return rows0 * (1 - f)[:, None] + rows1 * f[:, None]


def _fbm(rng, size, base_cells=4, octaves=5, gain=0.5):
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    cells = base_cells
    for _ in range(octaves):
        out += amp * _value_noise(rng, size, min(cells, size))
        total += amp
        amp *= gain
        cells *= 2
    return out / total


def _random_color(rng) -> np.ndarray:
    return rng.random(3)


def procedural_texture(kind: str, rng: np.random.Generator, size: int = TEXTURE_SIZE) -> Texture:
    """Random-color texture of one of the four simple pattern kinds."""
    if kind == "plain":
        data = np.broadcast_to(_random_color(rng), (size, size, 3))
        return Texture("procedural-plain", data)
    if kind == "checkers":
        c1, c2 = _random_color(rng), _random_color(rng)
        cell = int(rng.choice([8, 16, 32]))
        yy, xx = np.mgrid[0:size, 0:size]
        parity = ((yy // cell + xx // cell) % 2).astype(bool)
        return Texture(f"procedural-checkers-{cell}", np.where(parity[..., None], c2, c1))
    if kind == "gradient":
        c1, c2 = _random_color(rng), _random_color(rng)
        angle = rng.uniform(0, 2 * math.pi)
        yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
        t = xx * math.cos(angle) + yy * math.sin(angle)
        t = (t - t.min()) / (t.max() - t.min())
        return Texture("procedural-gradient", c1 + (c2 - c1) * t[..., None])
    if kind == "noise":
        c1, c2 = _random_color(rng), _random_color(rng)
        t = rng.random((size, size, 1))
        return Texture("procedural-noise", c1 + (c2 - c1) * t)
    raise ValueError(f"unknown procedural texture kind {kind!r}")


def _palette(rng, n=3):
    base = rng.random(3) * 0.8 + 0.1
    return [np.clip(base + rng.normal(0, 0.15, 3), 0, 1) for _ in range(n)]


def _lerp3(t, colors):
    t = np.clip(t, 0, 1)[..., None]
    if len(colors) == 2:
        return colors[0] + (colors[1] - colors[0]) * t
    mid = t < 0.5
    a = colors[0] + (colors[1] - colors[0]) * (t * 2)
    b = colors[1] + (colors[2] - colors[1]) * (t * 2 - 1)
    return np.where(mid, a, b)


def synthesize_asset_texture(index: int, rng: np.random.Generator, size: int = TEXTURE_SIZE) -> Texture:
    """Material-like texture (wood, marble, brick, fabric, stone, tiles, concrete, planks).

    Stands in for a photographic asset library: multi-octave structure and
    natural palettes, unlike the flat procedural kinds.
    """
    family = ("wood", "marble", "brick", "fabric", "stone", "tiles", "concrete", "planks")[index % 8]
    pal = _palette(rng)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if family == "wood":
        n = _fbm(rng, size, 4, 4)
        rings = np.sin((xx * rng.uniform(8, 20) + n * rng.uniform(3, 8)) * 2 * math.pi) * 0.5 + 0.5
        img = _lerp3(0.7 * rings + 0.3 * _fbm(rng, size, 16, 3), pal)
    elif family == "marble":
        n = _fbm(rng, size, 4, 6)
        veins = np.abs(np.sin((xx + yy) * rng.uniform(4, 10) + n * rng.uniform(6, 12)))
        img = _lerp3(veins**0.5, [pal[0] * 0.4 + 0.6, pal[1] * 0.5 + 0.4, pal[2] * 0.6])
    elif family == "brick":
        rows = int(rng.choice([8, 16]))
        bh = 1.0 / rows
        row = np.floor(yy / bh)
        shift = (row % 2) * 0.5 / (rows / 2)
        bx = ((xx + shift) * rows / 2) % 1.0
        by = (yy / bh) % 1.0
        mortar = (bx < 0.06) | (by < 0.1)
        brick_id = np.floor((xx + shift) * rows / 2) + row * 97
        tint = (np.sin(brick_id * 12.9898) * 43758.5453) % 1.0
        body = _lerp3(0.6 * tint + 0.4 * _fbm(rng, size, 32, 3), pal)
        img = np.where(mortar[..., None], np.array([0.75, 0.74, 0.7]) * rng.uniform(0.6, 1.0), body)
    elif family == "fabric":
        freq = rng.uniform(30, 70)
        weave = (np.sin(xx * freq * 2 * math.pi) * np.sin(yy * freq * 2 * math.pi)) * 0.5 + 0.5
        img = _lerp3(0.5 * weave + 0.5 * _fbm(rng, size, 8, 4), pal)
    elif family == "stone":
        n = _fbm(rng, size, 8, 6)
        speck = (rng.random((size, size)) > 0.92) * rng.uniform(0.2, 0.5)
        img = _lerp3(np.clip(n + speck, 0, 1), pal)
    elif family == "tiles":
        k = int(rng.choice([4, 8]))
        tx, ty = (xx * k) % 1.0, (yy * k) % 1.0
        grout = (tx < 0.05) | (ty < 0.05)
        tile_id = np.floor(xx * k) + np.floor(yy * k) * 31
        alt = ((np.floor(xx * k) + np.floor(yy * k)) % 2)[..., None]
        body = np.where(alt > 0, pal[0], pal[1]) * (0.85 + 0.15 * _fbm(rng, size, 16, 3))[..., None]
        body = body * (0.9 + 0.1 * ((np.sin(tile_id * 7.13) * 9431.7) % 1.0))[..., None]
        img = np.where(grout[..., None], pal[2] * 0.5, body)
    elif family == "concrete":
        n = _fbm(rng, size, 16, 6, gain=0.6)
        grey = np.full(3, rng.uniform(0.35, 0.75))
        img = grey * (0.7 + 0.6 * (n - 0.5))[..., None] + 0.15 * (pal[0] - 0.5)
    else:  # planks
        k = int(rng.choice([4, 6, 8]))
        plank = np.floor(yy * k)
        grain = _fbm(rng, size, 4, 5)
        lines = np.sin((xx * 40 + grain * 10 + plank * 3.1) * 2 * math.pi) * 0.5 + 0.5
        seam = ((yy * k) % 1.0) < 0.04
        tint = ((np.sin(plank * 3.7) * 4375.1) % 1.0)[..., None]
        body = _lerp3(0.5 * lines + 0.5 * grain, pal) * (0.8 + 0.2 * tint)
        img = np.where(seam[..., None], body * 0.4, body)
    # global light jitter so the library spans brightness levels
    img = np.clip(img * rng.uniform(0.6, 1.3), 0, 1)
    return Texture(f"synth-{family}-{index:04d}", img)


@dataclass(frozen=True)
class TextureLibrary:
    textures: tuple

    def __len__(self):
        return len(self.textures)

    @property
    def names(self) -> list:
        return [t.name for t in self.textures]

    def draw(self, rng: np.random.Generator) -> Texture:
        if not self.textures:
            raise EmptyTextureLibrary("asset texture mode needs at least one texture")
        return self.textures[int(rng.integers(len(self.textures)))]

    @classmethod
    def from_directory(cls, path, size: int = TEXTURE_SIZE) -> "TextureLibrary":
        """Load every PNG/PPM in ``path`` (sorted by name), resized to ``size``."""
        from PIL import Image

        root = Path(path)
        if not root.is_dir():
            raise EmptyTextureLibrary(f"texture directory {path} does not exist")
        textures = []
        for f in sorted(root.iterdir()):
            suffix = f.suffix.lower()
            if suffix == ".png":
                im = Image.open(f).convert("RGB")
            elif suffix in (".ppm", ".pnm"):
                im = Image.fromarray(read_ppm(f))
            else:
                continue
            im = im.resize((size, size), Image.BILINEAR)
            textures.append(Texture(f"asset-{f.stem}", np.asarray(im, dtype=np.float32) / 255.0))
        if not textures:
            raise EmptyTextureLibrary(f"no PNG/PPM textures found in {path}")
        return cls(tuple(textures))


BUNDLED_SEED = 0x5EED_7E47
HELD_OUT_SEED = 0x0DD_BA11


@lru_cache(maxsize=8)
def bundled_library(n: int = 64, seed: int = BUNDLED_SEED, size: int = TEXTURE_SIZE) -> TextureLibrary:
    root = RngStream(seed)
    tex = [synthesize_asset_texture(i, root.child(i).generator(), size) for i in range(n)]
    return TextureLibrary(tuple(tex))


@lru_cache(maxsize=4)
def held_out_library(n: int = 8, size: int = TEXTURE_SIZE) -> TextureLibrary:
    """Textures reserved for evaluation domains; names never collide with the bundled set."""
    root = RngStream(HELD_OUT_SEED)
    tex = []
    for i in range(n):
        t = synthesize_asset_texture(i + 3, root.child(i).generator(), size)
        tex.append(Texture("heldout-" + t.name.removeprefix("synth-"), t.data))
    return TextureLibrary(tuple(tex))


# ----------------------------------------------------------------------------
# samplers


def sample_light(cfg: DRConfig, rng: np.random.Generator, center=WORKSPACE_CENTER) -> LightSpec:
    d = rng.uniform(*cfg.light_distance_range)
    az = rng.uniform(*cfg.light_azimuth_range)
    polar = rng.uniform(*cfg.light_polar_range)
    pos = np.asarray(center) + d * np.array([math.sin(polar) * math.cos(az), math.sin(polar) * math.sin(az), math.cos(polar)])
    psi = cfg.light_coeff_offset
    coeffs = np.clip(NOMINAL_LIGHT_COEFF + rng.uniform(-psi, psi, 3), 0.0, 1.0)
    return LightSpec(pos, *coeffs)


def sample_object_color(nominal, hsv_offset, rng: np.random.Generator) -> tuple:
    hsv = rgb_to_hsv(nominal)
    off = np.asarray(hsv_offset, dtype=np.float64)
    hsv = hsv + rng.uniform(-off, off)
    hsv[0] = hsv[0] % 1.0
    hsv[1:] = np.clip(hsv[1:], 0.0, 1.0)
    return tuple(float(c) for c in hsv_to_rgb(hsv))


def sample_camera(nominal: CameraSpec, cfg: DRConfig, rng: np.random.Generator) -> CameraSpec:
    """Jitter position per axis, look yaw/pitch (roll fixed), and vertical FOV."""
    p = cfg.camera_pos_offset
    a = cfg.camera_ang_offset
    f = cfg.camera_fov_offset
    dpos = rng.uniform(-p, p, 3)
    dyaw, dpitch = rng.uniform(-a, a, 2)
    dfov = rng.uniform(-f, f)
    yaw, pitch = look_angles(nominal)
    cam = replace(nominal, position=nominal.position + dpos, target=nominal.target + dpos, fov_deg=nominal.fov_deg + dfov)
    return with_look_angles(cam, yaw + dyaw, pitch + dpitch)


def randomize_scene(
    nominal: TabletopScene,
    cfg: DRConfig,
    rng: RngStream,
    library: TextureLibrary | None = None,
) -> TabletopScene:
    """Randomize surfaces, light, object colors and both cameras of a nominal scene.

    Object textures are never randomized; objects only get HSV jitter.
    """
    surfaces = dict(nominal.surfaces)
    if cfg.texture_mode != "off":
        g = rng.child("texture").generator()
        if cfg.texture_mode == "assets":
            lib = bundled_library() if library is None else library
            if len(lib) == 0:
                raise EmptyTextureLibrary("asset texture mode needs at least one texture")
        for tag in RANDOMIZABLE_SURFACES:
            old = nominal.surfaces[tag]
            if cfg.texture_mode == "procedural":
                kind = PROCEDURAL_KINDS[int(g.integers(len(PROCEDURAL_KINDS)))]
                tex = procedural_texture(kind, g)
            else:
                tex = lib.draw(g)
            surfaces[tag] = Material(texture=tex, shininess=old.shininess, uv_scale=old.uv_scale)

    lights = nominal.lights
    if cfg.light:
        g = rng.child("light").generator()
        lights = (sample_light(cfg, g),) + tuple(nominal.lights[1:])

    colors = dict(nominal.object_colors)
    if any(cfg.object_hsv_offset):
        g = rng.child("color").generator()
        colors = {k: sample_object_color(v, cfg.object_hsv_offset, g) for k, v in sorted(nominal.object_colors.items())}

    cameras = nominal.cameras
    if cfg.camera_pos_offset or cfg.camera_ang_offset or cfg.camera_fov_offset:
        g = rng.child("camera").generator()
        cameras = tuple(sample_camera(c, cfg, g) for c in nominal.cameras)

    return TabletopScene(surfaces=surfaces, object_colors=colors, lights=lights, cameras=cameras)


# ----------------------------------------------------------------------------
# 2D image augmentation


@dataclass(frozen=True)
class AugParams:
    hue: float = 0.0
    saturation: float = 1.0
    contrast: float = 1.0
    brightness: float = 0.0
    shift: tuple = (0, 0)  # (dx, dy) pixels, +dx moves content right


def sample_aug_params(cfg: ImgAugConfig, rng: np.random.Generator) -> AugParams:
    t = cfg.translation
    return AugParams(
        hue=float(rng.uniform(-cfg.hue_offset, cfg.hue_offset)),
        saturation=float(rng.uniform(*cfg.saturation_factor)),
        contrast=float(rng.uniform(*cfg.contrast_factor)),
        brightness=float(rng.uniform(-cfg.brightness_offset, cfg.brightness_offset)),
        shift=(int(rng.integers(-t, t + 1)), int(rng.integers(-t, t + 1))),
    )


def apply_augmentation(img: np.ndarray, p: AugParams) -> np.ndarray:
    """hue -> saturation -> contrast -> brightness -> translation (edge replicated)."""
    as_uint8 = img.dtype == np.uint8
    x = img.astype(np.float64) / 255.0 if as_uint8 else np.asarray(img, dtype=np.float64)
    if p.hue != 0.0 or p.saturation != 1.0:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + p.hue) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * p.saturation, 0.0, 1.0)
        x = hsv_to_rgb(hsv)
    if p.contrast != 1.0:
        x = np.clip((x - 0.5) * p.contrast + 0.5, 0.0, 1.0)
    if p.brightness != 0.0:
        x = np.clip(x + p.brightness, 0.0, 1.0)
    dx, dy = p.shift
    if dx or dy:
        h, w = x.shape[:2]
        pad = max(abs(dx), abs(dy))
        padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
        x = padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w]
    x = np.clip(x, 0.0, 1.0)
    if as_uint8:
        return np.floor(x * 255.0 + 0.5).astype(np.uint8)
    return x


def augment_image(img: np.ndarray, cfg: ImgAugConfig, rng: np.random.Generator) -> np.ndarray:
    return apply_augmentation(img, sample_aug_params(cfg, rng))
