"""Geometric and color primitives shared across the package.

Vectors are plain ``float64`` numpy arrays of shape ``(3,)``.  The small
value types below freeze their arrays so they can be shared between threads
and processes without defensive copies.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

TWO_PI = 2.0 * math.pi
_U64 = (1 << 64) - 1


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a read-only ``(3,)`` float64 vector from three scalars or a sequence."""
    if y is None:
        arr = np.array(x, dtype=np.float64).reshape(3)
    else:
        arr = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector {arr}")
    arr.flags.writeable = False
    return arr


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return np.asarray(v, dtype=np.float64) / n


def normalize_yaw(a: float) -> float:
    """Wrap an angle into ``[-pi, pi)``; values already in range are returned as-is."""
    a = float(a)
    if -math.pi <= a < math.pi:
        return a
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r >= math.pi:
        r -= TWO_PI
    return r


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _hashable(v):
    if isinstance(v, np.ndarray):
        return (v.shape, v.tobytes())
    if isinstance(v, tuple):
        return tuple(_hashable(x) for x in v)
    return v


def array_eq(cls):
    """Give a frozen dataclass holding numpy fields value equality and hashing."""
    names = [f.name for f in fields(cls)]

    def key(self):
        return tuple(_hashable(getattr(self, n)) for n in names)

    def __eq__(self, other):
        if other.__class__ is not self.__class__:
            return NotImplemented
        return key(self) == key(other)

    cls.__eq__ = __eq__
    cls.__hash__ = lambda self: hash(key(self))
    return cls


@array_eq
@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def transform_point(self, p) -> np.ndarray:
        return yaw_matrix(self.yaw) @ np.asarray(p, dtype=np.float64) + self.position

    def inverse_transform_point(self, p) -> np.ndarray:
        return yaw_matrix(self.yaw).T @ (np.asarray(p, dtype=np.float64) - self.position)


@dataclass(frozen=True)
class Workspace:
    center: np.ndarray = field(default_factory=lambda: vec3(0.0, 0.0, 0.10))
    extents: np.ndarray = field(default_factory=lambda: vec3(0.40, 0.40, 0.20))

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "extents", vec3(self.extents))
        if np.any(self.extents <= 0):
            raise ValueError("workspace extents must be strictly positive")

    @property
    def low(self) -> np.ndarray:
        return self.center - self.extents / 2

    @property
    def high(self) -> np.ndarray:
        return self.center + self.extents / 2


def clamp_to_workspace(p, w: Workspace) -> np.ndarray:
    return np.minimum(np.maximum(np.asarray(p, dtype=np.float64), w.low), w.high)


@array_eq
@dataclass(frozen=True, eq=False)
class CameraSpec:
    """Pinhole camera looking from ``position`` at ``target``; ``fov_deg`` is vertical."""

    position: np.ndarray
    target: np.ndarray
    up: np.ndarray = field(default_factory=lambda: vec3(0.0, 0.0, 1.0))
    fov_deg: float = 40.0
    width: int = 120
    height: int = 90

    def __post_init__(self):
        for name in ("position", "target", "up"):
            object.__setattr__(self, name, vec3(getattr(self, name)))
        if not 10.0 < self.fov_deg < 170.0:
            raise ValueError(f"fov_deg {self.fov_deg} outside (10, 170)")
        if self.width < 16 or self.height < 16:
            raise ValueError("camera resolution must be at least 16x16")
        if np.allclose(self.position, self.target):
            raise ValueError("camera target coincides with its position")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (right, down, forward) unit vectors of the camera frame."""
        fwd = normalize(self.target - self.position)
        right = np.cross(fwd, self.up)
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")
        right = normalize(right)
        down = np.cross(fwd, right)
        return right, down, fwd

    @property
    def focal_px(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.fov_deg) / 2)

    def with_resolution(self, width: int, height: int) -> "CameraSpec":
        return replace(self, width=width, height=height)


def look_angles(cam: CameraSpec) -> tuple[float, float]:
    """Yaw (about +z) and pitch (elevation) of the camera look direction."""
    d = normalize(cam.target - cam.position)
    return math.atan2(d[1], d[0]), math.asin(max(-1.0, min(1.0, d[2])))


def with_look_angles(cam: CameraSpec, yaw: float, pitch: float) -> CameraSpec:
    """Re-aim a camera at the given look yaw/pitch, keeping the target distance."""
    dist = float(np.linalg.norm(cam.target - cam.position))
    d = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    return replace(cam, target=cam.position + dist * d)


@array_eq
@dataclass(frozen=True, eq=False)
class LightSpec:
    position: np.ndarray
    ambient: float = 0.3
    diffuse: float = 0.3
    specular: float = 0.3
    color: np.ndarray = field(default_factory=lambda: vec3(1.0, 1.0, 1.0))

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "color", vec3(np.clip(self.color, 0.0, 1.0)))
        for name in ("ambient", "diffuse", "specular"):
            object.__setattr__(self, name, min(1.0, max(0.0, float(getattr(self, name)))))


def rgb_to_hsv(rgb) -> np.ndarray:
    """Vectorized RGB -> HSV over the last axis. Achromatic colors get hue 0."""
    c = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    maxc = c.max(axis=-1)
    minc = c.min(axis=-1)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    c = np.asarray(hsv, dtype=np.float64)
    h = c[..., 0] % 1.0
    s = np.clip(c[..., 1], 0.0, 1.0)
    v = np.clip(c[..., 2], 0.0, 1.0)
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox, whose output depends only on the 128-bit key and the
    counter, so equal keys give equal sequences on every platform.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _U64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _U64)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, label) -> "RngStream":
        """Derive an independent sub-stream, e.g. per randomization category."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(8, "little"))
        h.update(str(label).encode("utf-8"))
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))
