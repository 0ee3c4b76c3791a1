"""Deterministic software rasterizer.

Triangles are rasterized one at a time into a z-buffer that records, per
pixel, the winning triangle and its perspective-correct barycentric weights.
Shading is deferred: once every triangle is in, covered pixels are shaded in
one vectorized Phong pass.  At equal depth the first-submitted triangle keeps
the pixel, so output does not depend on anything but submission order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BehindCamera, InvalidDims, InvalidScene
from .scene import CameraSpec, LightSpec, Pose, yaw_matrix

NEAR_PLANE = 0.01
SHININESS = 16.0


@dataclass(frozen=True)
class Texture:
    name: str
    data: np.ndarray  # (H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        arr = np.ascontiguousarray(np.clip(self.data, 0.0, 1.0), dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"texture {self.name!r} must be HxWx3, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class Material:
    """Flat ``color`` or tiled ``texture`` (exactly one); ``uv_scale`` is repeats per meter."""

    color: tuple | None = None
    texture: Texture | None = None
    shininess: float = SHININESS
    uv_scale: float = 4.0

    def __post_init__(self):
        if (self.color is None) == (self.texture is None):
            raise ValueError("material needs exactly one of color or texture")
        if self.color is not None:
            object.__setattr__(self, "color", tuple(float(min(1.0, max(0.0, c))) for c in self.color))


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3)
    normals: np.ndarray  # (V, 3) unit
    uvs: np.ndarray  # (V, 2), meters on the surface
    faces: np.ndarray  # (F, 3) int
    closed: bool = True

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size and (faces.min() < 0 or faces.max() >= len(self.vertices)):
            raise InvalidDims("face index out of range")
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64))
        object.__setattr__(self, "uvs", np.asarray(self.uvs, dtype=np.float64))

    @property
    def n_triangles(self) -> int:
        return len(self.faces)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class Drawable:
    mesh: Mesh
    material: Material
    pose: Pose = field(default_factory=lambda: Pose((0.0, 0.0, 0.0)))
    tag: str = ""


@dataclass(frozen=True)
class RenderScene:
    drawables: tuple
    lights: tuple
    background: tuple = (0.0, 0.0, 0.0)


# ----------------------------------------------------------------------------
# primitives


def _quad(corners, normal, uv_axes):
    """Four corners (CCW seen from ``normal``) -> vertex/normal/uv/face chunks."""
    corners = np.asarray(corners, dtype=np.float64)
    u_ax, v_ax = uv_axes
    uvs = np.stack([corners @ u_ax, corners @ v_ax], axis=1)
    normals = np.tile(np.asarray(normal, dtype=np.float64), (4, 1))
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return corners, normals, uvs, faces


def _assemble(parts, closed=True) -> Mesh:
    verts, norms, uvs, faces = [], [], [], []
    offset = 0
    for v, n, uv, f in parts:
        verts.append(v)
        norms.append(n)
        uvs.append(uv)
        faces.append(f + offset)
        offset += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(norms), np.concatenate(uvs), np.concatenate(faces), closed)


_X, _Y, _Z = np.eye(3)


def _box_parts(sx, sy, sz, center=(0.0, 0.0, 0.0)):
    cx, cy, cz = center
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    z0, z1 = cz - sz / 2, cz + sz / 2
    return [
        _quad([(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)], _Z, (_X, _Y)),
        _quad([(x0, y1, z0), (x1, y1, z0), (x1, y0, z0), (x0, y0, z0)], -_Z, (_X, _Y)),
        _quad([(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)], _X, (_Y, _Z)),
        _quad([(x0, y1, z0), (x0, y0, z0), (x0, y0, z1), (x0, y1, z1)], -_X, (_Y, _Z)),
        _quad([(x1, y1, z0), (x0, y1, z0), (x0, y1, z1), (x1, y1, z1)], _Y, (_X, _Z)),
        _quad([(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)], -_Y, (_X, _Z)),
    ]


def _nut_parts(outer, hole, thickness):
    a, b, h = outer / 2, hole / 2, thickness / 2
    oc = [(-a, -a), (a, -a), (a, a), (-a, a)]
    ic = [(-b, -b), (b, -b), (b, b), (-b, b)]
    parts = []
    for z, normal in ((h, _Z), (-h, -_Z)):
        # annulus face: 8 triangles between outer and inner loops
        verts = np.array([(x, y, z) for x, y in oc] + [(x, y, z) for x, y in ic])
        faces = []
        for i in range(4):
            j = (i + 1) % 4
            faces += [[i, j, 4 + j], [i, 4 + j, 4 + i]]
        faces = np.array(faces)
        if normal[2] < 0:
            faces = faces[:, ::-1]
        parts.append((verts, np.tile(normal, (8, 1)), verts[:, :2].copy(), faces))
    for loop, sign in ((oc, 1.0), (ic, -1.0)):
        for i in range(4):
            (x0, y0), (x1, y1) = loop[i], loop[(i + 1) % 4]
            edge = np.array([x1 - x0, y1 - y0, 0.0])
            n = sign * np.array([edge[1], -edge[0], 0.0]) / np.linalg.norm(edge)
            corners = [(x0, y0, -h), (x1, y1, -h), (x1, y1, h), (x0, y0, h)]
            axis = edge / np.linalg.norm(edge)
            parts.append(_quad(corners, n, (axis, _Z)))
    return parts


def make_primitive(kind: str, dims) -> Mesh:
    """Build a mesh centered at its own origin.

    ``dims`` per kind: cube ``(side,)``; box/peg/finger/broom ``(sx, sy, sz)``;
    plane/marker ``(sx, sy)``; nut ``(outer, hole, thickness)``.
    """
    d = [float(x) for x in np.atleast_1d(dims)]
    if not d or any(not math.isfinite(x) or x <= 0 for x in d):
        raise InvalidDims(f"{kind}: dimensions must be positive, got {d}")
    if kind == "cube":
        if len(d) != 1:
            raise InvalidDims("cube takes a single side length")
        return _assemble(_box_parts(d[0], d[0], d[0]))
    if kind in ("box", "peg", "finger", "broom"):
        if len(d) != 3:
            raise InvalidDims(f"{kind} takes (sx, sy, sz)")
        return _assemble(_box_parts(*d))
    if kind == "plane":
        if len(d) != 2:
            raise InvalidDims("plane takes (sx, sy)")
        sx, sy = d
        part = _quad([(-sx / 2, -sy / 2, 0), (sx / 2, -sy / 2, 0), (sx / 2, sy / 2, 0), (-sx / 2, sy / 2, 0)], _Z, (_X, _Y))
        return _assemble([part], closed=False)
    if kind == "marker":
        if len(d) != 2:
            raise InvalidDims("marker takes (sx, sy)")
        return _assemble(_box_parts(d[0], d[1], 0.002))
    if kind == "nut":
        if len(d) != 3 or d[1] >= d[0]:
            raise InvalidDims("nut takes (outer, hole, thickness) with hole < outer")
        return _assemble(_nut_parts(*d))
    raise InvalidDims(f"unknown primitive kind {kind!r}")


# ----------------------------------------------------------------------------
# projection and shading


def camera_frame(cam: CameraSpec, p_world) -> np.ndarray:
    """World points (..., 3) -> camera frame (x right, y down, z forward)."""
    right, down, fwd = cam.basis()
    rel = np.asarray(p_world, dtype=np.float64) - cam.position
    return np.stack([rel @ right, rel @ down, rel @ fwd], axis=-1)


def project(cam: CameraSpec, p_world) -> tuple[float, float, float]:
    x, y, z = camera_frame(cam, p_world)
    if z <= NEAR_PLANE:
        raise BehindCamera(f"point depth {z:.4f} m is not beyond the near plane")
    f = cam.focal_px
    return cam.width / 2 + f * x / z, cam.height / 2 + f * y / z, float(z)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def shade(normal, view_dir, base, lights: Sequence[LightSpec], light_dirs, shininess: float = SHININESS) -> np.ndarray:
    """Phong shading summed over lights and clamped to [0, 1].

    ``light_dirs[i]`` is the unit direction from the surface towards light i.
    Arrays broadcast over leading axes.
    """
    n = np.asarray(normal, dtype=np.float64)
    v = np.asarray(view_dir, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    out = np.zeros(np.broadcast_shapes(n.shape, base.shape))
    for light, l in zip(lights, light_dirs):
        l = np.asarray(l, dtype=np.float64)
        ndl = np.sum(n * l, axis=-1, keepdims=True)
        lit = ndl > 0
        r = 2.0 * ndl * n - l
        rdv = np.maximum(np.sum(r * v, axis=-1, keepdims=True), 0.0)
        spec = np.where(lit, rdv**shininess, 0.0)
        term = light.ambient * base + light.diffuse * np.maximum(ndl, 0.0) * base + light.specular * spec
        out = out + term * light.color
    return np.clip(out, 0.0, 1.0)


def sample_texture(tex: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup with tiled wrap; ``u``, ``v`` in texture repeats."""
    th, tw = tex.shape[:2]
    x = (np.asarray(u) % 1.0) * tw - 0.5
    y = (np.asarray(v) % 1.0) * th - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64) % tw
    y0 = y0.astype(np.int64) % th
    x1 = (x0 + 1) % tw
    y1 = (y0 + 1) % th
    top = tex[y0, x0] * (1 - fx) + tex[y0, x1] * fx
    bot = tex[y1, x0] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy


# ----------------------------------------------------------------------------
# rasterization


def _clip_near(cpos, attrs):
    """Clip one camera-space triangle against z = NEAR_PLANE (Sutherland-Hodgman)."""
    poly = []
    for i in range(3):
        j = (i + 1) % 3
        pi, pj = cpos[i], cpos[j]
        ai, aj = attrs[i], attrs[j]
        ini, inj = pi[2] > NEAR_PLANE, pj[2] > NEAR_PLANE
        if ini:
            poly.append((pi, ai))
        if ini != inj:
            t = (NEAR_PLANE - pi[2]) / (pj[2] - pi[2])
            poly.append((pi + t * (pj - pi), ai + t * (aj - ai)))
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _gather_triangles(scene: RenderScene, cam: CameraSpec):
    """World-space triangle soup with per-vertex attributes and material ids."""
    pos, nrm, uv, mat_ids, materials = [], [], [], [], []
    for d in scene.drawables:
        m = d.mesh
        if m.n_triangles == 0:
            continue
        rot = yaw_matrix(d.pose.yaw)
        wv = m.vertices @ rot.T + d.pose.position
        wn = m.normals @ rot.T
        tri_p = wv[m.faces]
        tri_n = wn[m.faces]
        tri_uv = m.uvs[m.faces] * d.material.uv_scale
        if m.closed:
            centroid = tri_p.mean(axis=1)
            face_n = tri_n.mean(axis=1)
            keep = np.sum(face_n * (cam.position - centroid), axis=1) > 0
            tri_p, tri_n, tri_uv = tri_p[keep], tri_n[keep], tri_uv[keep]
        pos.append(tri_p)
        nrm.append(tri_n)
        uv.append(tri_uv)
        mat_ids.append(np.full(len(tri_p), len(materials), dtype=np.int64))
        materials.append(d.material)
    if not pos:
        return (np.zeros((0, 3, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3, 2)), np.zeros(0, np.int64), materials)
    return np.concatenate(pos), np.concatenate(nrm), np.concatenate(uv), np.concatenate(mat_ids), materials


def rasterize(scene: RenderScene, cam: CameraSpec):
    """Return (tri_index, weights, world_pos, normals, uvs, mat_ids, materials) buffers."""
    tri_p, tri_n, tri_uv, tri_m, materials = _gather_triangles(scene, cam)
    W, H = cam.width, cam.height
    f = cam.focal_px
    cposs = camera_frame(cam, tri_p)  # (T, 3, 3)

    # near-plane clipping; attributes carried: world pos (3), normal (3), uv (2)
    attrs = np.concatenate([tri_p, tri_n, tri_uv], axis=2)
    front = cposs[:, :, 2] > NEAR_PLANE
    keep_all = front.all(axis=1)
    c_list = [cposs[keep_all]]
    a_list = [attrs[keep_all]]
    m_list = [tri_m[keep_all]]
    order_list = [np.nonzero(keep_all)[0].astype(np.float64)]
    for t in np.nonzero(front.any(axis=1) & ~keep_all)[0]:
        for k, (v0, v1, v2) in enumerate(_clip_near(cposs[t], attrs[t])):
            c_list.append(np.array([[v0[0], v1[0], v2[0]]]))
            a_list.append(np.array([[v0[1], v1[1], v2[1]]]))
            m_list.append(np.array([tri_m[t]]))
            order_list.append(np.array([t + 1e-3 * k]))
    cpos = np.concatenate(c_list)
    attrs = np.concatenate(a_list)
    mats = np.concatenate(m_list)
    order = np.argsort(np.concatenate(order_list), kind="stable")
    cpos, attrs, mats = cpos[order], attrs[order], mats[order]

    sx = W / 2 + f * cpos[:, :, 0] / cpos[:, :, 2]
    sy = H / 2 + f * cpos[:, :, 1] / cpos[:, :, 2]
    sz = cpos[:, :, 2]

    zbuf = np.full((H, W), np.inf)
    tri_idx = np.full((H, W), -1, dtype=np.int64)
    wbuf = np.zeros((H, W, 3))

    x_min = np.clip(np.floor(sx.min(axis=1) - 0.5), 0, W).astype(np.int64)
    x_max = np.clip(np.ceil(sx.max(axis=1) + 0.5), 0, W).astype(np.int64)
    y_min = np.clip(np.floor(sy.min(axis=1) - 0.5), 0, H).astype(np.int64)
    y_max = np.clip(np.ceil(sy.max(axis=1) + 0.5), 0, H).astype(np.int64)
    area = (sx[:, 1] - sx[:, 0]) * (sy[:, 2] - sy[:, 0]) - (sx[:, 2] - sx[:, 0]) * (sy[:, 1] - sy[:, 0])

    for t in range(len(cpos)):
        if x_min[t] >= x_max[t] or y_min[t] >= y_max[t] or abs(area[t]) < 1e-12:
            continue
        xs = np.arange(x_min[t], x_max[t]) + 0.5
        ys = np.arange(y_min[t], y_max[t]) + 0.5
        px, py = np.meshgrid(xs, ys)
        x0, x1, x2 = sx[t]
        y0, y1, y2 = sy[t]
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area[t]
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area[t]
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        iz = w0 / sz[t, 0] + w1 / sz[t, 1] + w2 / sz[t, 2]
        depth = 1.0 / np.where(iz > 0, iz, 1e-30)
        zb = zbuf[y_min[t] : y_max[t], x_min[t] : x_max[t]]
        win = inside & (depth < zb)
        if not win.any():
            continue
        zb[win] = depth[win]
        tri_idx[y_min[t] : y_max[t], x_min[t] : x_max[t]][win] = t
        b = np.stack([w0 / sz[t, 0], w1 / sz[t, 1], w2 / sz[t, 2]], axis=-1) * depth[..., None]
        wbuf[y_min[t] : y_max[t], x_min[t] : x_max[t]][win] = b[win]
    return tri_idx, wbuf, attrs, mats, materials, zbuf


def render_float(scene: RenderScene, cam: CameraSpec | None) -> np.ndarray:
    """Render to an ``(H, W, 3)`` float64 image in [0, 1]."""
    if cam is None:
        raise InvalidScene("no camera given")
    if not scene.lights:
        raise InvalidScene("scene has no lights")
    tri_idx, wbuf, attrs, mats, materials, _ = rasterize(scene, cam)
    H, W = tri_idx.shape
    img = np.empty((H, W, 3))
    img[:] = scene.background
    covered = tri_idx >= 0
    if not covered.any():
        return img
    t = tri_idx[covered]
    w = wbuf[covered]
    a = np.einsum("pk,pkc->pc", w, attrs[t])
    p, n, uv = a[:, :3], _unit(a[:, 3:6]), a[:, 6:8]
    view = _unit(cam.position - p)
    n = np.where(np.sum(n * view, axis=1, keepdims=True) < 0, -n, n)
    m = mats[t]
    base = np.empty((len(t), 3))
    shininess = np.empty((len(t), 1))
    for mi, mat in enumerate(materials):
        sel = m == mi
        if not sel.any():
            continue
        if mat.texture is not None:
            base[sel] = sample_texture(mat.texture.data, uv[sel, 0], uv[sel, 1])
        else:
            base[sel] = mat.color
        shininess[sel] = mat.shininess
    lights = list(scene.lights)
    dirs = [_unit(light.position - p) for light in lights]
    if np.all(shininess == shininess[0]):
        img[covered] = shade(n, view, base, lights, dirs, float(shininess[0, 0]))
    else:
        img[covered] = shade(n, view, base, lights, dirs, shininess)
    return img


def quantize(img: np.ndarray) -> np.ndarray:
    """Float [0, 1] -> uint8 with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render(scene: RenderScene, cam: CameraSpec | None) -> np.ndarray:
    """Render to an ``(H, W, 3)`` uint8 image."""
    return quantize(render_float(scene, cam))


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = quantize(img)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[:, :, :3]).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only binary 8-bit P6 images are supported")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data[pos : pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
