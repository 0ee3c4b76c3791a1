import math

import numpy as np
import pytest

from drforge.errors import BehindCamera, InvalidDims, InvalidScene
from drforge.render import (
    Drawable,
    Material,
    RenderScene,
    Texture,
    make_primitive,
    project,
    quantize,
    read_ppm,
    render,
    render_float,
    sample_texture,
    shade,
    write_ppm,
)
from drforge.scene import CameraSpec, LightSpec, Pose, normalize


def homogeneous_project(cam, p):
    """Independent oracle: K [R | t] with an explicit 4x4 world-to-camera matrix."""
    f = normalize(np.asarray(cam.target) - cam.position)
    s = normalize(np.cross(f, cam.up))
    u = np.cross(s, f)
    # OpenGL-style look-at: camera looks down -z, y up
    view = np.eye(4)
    view[0, :3], view[1, :3], view[2, :3] = s, u, -f
    view[:3, 3] = -view[:3, :3] @ cam.position
    pc = view @ np.append(p, 1.0)
    fpx = cam.height / (2 * math.tan(math.radians(cam.fov_deg) / 2))
    K = np.array([[fpx, 0, cam.width / 2], [0, -fpx, cam.height / 2], [0, 0, 1]])
    x = K @ np.array([pc[0], pc[1], -pc[2]])
    return x[0] / x[2], x[1] / x[2], -pc[2]


def test_project_optical_axis_center():
    cam = CameraSpec(position=(1, 0.2, 0.5), target=(0, 0, 0.1), width=120, height=90)
    px, py, d = project(cam, cam.target)
    assert px == pytest.approx(60) and py == pytest.approx(45)
    assert d == pytest.approx(np.linalg.norm(cam.target - cam.position))


def test_project_fov90_hand_oracle():
    # camera at origin looking along +x with up +z: camera-frame (right, down, fwd)
    cam = CameraSpec(position=(0, 0, 0), target=(1, 0, 0), up=(0, 0, 1), fov_deg=90, width=64, height=64)
    right = np.cross([1, 0, 0], [0, 0, 1])
    p = 1.0 * np.array([1, 0, 0]) + 0.5 * right
    px, py, d = project(cam, p)
    assert px == pytest.approx(0.75 * 64)
    assert py == pytest.approx(32)
    assert d == pytest.approx(1.0)


def test_project_behind_camera():
    cam = CameraSpec(position=(0, 0, 0), target=(1, 0, 0))
    with pytest.raises(BehindCamera):
        project(cam, (0, 1, 0))
    with pytest.raises(BehindCamera):
        project(cam, (-1, 0, 0))


def test_project_matches_homogeneous_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        pos = rng.uniform(-1, 1, 3) + np.array([0, 0, 1.5])
        cam = CameraSpec(position=pos, target=rng.uniform(-0.2, 0.2, 3), fov_deg=rng.uniform(20, 100),
                         width=int(rng.integers(16, 300)), height=int(rng.integers(16, 300)))
        p = cam.target + rng.uniform(-0.3, 0.3, 3)
        try:
            got = project(cam, p)
        except BehindCamera:
            continue
        want = homogeneous_project(cam, p)
        worst = max(worst, abs(got[0] - want[0]), abs(got[1] - want[1]))
    assert worst <= 1e-4


def test_shade_unlit_gives_ambient_only():
    light = LightSpec((0, 0, 1), ambient=0.2, diffuse=0.7, specular=0.9)
    n = np.array([0, 0, 1.0])
    l = np.array([0, 0, -1.0])
    v = normalize(np.array([1, 0, 0.001]))
    out = shade(n, v, (0.5, 0.4, 1.0), [light], [l])
    np.testing.assert_allclose(out, 0.2 * np.array([0.5, 0.4, 1.0]))


def test_shade_coefficients_sum():
    light = LightSpec((0, 0, 1), ambient=0.3, diffuse=0.3, specular=0.0)
    n = np.array([0, 0, 1.0])
    out = shade(n, n, (1, 1, 1), [light], [n])
    np.testing.assert_allclose(out, [0.6, 0.6, 0.6])


def test_shade_specular_at_mirror_alignment():
    # closed form: r = 2(n.l)n - l equals v exactly, so the highlight is specular * 1**k
    light = LightSpec((0, 0, 1), ambient=0.0, diffuse=0.0, specular=0.45)
    n = np.array([0, 0, 1.0])
    l = normalize(np.array([1.0, 0, 1.0]))
    v = normalize(np.array([-1.0, 0, 1.0]))
    out = shade(n, v, (0, 0, 0), [light], [l])
    np.testing.assert_allclose(out, [0.45] * 3, atol=1e-12)


def test_shade_clamps_and_sums_lights():
    lights = [LightSpec((0, 0, 1), 1, 1, 1), LightSpec((0, 0, 1), 1, 1, 1)]
    n = np.array([0, 0, 1.0])
    out = shade(n, n, (1, 1, 1), lights, [n, n])
    np.testing.assert_array_equal(out, [1, 1, 1])


def test_make_primitive_counts():
    cube = make_primitive("cube", 0.05)
    assert cube.n_triangles == 12
    lo, hi = cube.aabb()
    np.testing.assert_allclose(hi - lo, [0.05] * 3)
    plane = make_primitive("plane", (1, 2))
    assert plane.n_triangles == 2
    assert np.all(plane.normals == [0, 0, 1])
    nut = make_primitive("nut", (0.09, 0.045, 0.015))
    assert nut.n_triangles == 32
    np.testing.assert_allclose(np.linalg.norm(nut.normals, axis=1), 1.0)


def test_nut_hole_admits_peg():
    nut = make_primitive("nut", (0.09, 0.045, 0.015))
    inner = nut.vertices[np.abs(nut.vertices[:, 0]) < 0.03]
    assert np.min(np.abs(inner[:, 0])) * 2 > 0.035


def test_make_primitive_invalid():
    with pytest.raises(InvalidDims):
        make_primitive("cube", -1)
    with pytest.raises(InvalidDims):
        make_primitive("nut", (0.04, 0.05, 0.01))
    with pytest.raises(InvalidDims):
        make_primitive("teapot", 1)


def _cam(w=64, h=48):
    return CameraSpec(position=(0.8, 0.0, 0.5), target=(0, 0, 0.05), fov_deg=40, width=w, height=h)


def test_ambient_only_table():
    light = LightSpec((0, 0, 2), ambient=0.5, diffuse=0.0, specular=0.0)
    table = Drawable(make_primitive("plane", (10, 10)), Material(color=(0.6, 0.6, 0.6)))
    img = render(RenderScene((table,), (light,)), _cam())
    bottom = img[-1]
    assert np.all(bottom == quantize(np.array([0.3])))


def _two_cubes():
    near = Drawable(make_primitive("cube", 0.05), Material(color=(1, 0, 0)), Pose((0.2, 0, 0.025)))
    far = Drawable(make_primitive("cube", 0.1), Material(color=(0, 1, 0)), Pose((-0.2, 0, 0.05)))
    return near, far


def test_nearer_cube_occludes():
    cam = CameraSpec(position=(1, 0, 0.025), target=(0, 0, 0.025), width=64, height=64)
    light = LightSpec((1, 0, 1), 0.5, 0.5, 0.0)
    near, far = _two_cubes()
    for order in ((near, far), (far, near)):
        img = render(RenderScene(order, (light,)), cam)
        center = img[32, 32]
        assert center[0] > 0 and center[1] == 0


def test_render_deterministic_and_order_invariant():
    light = LightSpec((1, 1, 2))
    tex = Texture("t", np.random.default_rng(1).random((32, 32, 3)))
    table = Drawable(make_primitive("plane", (1.2, 1.2)), Material(texture=tex))
    near, far = _two_cubes()
    nut = Drawable(make_primitive("nut", (0.09, 0.045, 0.015)), Material(color=(0.9, 0.7, 0.1)), Pose((0.05, 0.15, 0.0075), 0.4))
    a = render(RenderScene((table, near, far, nut), (light,)), _cam())
    b = render(RenderScene((table, near, far, nut), (light,)), _cam())
    c = render(RenderScene((nut, far, table, near), (light,)), _cam())
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(a, c)


def test_first_submitted_wins_ties():
    light = LightSpec((0, 0, 2), 1.0, 0.0, 0.0)
    red = Drawable(make_primitive("plane", (10, 10)), Material(color=(1, 0, 0)))
    blue = Drawable(make_primitive("plane", (10, 10)), Material(color=(0, 0, 1)))
    img = render(RenderScene((red, blue), (light,)), _cam())
    assert np.all(img[..., 2] == 0)
    img = render(RenderScene((blue, red), (light,)), _cam())
    assert np.all(img[..., 0] == 0)


def test_plane_crossing_near_plane_is_clipped():
    # floor extends behind the camera; clipping must still cover the bottom rows
    light = LightSpec((0, 0, 2), 1.0, 0.0, 0.0)
    floor = Drawable(make_primitive("plane", (20, 20)), Material(color=(0.5, 0.5, 0.5)))
    img = render_float(RenderScene((floor,), (light,)), _cam())
    assert np.all(img[-5:] > 0.49)
    assert np.all((img >= 0) & (img <= 1))


def test_invalid_scene():
    with pytest.raises(InvalidScene):
        render(RenderScene((), ()), _cam())
    with pytest.raises(InvalidScene):
        render(RenderScene((), (LightSpec((0, 0, 1)),)), None)


def test_quantize_round_half_up():
    vals = np.array([0.0, 0.5 / 255, 1.5 / 255, 1.0, 1.2, -0.1])
    assert quantize(vals).tolist() == [0, 1, 2, 255, 255, 0]


def test_sample_texture_bilinear_wrap():
    tex = np.zeros((2, 2, 3))
    tex[0, 0] = 1.0
    # texel centers at 0.25 / 0.75; halfway between texel (0,0) and its wrapped neighbor
    np.testing.assert_allclose(sample_texture(tex, 0.25, 0.25), [1, 1, 1])
    np.testing.assert_allclose(sample_texture(tex, 0.5, 0.25), [0.5] * 3)
    np.testing.assert_allclose(sample_texture(tex, 1.0, 0.25), [0.5] * 3)
    np.testing.assert_allclose(sample_texture(tex, 1.25, 2.25), [1, 1, 1])


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (7, 11, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "x.ppm"), img)
