import math

import numpy as np
import pytest

from drforge.domainrand import (
    AugParams,
    DRConfig,
    ImgAugConfig,
    TextureLibrary,
    apply_augmentation,
    augment_image,
    bundled_library,
    held_out_library,
    procedural_texture,
    randomize_scene,
    sample_camera,
    sample_light,
    sample_object_color,
)
from drforge.errors import ConfigError, EmptyTextureLibrary
from drforge.scene import RngStream, look_angles, normalize_yaw, rgb_to_hsv
from drforge.tabletop import WORKSPACE_CENTER, nominal_camera, nominal_scene
from drforge.world import GREEN, RED


@pytest.fixture(scope="module")
def small_library():
    return bundled_library(n=6, size=32)


def test_light_bounds_monte_carlo():
    cfg = DRConfig(light=True, light_coeff_offset=0.3)
    rng = np.random.default_rng(0)
    c = np.array(WORKSPACE_CENTER)
    dists, polars, coeffs = [], [], []
    for _ in range(10_000):
        light = sample_light(cfg, rng)
        d = light.position - c
        r = np.linalg.norm(d)
        dists.append(r)
        polars.append(math.acos(d[2] / r))
        coeffs.append((light.ambient, light.diffuse, light.specular))
    coeffs = np.array(coeffs)
    assert 1.0 <= min(dists) and max(dists) <= 3.0
    assert math.pi / 10 - 1e-9 <= min(polars) and max(polars) <= 4 * math.pi / 10 + 1e-9
    assert coeffs.min() >= 0.0 and coeffs.max() <= 0.6 + 1e-12
    # both ends of the coefficient range get exercised
    assert coeffs.min() < 0.01 and coeffs.max() > 0.59


def test_light_zero_width_ranges_give_midpoints():
    cfg = DRConfig(light=True, light_distance_range=(2, 2), light_azimuth_range=(0.5, 0.5), light_polar_range=(0.7, 0.7))
    a = sample_light(cfg, np.random.default_rng(1))
    b = sample_light(cfg, np.random.default_rng(2))
    np.testing.assert_array_equal(a.position, b.position)
    assert a.ambient == a.diffuse == a.specular == 0.3


def test_object_color_identity_and_wrap():
    rng = np.random.default_rng(0)
    assert sample_object_color(RED, (0, 0, 0), rng) == pytest.approx(RED)

    class FixedDraw:
        def uniform(self, lo, hi):
            return np.array([0.05, 0.0, 0.0])

    from drforge.scene import hsv_to_rgb

    nominal = tuple(hsv_to_rgb([0.98, 0.8, 0.7]))
    out = sample_object_color(nominal, (0.05, 0.1, 0.1), FixedDraw())
    assert rgb_to_hsv(out)[0] == pytest.approx(0.03)


def _hue_dist(a, b):
    d = abs(a - b) % 1.0
    return min(d, 1 - d)


def test_red_green_hues_stay_apart():
    rng = np.random.default_rng(5)
    worst = 1.0
    for _ in range(10_000):
        r = rgb_to_hsv(sample_object_color(RED, (0.05, 0.1, 0.1), rng))[0]
        g = rgb_to_hsv(sample_object_color(GREEN, (0.05, 0.1, 0.1), rng))[0]
        worst = min(worst, _hue_dist(r, g))
    assert worst > 0.2


def test_camera_bounds_monte_carlo():
    nominal = nominal_camera("front")
    cfg = DRConfig(camera_pos_offset=0.1, camera_ang_offset=0.05, camera_fov_offset=1.0)
    rng = np.random.default_rng(3)
    yaw0, pitch0 = look_angles(nominal)
    for _ in range(10_000):
        cam = sample_camera(nominal, cfg, rng)
        assert np.all(np.abs(cam.position - nominal.position) <= 0.1 + 1e-12)
        yaw, pitch = look_angles(cam)
        assert abs(normalize_yaw(yaw - yaw0)) <= 0.05 + 1e-9
        assert abs(pitch - pitch0) <= 0.05 + 1e-9
        assert abs(cam.fov_deg - nominal.fov_deg) <= 1.0 + 1e-12


def test_camera_zero_offsets_nominal():
    nominal = nominal_camera("left")
    cam = sample_camera(nominal, DRConfig(), np.random.default_rng(0))
    np.testing.assert_allclose(cam.position, nominal.position)
    np.testing.assert_allclose(cam.target, nominal.target, atol=1e-12)
    assert cam.fov_deg == nominal.fov_deg


def test_procedural_plain_and_checkers():
    rng = np.random.default_rng(0)
    plain = procedural_texture("plain", rng).data
    assert plain.shape == (256, 256, 3)
    assert np.all(plain == plain[0, 0])
    for _ in range(5):
        tex = procedural_texture("checkers", rng).data
        # recover the cell size from the first color change along a row
        row = np.any(tex[0] != tex[0, 0], axis=1)
        cell = int(np.argmax(row))
        assert cell in (8, 16, 32)
        yy, xx = np.mgrid[:256, :256]
        parity = ((yy // cell) + (xx // cell)) % 2
        colors = [tex[parity == k] for k in (0, 1)]
        for c in colors:
            assert np.all(c == c[0])
        assert not np.array_equal(colors[0][0], colors[1][0])


def test_procedural_noise_statistics():
    for seed in range(5):
        tex = procedural_texture("noise", np.random.default_rng(seed)).data
        assert tex.min() >= 0.0 and tex.max() <= 1.0
        assert tex.reshape(-1, 3).var(axis=0).sum() > 1e-3
    grad = procedural_texture("gradient", np.random.default_rng(9)).data
    assert grad.min() >= 0 and grad.max() <= 1


def test_all_off_leaves_scene_unchanged():
    nominal = nominal_scene({"red": RED, "green": GREEN})
    out = randomize_scene(nominal, DRConfig.off(), RngStream(1, 2))
    assert out == nominal


def test_randomize_deterministic(small_library):
    nominal = nominal_scene({"red": RED, "green": GREEN})
    cfg = DRConfig.full()
    a = randomize_scene(nominal, cfg, RngStream(11, 4), small_library)
    b = randomize_scene(nominal, cfg, RngStream(11, 4), small_library)
    c = randomize_scene(nominal, cfg, RngStream(11, 5), small_library)
    assert a.object_colors == b.object_colors and a.cameras == b.cameras and a.lights == b.lights
    for tag in a.surfaces:
        assert a.surfaces[tag].texture.name == b.surfaces[tag].texture.name
    assert a.object_colors != c.object_colors


def test_assets_drawn_from_library(small_library):
    nominal = nominal_scene()
    names = set(small_library.names)
    seen = set()
    for i in range(60):
        s = randomize_scene(nominal, DRConfig(texture_mode="assets"), RngStream(0, i), small_library)
        for m in s.surfaces.values():
            assert m.texture.name in names
            seen.add(m.texture.name)
    assert seen == names


def test_empty_library_raises():
    with pytest.raises(EmptyTextureLibrary):
        randomize_scene(nominal_scene(), DRConfig(texture_mode="assets"), RngStream(0, 0), TextureLibrary(()))


def test_held_out_disjoint_from_bundled():
    a = set(bundled_library(n=8, size=16).names)
    b = set(held_out_library(n=8, size=16).names)
    assert not a & b


def test_library_from_directory(tmp_path):
    from PIL import Image

    img = (np.random.default_rng(0).random((20, 30, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "wood.png")
    lib = TextureLibrary.from_directory(tmp_path, size=16)
    assert lib.names == ["asset-wood"]
    assert lib.textures[0].data.shape == (16, 16, 3)


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        DRConfig(texture_mode="fancy")
    with pytest.raises(ConfigError):
        DRConfig(light_distance_range=(3, 1))
    with pytest.raises(ConfigError):
        DRConfig(object_hsv_offset=(0.6, 0, 0))
    cfg = DRConfig.full()
    assert DRConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == DRConfig.from_dict(cfg.to_dict()).digest()
    assert cfg.digest() != DRConfig.off().digest()


def test_augment_identity():
    img = np.random.default_rng(0).integers(0, 256, (12, 16, 3), dtype=np.uint8)
    out = augment_image(img, ImgAugConfig.identity(), np.random.default_rng(1))
    assert np.array_equal(out, img)


def test_augment_shift_right():
    img = np.zeros((8, 10, 3), dtype=np.uint8)
    img[:, 2] = 200
    out = apply_augmentation(img, AugParams(shift=(4, 0)))
    assert np.all(out[:, 6] == 200)
    assert np.all(out[:, 2] == 0)
    # edge replication on the left border
    assert np.all(out[:, :4] == img[:, :1])


def test_contrast_pivot_fixed_point():
    img = np.full((4, 4, 3), 0.5)
    for c in (0.5, 0.9, 1.5):
        np.testing.assert_allclose(apply_augmentation(img, AugParams(contrast=c)), 0.5)


def test_augment_output_range():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (10, 10, 3), dtype=np.uint8)
    for _ in range(50):
        out = augment_image(img, ImgAugConfig(), rng)
        assert out.dtype == np.uint8 and out.shape == img.shape
