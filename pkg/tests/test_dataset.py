import struct

import numpy as np
import pytest

from drforge.dataset import (
    DEMO_PRESETS,
    MAGIC,
    Episode,
    EpisodeDataset,
    ProxyDataset,
    build_observation,
    episode_dtype,
    frames_to_input,
    generate_demos,
    generate_proxy,
    read_episode,
    read_manifest,
    replay_succeeds,
    verify_dataset,
    write_episode,
)
from drforge.domainrand import DRConfig, bundled_library
from drforge.errors import ChecksumMismatch, DatasetError, TruncatedFile, VersionMismatch
from drforge.world import V_MAX

RES = (32, 24)


@pytest.fixture(scope="module")
def lib():
    return bundled_library(n=4, size=32)


@pytest.fixture(scope="module")
def demos(tmp_path_factory, lib):
    out = tmp_path_factory.mktemp("demos")
    generate_demos("pushing", 3, DRConfig.full(), 11, out, resolution=RES, library=lib)
    return out


def _toy_episode(n=6):
    rec = np.zeros(n, dtype=episode_dtype(*RES))
    rng = np.random.default_rng(0)
    rec["front"] = rng.integers(0, 256, rec["front"].shape)
    rec["left"] = rng.integers(0, 256, rec["left"].shape)
    for t in range(n):
        rec["proprio"][t] = [t, 0, 0, 0, 1]
    rec["action"] = rng.uniform(-0.1, 0.1, (n, 7))
    return Episode("stacking", RES[0], RES[1], 5, 2, 1234, rec)


def test_round_trip(tmp_path):
    ep = _toy_episode()
    write_episode(tmp_path / "a.drf", ep)
    back = read_episode(tmp_path / "a.drf")
    assert back.task_id == "stacking" and back.index == 2 and back.dr_digest == 1234
    assert back.records.tobytes() == ep.records.tobytes()
    mm = read_episode(tmp_path / "a.drf", mmap=True)
    assert np.array_equal(mm.front, ep.front)


def test_header_layout(tmp_path):
    write_episode(tmp_path / "a.drf", _toy_episode(3))
    data = (tmp_path / "a.drf").read_bytes()
    assert data[:8] == MAGIC
    version, kind, tlen = struct.unpack_from("<HHB", data, 8)
    assert (version, kind, tlen) == (1, 1, len("stacking"))
    assert data[13 : 13 + tlen] == b"stacking"
    w, h = struct.unpack_from("<HH", data, 13 + tlen)
    assert (w, h) == RES
    rec_size = 2 * RES[0] * RES[1] * 3 + 12 * 4
    assert len(data) == 13 + tlen + 32 + 3 * rec_size + 8


def test_flipped_byte_detected(tmp_path):
    write_episode(tmp_path / "a.drf", _toy_episode())
    data = bytearray((tmp_path / "a.drf").read_bytes())
    data[100] ^= 0xFF
    (tmp_path / "a.drf").write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        read_episode(tmp_path / "a.drf")


def test_version_and_truncation(tmp_path):
    write_episode(tmp_path / "a.drf", _toy_episode())
    data = bytearray((tmp_path / "a.drf").read_bytes())
    (tmp_path / "short.drf").write_bytes(bytes(data[:-50]))
    with pytest.raises(TruncatedFile):
        read_episode(tmp_path / "short.drf")
    struct.pack_into("<H", data, 8, 9)
    (tmp_path / "v.drf").write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        read_episode(tmp_path / "v.drf")
    (tmp_path / "bad.drf").write_bytes(b"NOTMAGIC" + bytes(data[8:]))
    with pytest.raises(DatasetError):
        read_episode(tmp_path / "bad.drf")


def test_build_observation_padding():
    ep = _toy_episode()
    obs = build_observation(ep, 0)
    assert obs.frames.shape == (2, 3, RES[1], RES[0], 3)
    assert np.array_equal(obs.frames[0, 0], obs.frames[0, 2])
    assert obs.proprio.shape == (15,)
    np.testing.assert_array_equal(obs.proprio[0::5], [0, 0, 0])
    obs = build_observation(ep, 5)
    np.testing.assert_array_equal(obs.proprio[0::5], [3, 4, 5])
    assert np.array_equal(obs.frames[1, 0], ep.left[3])
    x = frames_to_input(obs.frames)
    assert x.shape == (2, 9, RES[1], RES[0])
    np.testing.assert_allclose(x[0, 6:9], np.moveaxis(ep.front[5], -1, 0) / 255.0)


def test_generated_demos_valid(demos):
    m = verify_dataset(demos)
    assert len(m.files) == 3 and m.task_id == "pushing"
    for name, _, n in m.files:
        ep = read_episode(demos / name)
        assert ep.n_steps == n
        assert np.all(np.linalg.norm(ep.actions[:, :3], axis=1) <= V_MAX + 1e-6)
        assert set(np.unique(ep.actions[:, 6])) <= {0.0, 1.0}
        p = ep.proprio
        np.testing.assert_allclose(p[:, 3] ** 2 + p[:, 4] ** 2, 1.0, atol=1e-6)
        assert replay_succeeds(ep)


def test_manifest_counts(demos):
    m = read_manifest(demos)
    assert len(list(demos.glob("*.drf"))) == len(m.files)
    d = EpisodeDataset(demos)
    assert len(d) == m.total


def test_same_seed_byte_identical_and_parallel(tmp_path, demos, lib):
    generate_demos("pushing", 3, DRConfig.full(), 11, tmp_path / "b", resolution=RES, library=lib, workers=2)
    for name in [p.name for p in demos.glob("*")]:
        assert (demos / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_detects_tamper(tmp_path, lib):
    generate_demos("stacking", 2, DRConfig.off(), 1, tmp_path, resolution=RES, library=lib)
    data = bytearray((tmp_path / "ep_000001.drf").read_bytes())
    data[-1] ^= 1
    (tmp_path / "ep_000001.drf").write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        verify_dataset(tmp_path)
    (tmp_path / "ep_000001.drf").unlink()
    with pytest.raises(DatasetError):
        verify_dataset(tmp_path)


def test_proxy_dataset(tmp_path, lib):
    generate_proxy(7, DRConfig.full(), 2, tmp_path, resolution=RES, library=lib, shard_size=3)
    d = ProxyDataset(tmp_path)
    assert len(d) == 7 and len(read_manifest(tmp_path).files) == 3
    frames, y = d.batch([0, 6])
    assert frames.shape == (2, 2, 1, RES[1], RES[0], 3) and y.shape == (2, 9)
    # the z offsets of all three cubes share the gripper height
    np.testing.assert_allclose(y[:, 2], y[:, 5], atol=1e-6)


def test_presets():
    assert DEMO_PRESETS["stacking"] == 2000 and DEMO_PRESETS["sweeping"] == 4000
