"""Demonstration and localization datasets: generation and the on-disk format.

Every file starts with the 8-byte magic ``DRFORGE1`` followed by a
little-endian header and fixed-size records, and ends with an 8-byte
checksum (blake2b-64 of everything before it).

Episode file (kind 1)::

    magic       8s   b"DRFORGE1"
    version     u16
    kind        u16  1
    task_len    u8   followed by task_len bytes of UTF-8 task id
    width       u16
    height      u16
    root_seed   u64
    index       u64  episode index (the RngStream key is (root_seed, index))
    dr_digest   u64
    n_steps     u32
    records     n_steps x [front u8[H,W,3], left u8[H,W,3], proprio f32[5], action f32[7]]
    checksum    u64

Proxy shard (kind 2)::

    magic, version, kind = 2, width u16, height u16, root_seed u64,
    first u64 (index of the first sample), dr_digest u64, n u32,
    records n x [front u8[H,W,3], left u8[H,W,3], target f32[9]], checksum u64

A dataset directory holds the files plus ``manifest.txt`` (UTF-8
``key = value`` lines) written last.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domainrand import DRConfig, TextureLibrary, bundled_library, randomize_scene
from .errors import ChecksumMismatch, DatasetError, OracleStuck, TruncatedFile, VersionMismatch
from .scene import RngStream
from .tabletop import render_views, scene_for_state
from .world import Action, TaskSpec, proxy_state, proxy_targets, run_oracle_episode, success, task_spec

MAGIC = b"DRFORGE1"
VERSION = 1
KIND_EPISODE = 1
KIND_PROXY = 2
MANIFEST = "manifest.txt"
MAX_ATTEMPTS = 20
PROXY_SHARD = 500

DEMO_PRESETS = {"stacking": 2000, "pushing": 2000, "pushing_to_pick": 2000, "assembling": 4000, "sweeping": 4000}


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def file_checksum(path) -> int:
    """Checksum of a whole file as listed in manifests."""
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return int.from_bytes(h.digest(), "little")


def episode_dtype(width: int, height: int) -> np.dtype:
    img = (np.uint8, (height, width, 3))
    return np.dtype([("front", img), ("left", img), ("proprio", "<f4", (5,)), ("action", "<f4", (7,))])


def proxy_dtype(width: int, height: int) -> np.dtype:
    img = (np.uint8, (height, width, 3))
    return np.dtype([("front", img), ("left", img), ("target", "<f4", (9,))])


def proprio_of(state) -> np.ndarray:
    p = state.gripper.pose
    return np.array([*p.position, math.sin(p.yaw), math.cos(p.yaw)], dtype=np.float64)


# ----------------------------------------------------------------------------
# episode files


@dataclass
class Episode:
    task_id: str
    width: int
    height: int
    root_seed: int
    index: int
    dr_digest: int
    records: np.ndarray  # structured, episode_dtype

    @property
    def n_steps(self) -> int:
        return len(self.records)

    @property
    def front(self):
        return self.records["front"]

    @property
    def left(self):
        return self.records["left"]

    @property
    def proprio(self):
        return self.records["proprio"]

    @property
    def actions(self):
        return self.records["action"]


def _episode_header(ep: Episode) -> bytes:
    task = ep.task_id.encode("utf-8")
    return (
        MAGIC
        + struct.pack("<HHB", VERSION, KIND_EPISODE, len(task))
        + task
        + struct.pack("<HHQQQI", ep.width, ep.height, ep.root_seed, ep.index, ep.dr_digest, ep.n_steps)
    )


def write_episode(path, ep: Episode) -> int:
    """Write an episode; returns the whole-file checksum."""
    rec = np.ascontiguousarray(ep.records, dtype=episode_dtype(ep.width, ep.height))
    body = _episode_header(ep) + rec.tobytes()
    data = body + struct.pack("<Q", checksum64(body))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return checksum64(data)


def _check_prefix(buf: bytes, kind: int, path) -> int:
    if len(buf) < 12:
        raise TruncatedFile(f"{path}: file too short for a header")
    if buf[:8] != MAGIC:
        raise DatasetError(f"{path}: bad magic {buf[:8]!r}")
    version, got_kind = struct.unpack_from("<HH", buf, 8)
    if version != VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {VERSION}")
    if got_kind != kind:
        raise DatasetError(f"{path}: record kind {got_kind}, expected {kind}")
    return 12


def read_episode(path, verify: bool = True, mmap: bool = False) -> Episode:
    """Read an episode file.  ``mmap`` maps records instead of loading them."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(512)
    off = _check_prefix(head, KIND_EPISODE, path)
    if len(head) < off + 1:
        raise TruncatedFile(f"{path}: truncated header")
    (tlen,) = struct.unpack_from("<B", head, off)
    off += 1
    need = off + tlen + struct.calcsize("<HHQQQI")
    if len(head) < need:
        raise TruncatedFile(f"{path}: truncated header")
    task = head[off : off + tlen].decode("utf-8")
    off += tlen
    w, h, root, idx, digest, n = struct.unpack_from("<HHQQQI", head, off)
    off += struct.calcsize("<HHQQQI")
    dt = episode_dtype(w, h)
    size = path.stat().st_size
    expected = off + n * dt.itemsize + 8
    if size < expected:
        raise TruncatedFile(f"{path}: {size} bytes, header promises {expected}")
    if size > expected:
        raise DatasetError(f"{path}: {size - expected} trailing bytes")
    if verify:
        data = path.read_bytes()
        (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
        if checksum64(data[:-8]) != stored:
            raise ChecksumMismatch(f"{path}: checksum mismatch")
    if mmap:
        records = np.memmap(path, dtype=dt, mode="r", offset=off, shape=(n,))
    else:
        with open(path, "rb") as f:
            f.seek(off)
            records = np.frombuffer(f.read(n * dt.itemsize), dtype=dt)
    return Episode(task, w, h, root, idx, digest, records)


# ----------------------------------------------------------------------------
# proxy shards


@dataclass
class ProxyShard:
    width: int
    height: int
    root_seed: int
    first: int
    dr_digest: int
    records: np.ndarray  # structured, proxy_dtype

    def __len__(self):
        return len(self.records)


_PROXY_HEAD = "<HHQQQI"


def write_proxy_shard(path, shard: ProxyShard) -> int:
    rec = np.ascontiguousarray(shard.records, dtype=proxy_dtype(shard.width, shard.height))
    body = (
        MAGIC
        + struct.pack("<HH", VERSION, KIND_PROXY)
        + struct.pack(_PROXY_HEAD, shard.width, shard.height, shard.root_seed, shard.first, shard.dr_digest, len(rec))
        + rec.tobytes()
    )
    data = body + struct.pack("<Q", checksum64(body))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return checksum64(data)


def read_proxy_shard(path, verify: bool = True, mmap: bool = False) -> ProxyShard:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(64)
    off = _check_prefix(head, KIND_PROXY, path)
    if len(head) < off + struct.calcsize(_PROXY_HEAD):
        raise TruncatedFile(f"{path}: truncated header")
    w, h, root, first, digest, n = struct.unpack_from(_PROXY_HEAD, head, off)
    off += struct.calcsize(_PROXY_HEAD)
    dt = proxy_dtype(w, h)
    size = path.stat().st_size
    expected = off + n * dt.itemsize + 8
    if size < expected:
        raise TruncatedFile(f"{path}: {size} bytes, header promises {expected}")
    if size > expected:
        raise DatasetError(f"{path}: {size - expected} trailing bytes")
    if verify:
        data = path.read_bytes()
        (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
        if checksum64(data[:-8]) != stored:
            raise ChecksumMismatch(f"{path}: checksum mismatch")
    if mmap:
        records = np.memmap(path, dtype=dt, mode="r", offset=off, shape=(n,))
    else:
        with open(path, "rb") as f:
            f.seek(off)
            records = np.frombuffer(f.read(n * dt.itemsize), dtype=dt)
    return ProxyShard(w, h, root, first, digest, records)


# ----------------------------------------------------------------------------
# manifests


@dataclass
class Manifest:
    kind: str  # episodes | proxy
    task_id: str
    root_seed: int
    width: int
    height: int
    dr: DRConfig
    files: list  # (name, checksum, count)

    @property
    def total(self) -> int:
        return sum(c for _, _, c in self.files)

    def to_text(self) -> str:
        lines = [
            "format = DRFORGE1",
            f"version = {VERSION}",
            f"kind = {self.kind}",
            f"task = {self.task_id}",
            f"root_seed = {self.root_seed}",
            f"resolution = {self.width}x{self.height}",
            f"n_files = {len(self.files)}",
            f"total = {self.total}",
            f"dr_digest = {self.dr.digest():016x}",
            "dr_config = " + json.dumps(self.dr.to_dict(), sort_keys=True, separators=(",", ":")),
        ]
        for i, (name, cs, count) in enumerate(self.files):
            lines.append(f"file.{i:06d} = {name} {cs:016x} {count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        kv = {}
        for ln, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"manifest line {ln}: expected 'key = value'")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        if kv.get("format") != "DRFORGE1":
            raise DatasetError("manifest: not a DRFORGE1 manifest")
        if int(kv.get("version", -1)) != VERSION:
            raise VersionMismatch(f"manifest version {kv.get('version')}, expected {VERSION}")
        w, h = (int(x) for x in kv["resolution"].split("x"))
        dr = DRConfig.from_dict(json.loads(kv["dr_config"]))
        if f"{dr.digest():016x}" != kv["dr_digest"]:
            raise ChecksumMismatch("manifest: DR config digest does not match its config")
        files = []
        for k in sorted(x for x in kv if x.startswith("file.")):
            name, cs, count = kv[k].split()
            files.append((name, int(cs, 16), int(count)))
        m = cls(kv["kind"], kv["task"], int(kv["root_seed"]), w, h, dr, files)
        if len(files) != int(kv["n_files"]) or m.total != int(kv["total"]):
            raise DatasetError("manifest: counts are inconsistent")
        return m


def write_manifest(root, m: Manifest):
    Path(root, MANIFEST).write_text(m.to_text(), encoding="utf-8")


def read_manifest(root) -> Manifest:
    p = Path(root, MANIFEST)
    if not p.exists():
        raise DatasetError(f"{root}: no {MANIFEST}")
    return Manifest.from_text(p.read_text(encoding="utf-8"))


def verify_dataset(root) -> Manifest:
    """Recompute every checksum and cross-check the manifest against the files."""
    m = read_manifest(root)
    on_disk = sorted(p.name for p in Path(root).glob("*.drf"))
    listed = sorted(name for name, _, _ in m.files)
    if on_disk != listed:
        raise DatasetError(f"{root}: manifest lists {len(listed)} files, {len(on_disk)} on disk")
    for name, cs, count in m.files:
        path = Path(root, name)
        if file_checksum(path) != cs:
            raise ChecksumMismatch(f"{path}: checksum differs from manifest")
        if m.kind == "episodes":
            ep = read_episode(path, verify=True, mmap=True)
            n = ep.n_steps
            if ep.dr_digest != m.dr.digest():
                raise DatasetError(f"{path}: DR digest differs from manifest")
        else:
            n = len(read_proxy_shard(path, verify=True, mmap=True))
        if n != count:
            raise DatasetError(f"{path}: {n} records, manifest says {count}")
    return m


# ----------------------------------------------------------------------------
# generation


def _library_for(dr: DRConfig, library):
    if dr.texture_mode == "assets" and library is None:
        return bundled_library()
    return library


def record_episode(task: TaskSpec, dr: DRConfig, root_seed: int, index: int, resolution=(120, 90), library=None) -> Episode:
    """Run the expert for one episode index, resampling failed attempts."""
    stream = RngStream(root_seed, index)
    w, h = resolution
    library = _library_for(dr, library)
    last = None
    for attempt in range(MAX_ATTEMPTS):
        sub = stream if attempt == 0 else stream.child(("retry", attempt))
        try:
            states, actions, ok = run_oracle_episode(task, sub.child("world").generator())
        except OracleStuck as e:
            last = e
            continue
        if not ok:
            last = OracleStuck(f"{task.task_id}[{index}]: oracle did not finish within {task.max_steps} steps")
            continue
        scene = randomize_scene(scene_for_state(states[0], (w, h)), dr, sub.child("scene"), library)
        broom = states[0].gripper.tool == "broom"
        rec = np.zeros(len(actions), dtype=episode_dtype(w, h))
        for t, (s, a) in enumerate(zip(states[:-1], actions)):
            rec["front"][t], rec["left"][t] = render_views(s, scene, broom)
            rec["proprio"][t] = proprio_of(s)
            rec["action"][t] = a.as_vector()
        return Episode(task.task_id, w, h, root_seed, index, dr.digest(), rec)
    raise OracleStuck(f"{task.task_id}[{index}]: {MAX_ATTEMPTS} consecutive failed attempts ({last})")


def episode_name(index: int) -> str:
    return f"ep_{index:06d}.drf"


def _gen_episode_job(args):
    task, dr, root_seed, index, resolution, library, out = args
    ep = record_episode(task, dr, root_seed, index, resolution, library)
    name = episode_name(index)
    cs = write_episode(Path(out, name), ep)
    return name, cs, ep.n_steps


def _run_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    import multiprocessing as mp

    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, jobs))


def generate_demos(
    task: TaskSpec | str,
    n_episodes: int,
    dr: DRConfig,
    root_seed: int,
    out,
    resolution=(120, 90),
    library: TextureLibrary | None = None,
    workers: int = 1,
) -> Manifest:
    """Record ``n_episodes`` successful expert episodes into ``out``."""
    task = task_spec(task) if isinstance(task, str) else task
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    library = _library_for(dr, library)
    jobs = [(task, dr, root_seed, i, tuple(resolution), library, str(out)) for i in range(n_episodes)]
    files = _run_jobs(_gen_episode_job, jobs, workers)
    m = Manifest("episodes", task.task_id, root_seed, resolution[0], resolution[1], dr, files)
    write_manifest(out, m)
    return m


def record_proxy_samples(dr: DRConfig, root_seed: int, first: int, n: int, resolution=(120, 90), library=None) -> ProxyShard:
    w, h = resolution
    library = _library_for(dr, library)
    rec = np.zeros(n, dtype=proxy_dtype(w, h))
    for k in range(n):
        stream = RngStream(root_seed, first + k)
        state = proxy_state(stream.child("world").generator())
        scene = randomize_scene(scene_for_state(state, (w, h)), dr, stream.child("scene"), library)
        rec["front"][k], rec["left"][k] = render_views(state, scene)
        rec["target"][k] = proxy_targets(state)
    return ProxyShard(w, h, root_seed, first, dr.digest(), rec)


def _gen_proxy_job(args):
    dr, root_seed, first, n, resolution, library, out = args
    shard = record_proxy_samples(dr, root_seed, first, n, resolution, library)
    name = f"proxy_{first:08d}.drf"
    return name, write_proxy_shard(Path(out, name), shard), n


def generate_proxy(
    n_images: int,
    dr: DRConfig,
    root_seed: int,
    out,
    resolution=(120, 90),
    library: TextureLibrary | None = None,
    workers: int = 1,
    shard_size: int = PROXY_SHARD,
) -> Manifest:
    """Render ``n_images`` localization scenes (three cubes) into shards."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    library = _library_for(dr, library)
    jobs = []
    for first in range(0, n_images, shard_size):
        n = min(shard_size, n_images - first)
        jobs.append((dr, root_seed, first, n, tuple(resolution), library, str(out)))
    files = _run_jobs(_gen_proxy_job, jobs, workers)
    m = Manifest("proxy", "proxy", root_seed, resolution[0], resolution[1], dr, files)
    write_manifest(out, m)
    return m


def replay_succeeds(ep: Episode) -> bool:
    """Re-run the stored actions from the recorded reset and check the goal.

    Replays take the first attempt's stream; resampled episodes are
    recognised by a proprio mismatch and replayed on their retry streams.
    """
    task = task_spec(ep.task_id)
    from .world import reset, step

    stream = RngStream(ep.root_seed, ep.index)
    for attempt in range(MAX_ATTEMPTS):
        sub = stream if attempt == 0 else stream.child(("retry", attempt))
        s = reset(task, sub.child("world").generator())
        if not np.allclose(proprio_of(s), ep.proprio[0], atol=1e-6):
            continue
        for a in ep.actions:
            s = step(s, Action.from_vector(a.astype(np.float64)), workspace=task.workspace)
        return success(task, s)
    return False


# ----------------------------------------------------------------------------
# observations


@dataclass
class Observation:
    frames: np.ndarray  # (2 views, 3 timesteps, H, W, 3) uint8, oldest first
    proprio: np.ndarray  # (15,) = 3 x [x, y, z, sin yaw, cos yaw]


def history_indices(t: int) -> list:
    return [max(t - 2, 0), max(t - 1, 0), t]


def build_observation(ep: Episode, t: int) -> Observation:
    if not 0 <= t < ep.n_steps:
        raise IndexError(f"step {t} outside episode of length {ep.n_steps}")
    idx = history_indices(t)
    frames = np.stack([ep.front[idx], ep.left[idx]])
    return Observation(frames, np.asarray(ep.proprio[idx], dtype=np.float32).reshape(15))


def frames_to_input(frames: np.ndarray) -> np.ndarray:
    """(..., T, H, W, 3) uint8 -> (..., 3T, H, W) float32 in [0, 1], frames channel-stacked."""
    x = np.asarray(frames, dtype=np.float32) / 255.0
    x = np.moveaxis(x, -1, -3)  # (..., T, 3, H, W)
    return x.reshape(*x.shape[:-4], x.shape[-4] * 3, *x.shape[-2:])


class EpisodeDataset:
    """Random access to every step of a verified episode dataset."""

    def __init__(self, root, verify: bool = True):
        self.root = Path(root)
        self.manifest = verify_dataset(root) if verify else read_manifest(root)
        if self.manifest.kind != "episodes":
            raise DatasetError(f"{root}: expected an episode dataset, found {self.manifest.kind}")
        self.episodes = [read_episode(self.root / name, verify=False, mmap=True) for name, _, _ in self.manifest.files]
        self.index = np.array([(e, t) for e, ep in enumerate(self.episodes) for t in range(ep.n_steps)], dtype=np.int64)

    def __len__(self):
        return len(self.index)

    @property
    def resolution(self):
        return self.manifest.width, self.manifest.height

    def batch(self, rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Frames (B, 2, 3, H, W, 3) uint8, proprio (B, 15), actions (B, 7)."""
        frames, props, acts = [], [], []
        for r in rows:
            e, t = self.index[r]
            obs = build_observation(self.episodes[e], int(t))
            frames.append(obs.frames)
            props.append(obs.proprio)
            acts.append(self.episodes[e].actions[t])
        return np.stack(frames), np.stack(props).astype(np.float32), np.stack(acts).astype(np.float32)


class ProxyDataset:
    def __init__(self, root, verify: bool = True, limit: int | None = None):
        self.root = Path(root)
        self.manifest = verify_dataset(root) if verify else read_manifest(root)
        if self.manifest.kind != "proxy":
            raise DatasetError(f"{root}: expected a proxy dataset, found {self.manifest.kind}")
        shards = [read_proxy_shard(self.root / name, verify=False, mmap=True) for name, _, _ in self.manifest.files]
        self.records = np.concatenate([s.records for s in shards]) if len(shards) > 1 else np.asarray(shards[0].records)
        if limit is not None:
            self.records = self.records[:limit]

    def __len__(self):
        return len(self.records)

    @property
    def resolution(self):
        return self.manifest.width, self.manifest.height

    def batch(self, rows) -> tuple[np.ndarray, np.ndarray]:
        """Frames (B, 2, 1, H, W, 3) uint8 and targets (B, 9)."""
        r = self.records[np.asarray(rows)]
        frames = np.stack([r["front"], r["left"]], axis=1)[:, :, None]
        return frames, r["target"].astype(np.float32)
