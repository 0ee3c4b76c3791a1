"""
Scripted experts and demonstration datasets
===========================================

Each in-scope task ships a state machine expert that reads privileged
simulator state.  We measure its success rate, then record a tiny dataset,
verify the checksums and replay one episode from its stored actions.
"""

from pathlib import Path

from drforge.dataset import EpisodeDataset, generate_demos, read_episode, replay_succeeds, verify_dataset
from drforge.domainrand import DRConfig
from drforge.scene import RngStream
from drforge.world import TASK_IDS, run_oracle_episode, task_spec

for tid in TASK_IDS:
    task = task_spec(tid)
    results = [run_oracle_episode(task, RngStream(1, i).generator()) for i in range(20)]
    wins = sum(ok for _, _, ok in results)
    mean_len = sum(len(a) for _, a, _ in results) / len(results)
    print(f"{tid:16s} success {wins}/20  mean length {mean_len:.1f} steps")

root = Path("demo_out/demos")
manifest = generate_demos("pushing", 3, DRConfig.full(), 7, root, resolution=(64, 48))
print("episodes", len(manifest.files), "steps", manifest.total)

# checksums are verified on every read; replay re-simulates from the recorded reset
verify_dataset(root)
ep = read_episode(root / manifest.files[0][0])
print("replay reaches the goal:", replay_succeeds(ep))

ds = EpisodeDataset(root)
frames, proprio, actions = ds.batch([0, 1])
print("batch shapes", frames.shape, proprio.shape, actions.shape)
