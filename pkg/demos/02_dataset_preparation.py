"""From raw tracks to train/val/test scenes.

A synthetic crowd stands in for recorded pedestrian data. Trajectories are
split chronologically 70/15/15, cut into 21-step windows every 12 steps, and
each window becomes a scene holding its primary walker plus everyone who was
present for the whole window. Scenes are then sorted into density classes.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from crowdcast.dataio import parse_raw_file, read_scenes, write_raw_file, write_scenes
from crowdcast.pipeline import DATASETS, prepare_datasets
from crowdcast.synth import heterogeneous_configs, synthesize_mixture

# %% Short sessions, one per density class, laid end to end in time. The cycle
# repeats three times so every chronological split block sees each class.
raw = synthesize_mixture(heterogeneous_configs(cycles=3, duration=60, seed=3))
print(f"{len(raw)} raw trajectories, lengths {min(t.length for t in raw)}..{max(t.length for t in raw)} frames")

# %% The plain-text format is "frame id x y", one row per observation.
tmp = Path(tempfile.mkdtemp())
path = write_raw_file(raw, tmp / "raw.txt")
print(path.read_text().splitlines()[:3])
assert parse_raw_file(path) == raw

# %% Split, slice, classify.
data = prepare_datasets(raw)
print(f"{'dataset':8s} {'train':>6s} {'val':>5s} {'test':>5s}")
for name in DATASETS:
    print(f"{name:8s} {len(data[name]['train']):6d} {len(data[name]['val']):5d} {len(data[name]['test']):5d}")

# %% One scene up close.
scene = data["allD"]["train"][0]
print(f"scene {scene.scene_id}: {scene.n_agents} full agents, {len(scene.context)} context agents, "
      f"density {scene.avg_density:.2f} ({scene.density_class})")
print("primary walker, first observed steps:\n", scene.xy[0, :3].round(2))

# %% Scenes are stored one JSON object per line and round-trip exactly.
write_scenes(data["allD"]["test"], tmp / "test.jsonl")
assert read_scenes(tmp / "test.jsonl") == data["allD"]["test"]
print("mean density per class:",
      {c: round(float(np.mean([s.avg_density for s in data[c]["train"]])), 2)
       for c in DATASETS[1:] if data[c]["train"]})
