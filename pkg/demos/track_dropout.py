"""Walk one track set through the training-time transforms.

Causal dropout keeps a single motion role, coarsening shares displacements,
and degradation removes or truncates tracks before rasterization.

    python3 demos/track_dropout.py
"""
import numpy as np

from dualflow.tracks import causal_dropout, coarsen, degrade, rasterize
from dualflow.world import make_sample, random_scene_spec

rng = np.random.default_rng(0)
sample = make_sample(random_scene_spec(11, script="push"))
tracks = sample.tracks
print(f"{len(tracks)} tracks, roles {sorted(set(tracks.role.tolist()))}")

kept = [set(causal_dropout(tracks, 0.8, rng).role.tolist()) for _ in range(2000)]
active = sum(r == {0} for r in kept) / len(kept)
print(f"causal dropout with p=0.8: active-only in {active:.3f} of draws")

coarse = coarsen(tracks, "object")
disp = coarse.positions - coarse.positions[:, :1]
print(f"object coarsening: {len(np.unique(disp.round(9), axis=0))} distinct displacement paths")

thin = degrade(tracks, 0.2, 0.2, rng)
print(f"degrade(0.2, 0.2): {len(thin)} of {len(tracks)} tracks survive, "
      f"visible steps {tracks.visible.sum()} -> {thin.visible.sum()}")

grid = rasterize(tracks, 16, sample.depth0)
print(f"trajectory map {grid.embedding.shape}, occupied pixels per frame {grid.occupancy.sum((1, 2)).tolist()}")
