"""Train a tiny dual-stream model on a few scenes, regenerate, and score it.

This is a short version of the overfit experiment; a few hundred iterations
on CPU give blurry but roughly placed objects. Pass an iteration count to
train longer.

    python3 demos/overfit_and_probe.py [iterations]
"""
import sys

import numpy as np

from dualflow.errors import MetricUndefinedError
from dualflow.metrics import camera_error, causality_probe, epe
from dualflow.model import ModelConfig
from dualflow.sampling import sample, sample_bundles
from dualflow.training import TrainConfig, smoothed, train
from dualflow.world import WorldConfig, dataset_specs, fiducials, make_sample

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
world = WorldConfig(scripts=["push", "push", "none"], cameras=["orbit", "pan"])
samples = [make_sample(s) for s in dataset_specs(3, 0, world)]
model_cfg = ModelConfig(hidden=64, blocks=2)
cfg = TrainConfig(iterations=iterations, batch_size=3, lr=1e-3)

result = train(samples, cfg, model_cfg, progress=lambda i, loss: i % 100 == 0 and print(f"  iter {i} loss {loss:.4f}"))
first, last = smoothed(result.losses, 20)
print(f"smoothed loss {first:.3f} -> {last:.3f}")

for k, s in enumerate(samples):
    can, tar = sample_bundles(s, model_cfg, "active", seed=k)
    gen_tar, gen_can = sample(result.model, can, tar, steps=20, seed=k)
    line = f"sample {k} ({s.spec.script}/{s.spec.camera}): EPE {epe(gen_tar, s.target_tracks, s.object_colors).median:.2f} px"
    try:
        cam = camera_error(gen_tar, s.path, fiducials(s.spec))
        line += f", rotation {cam.rotation_deg:.2f} deg"
    except MetricUndefinedError as exc:
        line += f", camera undefined ({exc})"
    if s.spec.script == "push":
        try:
            rep = causality_probe(gen_tar, s, "forward")
            line += f", passive moved {rep.magnitude:.2f} px (gt {rep.gt_magnitude:.2f})"
        except MetricUndefinedError:
            line += ", passive not detected"
    print(line)
