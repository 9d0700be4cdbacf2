"""On-disk formats for samples, checkpoints and run manifests.

Every artifact directory holds one ``manifest.json`` plus raw little-endian,
row-major tensor files. Manifests carry ``schema_version``; readers refuse
versions they do not know.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import CorruptionError, SchemaVersionError, StructuralError
from .geometry import CameraIntrinsics, CameraPath, DepthMap
from .model import DualStreamDiT, ModelConfig
from .tracks import TrackSet
from .world import Sample, SceneSpec

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def read_manifest(directory, kind=None):
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CorruptionError(f"missing {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path}: {exc}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)
    if kind is not None and manifest.get("kind") != kind:
        raise CorruptionError(f"{path} describes a {manifest.get('kind')!r}, expected {kind!r}")
    return manifest


def write_tensor(directory, name, array):
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
    array = array.astype(dtype, copy=False)
    fname = f"{name}.bin"
    array.tofile(Path(directory) / fname)
    return {"file": fname, "dtype": dtype.str, "shape": list(array.shape)}


def read_tensor(directory, entry):
    path = Path(directory) / entry["file"]
    if not path.exists():
        raise CorruptionError(f"missing tensor file {entry['file']}")
    dtype = np.dtype(entry["dtype"])
    expected = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
    size = path.stat().st_size
    if size != expected:
        raise CorruptionError(f"{entry['file']}: {size} bytes on disk, manifest implies {expected}")
    return np.fromfile(path, dtype=dtype).reshape(entry["shape"])


def write_sample(directory, sample):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {
        "canonical_clip": sample.canonical_clip.astype(np.float32),
        "target_clip": sample.target_clip.astype(np.float32),
        "depth0": sample.depth0.values,
        "depth0_valid": sample.depth0.validity.astype(np.uint8),
        "path_rotations": sample.path.rotations,
        "path_translations": sample.path.translations,
        "track_positions": sample.tracks.positions,
        "track_visible": sample.tracks.visible.astype(np.uint8),
        "track_object_id": sample.tracks.object_id,
        "track_role": sample.tracks.role,
        "target_track_positions": sample.target_tracks.positions,
        "target_track_visible": sample.target_tracks.visible.astype(np.uint8),
        "target_depth": sample.target_depth,
        "ids0": sample.ids0.astype(np.int16),
    }
    entries = {name: write_tensor(directory, name, arr) for name, arr in tensors.items()}
    _dump(directory / MANIFEST, {
        "schema_version": SCHEMA_VERSION,
        "kind": "sample",
        "label": sample.label,
        "mode": sample.mode,
        "spec": sample.spec.to_dict(),
        "intrinsics": sample.path.intrinsics.to_dict(),
        "frame_size": list(sample.tracks.frame_size),
        "tensors": entries,
    })


def read_sample(directory):
    directory = Path(directory)
    m = read_manifest(directory, "sample")
    t = {name: read_tensor(directory, entry) for name, entry in m["tensors"].items()}
    intr = CameraIntrinsics.from_dict(m["intrinsics"])
    size = tuple(m["frame_size"])
    obj, role = t["track_object_id"], t["track_role"]
    return Sample(
        spec=SceneSpec.from_dict(m["spec"]),
        canonical_clip=t["canonical_clip"],
        target_clip=t["target_clip"],
        depth0=DepthMap(t["depth0"], t["depth0_valid"].astype(bool)),
        path=CameraPath(t["path_rotations"], t["path_translations"], intr),
        tracks=TrackSet(t["track_positions"], t["track_visible"].astype(bool), obj, role, size),
        target_tracks=TrackSet(t["target_track_positions"], t["target_track_visible"].astype(bool), obj, role,
                               size),
        target_depth=t["target_depth"],
        ids0=t["ids0"],
        label=m["label"],
        mode=m["mode"],
    )


def write_checkpoint(directory, model):
    """One ``weights.bin`` blob of float32 parameters plus a name -> shape/offset manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "weights.bin", "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    _dump(directory / MANIFEST, {
        "schema_version": SCHEMA_VERSION,
        "kind": "checkpoint",
        "dtype": "<f4",
        "config": model.cfg.to_dict(),
        "parameters": entries,
        "count": offset,
    })


def read_checkpoint(directory):
    """``(weights dict of float32 arrays, ModelConfig)``."""
    directory = Path(directory)
    m = read_manifest(directory, "checkpoint")
    blob_path = directory / "weights.bin"
    if not blob_path.exists():
        raise CorruptionError("missing tensor file weights.bin")
    blob = np.fromfile(blob_path, dtype=np.dtype(m["dtype"]))
    if blob.size != m["count"]:
        raise CorruptionError(f"weights.bin holds {blob.size} values, manifest expects {m['count']}")
    weights = {}
    for e in m["parameters"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        weights[e["name"]] = blob[e["offset"]:e["offset"] + n].reshape(e["shape"])
    return weights, ModelConfig.from_dict(m["config"])


def load_weights(model, weights):
    state = model.state_dict()
    missing = sorted(set(state) - set(weights))
    unexpected = sorted(set(weights) - set(state))
    wrong = sorted(k for k in set(state) & set(weights) if tuple(state[k].shape) != tuple(weights[k].shape))
    if missing or unexpected or wrong:
        raise StructuralError(f"checkpoint does not fit model: missing={missing} unexpected={unexpected} "
                              f"shape_mismatch={wrong}")
    model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in weights.items()})
    return model


def load_model(directory):
    weights, cfg = read_checkpoint(directory)
    model = load_weights(DualStreamDiT(cfg), weights)
    model.eval()
    return model


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    artifacts: dict = field(default_factory=dict)

    def write(self, directory, kind="run", **extra):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _dump(directory / MANIFEST, {"schema_version": SCHEMA_VERSION, "kind": kind, "run": asdict(self), **extra})

    @classmethod
    def read(cls, directory):
        m = read_manifest(directory)
        return cls(**m["run"])


def list_samples(directory):
    directory = Path(directory)
    read_manifest(directory, "dataset")
    return sorted(p for p in directory.iterdir() if p.is_dir() and (p / MANIFEST).exists())


def read_dataset(directory):
    return [read_sample(p) for p in list_samples(directory)]


def describe(path):
    """Short human-readable summary of any artifact directory."""
    path = Path(path)
    m = read_manifest(path)
    lines = [f"{path}: {m['kind']} (schema {m['schema_version']})"]
    if m["kind"] == "sample":
        lines.append(f"  label={m['label']} mode={m['mode']}")
        for name, e in sorted(m["tensors"].items()):
            lines.append(f"  {name}: {e['dtype']} {tuple(e['shape'])}")
    elif m["kind"] == "checkpoint":
        lines.append(f"  parameters={len(m['parameters'])} values={m['count']}")
        lines.append(f"  config={json.dumps(m['config'], sort_keys=True)}")
    else:
        for key, value in sorted(m.items()):
            if key not in ("schema_version", "kind"):
                lines.append(f"  {key}: {json.dumps(value, sort_keys=True)}")
    return "\n".join(lines)


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
