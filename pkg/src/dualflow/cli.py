"""Command-line pipeline: gen-data, train, sample, eval, inspect.

Exit status: 0 ok, 1 invalid input, 2 usage, 3 runtime abort. Failures print
one JSON line on stderr with ``error``, ``field`` and ``reason``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import io
from .errors import ConfigError, ContractError, MetricUndefinedError, RuntimeAbort
from .metrics import camera_error, causality_probe, epe, summary_table
from .model import ModelConfig
from .sampling import Stroke, prepare_user_condition, sample, sample_bundles
from .training import TrainConfig, train
from .world import WorldConfig, dataset_specs, fiducials, make_sample


def _build(cls, data, path):
    """Instantiate a config dataclass from a dict, naming unknown or ill-typed fields."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}", f"{path}.{key}")
    for f in dataclasses.fields(cls):
        if f.name in data and f.type in ("int", "float") and not isinstance(data[f.name], (int, float)):
            raise ConfigError(f"expected a number, got {data[f.name]!r}", f"{path}.{f.name}")
    try:
        return cls(**data)
    except ConfigError as exc:
        if exc.field and not exc.field.startswith(path):
            exc.field = f"{path}.{exc.field}"
        raise


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found", "--config")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", "--config") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "--config")
    return data


def _check_keys(data, allowed, path="config"):
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field {key!r}", f"{path}.{key}")


def _export_png(directory, clip):
    from PIL import Image

    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip):
        Image.fromarray(np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(directory / f"{t:03d}.png")


def cmd_gen_data(args):
    raw = _load_config(args.config)
    cfg = _build(WorldConfig, raw, "config")
    count = 8 if args.count is None else args.count
    if count < 0:
        raise ConfigError("count must be non-negative", "--count")
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = io.RunManifest("gen-data", cfg.to_dict(), seed, artifacts={"count": count})
    names = []
    for i, spec in enumerate(dataset_specs(count, seed, cfg)):
        name = f"sample_{i:05d}"
        io.write_sample(out / name, make_sample(spec))
        names.append(name)
    run.finished = time.time()
    run.artifacts["samples"] = names
    run.write(out, kind="dataset")
    print(f"wrote {count} samples to {out}")


def _train_configs(raw, seed, steps):
    _check_keys(raw, {"train", "model"})
    tdict = dict(raw.get("train") or {})
    if seed is not None:
        tdict["seed"] = seed
    if steps is not None:
        tdict["iterations"] = steps
    return _build(TrainConfig, tdict, "config.train"), _build(ModelConfig, raw.get("model"), "config.model")


def cmd_train(args):
    raw = _load_config(args.config)
    tcfg, mcfg = _train_configs(raw, args.seed, args.steps)
    samples = io.read_dataset(args.data)
    if not samples:
        raise ContractError("empty dataset")
    for s in samples:
        if s.canonical_clip.shape[:3] != (mcfg.frames, mcfg.height, mcfg.width):
            raise ConfigError(f"dataset clips are {s.canonical_clip.shape[:3]}, model expects "
                              f"{(mcfg.frames, mcfg.height, mcfg.width)}", "config.model.frames")
    out = Path(args.out)
    run = io.RunManifest("train", {"train": tcfg.to_dict(), "model": mcfg.to_dict(), "data": str(args.data)},
                         tcfg.seed)
    result = train(samples, tcfg, mcfg, out_dir=out)
    run.finished = time.time()
    run.artifacts = {"checkpoint": "checkpoint", "metrics": "metrics.jsonl", "counters": result.counters}
    run.write(out, kind="run")
    print(f"trained {tcfg.iterations} iterations, final loss {result.losses[-1]:.4f}; checkpoint in {out}")


@dataclasses.dataclass
class SampleConfig:
    which: str = "active"  # tracks kept from each source sample: active, passive, all, none
    steps: int = 20
    cross_view: bool = True
    max_tracks: int | None = None
    samples: list | None = None  # sample directory names; None takes all
    strokes: list | None = None  # user strokes replace dataset tracks when given
    label: str | None = None

    def __post_init__(self):
        if self.which not in ("active", "passive", "all", "none"):
            raise ConfigError(f"unknown track selection {self.which!r}", "which")
        if self.steps < 1:
            raise ConfigError("steps must be positive", "steps")


def _user_bundles(src, scfg, model_cfg, seed):
    from .model import LABELS

    strokes = []
    for i, st in enumerate(scfg.strokes):
        if not isinstance(st, dict) or "anchor" not in st or "displacements" not in st:
            raise ConfigError("stroke needs anchor and displacements", f"config.strokes[{i}]")
        strokes.append(Stroke(tuple(st["anchor"]), np.asarray(st["displacements"], float), st.get("role", "active")))
    label = scfg.label if scfg.label is not None else src.label
    if label not in LABELS:
        raise ConfigError(f"unknown label {label!r}", "config.label")
    try:
        return prepare_user_condition(strokes, src.depth0, src.ids0, src.path, src.canonical_clip[0], model_cfg,
                                      label=LABELS.index(label), max_tracks=scfg.max_tracks, seed=seed)
    except ConfigError:
        raise
    except ContractError as exc:
        raise ConfigError(str(exc), "config.strokes") from exc


def cmd_sample(args):
    raw = _load_config(args.config)
    if args.steps is not None:
        raw = {**raw, "steps": args.steps}
    scfg = _build(SampleConfig, raw, "config")
    seed = 0 if args.seed is None else args.seed
    model = io.load_model(args.checkpoint)
    paths = io.list_samples(args.data)
    if scfg.samples is not None:
        by_name = {p.name: p for p in paths}
        missing = [n for n in scfg.samples if n not in by_name]
        if missing:
            raise ConfigError(f"samples not in dataset: {missing}", "config.samples")
        paths = [by_name[n] for n in scfg.samples]
    if args.count is not None:
        paths = paths[: args.count]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = io.RunManifest("sample", {**dataclasses.asdict(scfg), "checkpoint": str(args.checkpoint),
                                    "data": str(args.data)}, seed)
    torch.set_num_threads(1)
    names = []
    for k, path in enumerate(paths):
        src = io.read_sample(path)
        clip_seed = seed + k
        if scfg.strokes:
            can, tar = _user_bundles(src, scfg, model.cfg, clip_seed)
        else:
            can, tar = sample_bundles(src, model.cfg, scfg.which, seed=clip_seed, max_tracks=scfg.max_tracks)
        target, canonical = sample(model, can, tar, steps=scfg.steps, seed=clip_seed, cross_view=scfg.cross_view)
        d = out / path.name
        d.mkdir(parents=True, exist_ok=True)
        entries = {"target_clip": io.write_tensor(d, "target_clip", target),
                   "canonical_clip": io.write_tensor(d, "canonical_clip", canonical)}
        _export_png(d / "target_png", target)
        _export_png(d / "canonical_png", canonical)
        io._dump(d / io.MANIFEST, {"schema_version": io.SCHEMA_VERSION, "kind": "generated", "source": path.name,
                                   "which": "strokes" if scfg.strokes else scfg.which, "seed": clip_seed,
                                   "steps": scfg.steps, "tensors": entries})
        names.append(path.name)
    run.finished = time.time()
    run.artifacts = {"clips": names}
    run.write(out, kind="generated-set")
    print(f"generated {len(names)} clips in {out}")


def read_generated(directory):
    d = Path(directory)
    m = io.read_manifest(d, "generated")
    return m, io.read_tensor(d, m["tensors"]["target_clip"]), io.read_tensor(d, m["tensors"]["canonical_clip"])


def _metric(fn):
    try:
        return fn(), None
    except MetricUndefinedError as exc:
        return None, str(exc)


def evaluate_clip(name, target, canonical, src, which):
    """One report record: metrics on the generated clip and on the ground-truth render (the floor)."""
    fid = fiducials(src.spec)
    rec = {"name": name, "which": which}
    notes = []
    for prefix, clip in (("", target), ("floor_", src.target_clip)):
        e, err = _metric(lambda: epe(clip, src.target_tracks, src.object_colors))
        rec[f"{prefix}epe_px"] = None if e is None else e.median
        rec[f"{prefix}epe_missed"] = None if e is None else e.missed
        if err:
            notes.append(f"{prefix}epe: {err}")
        c, err = _metric(lambda: camera_error(clip, src.path, fid))
        rec[f"{prefix}rot_deg"] = None if c is None else c.rotation_deg
        rec[f"{prefix}trans"] = None if c is None else c.translation
        if err:
            notes.append(f"{prefix}camera: {err}")
    e, err = _metric(lambda: epe(canonical, src.tracks, src.object_colors))
    rec["canonical_epe_px"] = None if e is None else e.median
    rec["trans_frac"] = None if rec["trans"] is None else rec["trans"] / src.spec.bg_depth
    probe_mode = {"active": "forward", "passive": "inverse"}.get(which)
    if probe_mode:
        clip, view = (target, "target") if probe_mode == "forward" else (canonical, "canonical")
        p, err = _metric(lambda: causality_probe(clip, src, probe_mode, view=view))
        rec["probe"] = None if p is None else p.to_dict()
        if err:
            notes.append(f"probe: {err}")
    rec["status"] = "ok" if not notes else "partial"
    rec["notes"] = notes
    return rec


def _median(records, key):
    vals = [r[key] for r in records if r.get(key) is not None]
    return float(np.median(vals)) if vals else None


def cmd_eval(args):
    gen = Path(args.generated)
    io.read_manifest(gen, "generated-set")
    clips = sorted(p for p in gen.iterdir() if (p / io.MANIFEST).exists())
    report = Path(args.out) if args.out else gen / "report.jsonl"
    report.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for d in clips:
        m, target, canonical = read_generated(d)
        src = io.read_sample(Path(args.data) / m["source"])
        records.append(evaluate_clip(d.name, target, canonical, src, m["which"]))
    keys = ("epe_px", "rot_deg", "trans", "trans_frac", "floor_epe_px", "floor_rot_deg", "floor_trans")
    summary = {"clips": len(records), **{f"median_{k}": _median(records, k) for k in keys}}
    lines = [json.dumps(r, sort_keys=True) for r in records] + [json.dumps({"summary": summary}, sort_keys=True)]
    io.atomic_write_text(report, "\n".join(lines) + "\n")
    table = summary_table(records)
    io.atomic_write_text(report.with_suffix(".txt"), table + "\n")
    print(table)
    print(json.dumps({"summary": summary}, sort_keys=True))


def cmd_inspect(args):
    path = Path(args.path)
    print(io.describe(path))
    m = io.read_manifest(path)
    if m["kind"] in ("dataset", "generated-set"):
        for p in sorted(q for q in path.iterdir() if (q / io.MANIFEST).exists()):
            print(f"  {p.name}")


def build_parser():
    p = argparse.ArgumentParser(prog="dualflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("data")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="training iterations")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate clips from dataset conditions")
    s.add_argument("data")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--steps", type=int, help="Euler steps")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score generated clips against their sources")
    e.add_argument("generated")
    e.add_argument("data")
    e.add_argument("--out", help="report path (default GENERATED/report.jsonl)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print manifests and tensor shapes")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def _fail(kind, reason, field=None):
    print(json.dumps({"error": kind, "field": field, "reason": reason}), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        args.func(args)
    except ContractError as exc:
        _fail(type(exc).__name__, str(exc), getattr(exc, "field", None))
        return 1
    except RuntimeAbort as exc:
        _fail("RuntimeAbort", str(exc))
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
