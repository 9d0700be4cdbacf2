"""Joint Euler sampling of both streams and condition assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, RuntimeAbort
from .geometry import CameraPath, DepthMap, occlusion_mask
from .model import LABELS, encode_camera, latent_to_clip
from .tracks import ACTIVE, PASSIVE, TrackSet, TrajectoryMap, decompose_roles, rasterize, subsample, track_count


@dataclass
class ConditionBundle:
    first_frame: np.ndarray  # (H, W, 3) in [0, 1]
    path: CameraPath
    depth0: DepthMap
    trajectory: TrajectoryMap | None = None
    label: int | None = None
    tracks: TrackSet | None = None  # the tracks that produced ``trajectory``, for inspection


def integrate(velocity, z_can, z_tar, steps):
    """Euler steps from t=1 to t=0 on a uniform grid: ``z <- z - dt * v(z, t)``."""
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    dt = 1.0 / steps
    for k in range(steps):
        t = 1.0 - k * dt
        v_can, v_tar = velocity(z_can, z_tar, t)
        z_can = z_can - dt * v_can
        z_tar = z_tar - dt * v_tar
        if not (torch.isfinite(z_can).all() and torch.isfinite(z_tar).all()):
            raise RuntimeAbort(f"non-finite latent after step {k + 1}/{steps} (t={t - dt:.4f})",
                               {"step": k + 1, "t": t - dt})
    return z_can, z_tar


def _bundle_tensors(bundle, cfg, dtype):
    cam = torch.as_tensor(encode_camera(bundle.first_frame, bundle.depth0, bundle.path, cfg), dtype=dtype)[None]
    trk = None
    if bundle.trajectory is not None and bundle.trajectory.occupancy.any():
        trk = torch.as_tensor(bundle.trajectory.embedding, dtype=dtype)[None]
    return cam, trk


@torch.no_grad()
def sample(model, bundle_can, bundle_tar, steps=20, seed=0, cross_view=True):
    """Generate ``(target_clip, canonical_clip)``, each ``(T, H, W, 3)`` float32."""
    if not bundle_can.path.is_identity():
        raise ContractError("canonical bundle must carry the identity camera path")
    if bundle_tar.trajectory is not None and bundle_tar.trajectory.occupancy.any():
        raise ContractError("target bundle must carry an empty trajectory condition")
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    cam_can, trk_can = _bundle_tensors(bundle_can, cfg, dtype)
    cam_tar, _ = _bundle_tensors(bundle_tar, cfg, dtype)
    label = bundle_can.label if bundle_can.label is not None else bundle_tar.label
    label = torch.tensor([model.null_label if label is None else label])
    gen = torch.Generator().manual_seed(int(seed))
    shape = (1, *cfg.grid, cfg.latent_dim)
    z_can = torch.randn(shape, generator=gen, dtype=dtype)
    z_tar = torch.randn(shape, generator=gen, dtype=dtype)

    def velocity(zc, zt, t):
        return model(zc, zt, torch.full((1,), t, dtype=dtype), cam_can, cam_tar, trk_can, None, label,
                     cross_view=cross_view)

    was_training = model.training
    model.eval()
    try:
        z_can, z_tar = integrate(velocity, z_can, z_tar, steps)
    finally:
        model.train(was_training)
    to_clip = lambda z: latent_to_clip(z[0].numpy(), cfg).astype(np.float32)
    return to_clip(z_tar), to_clip(z_can)


def select_tracks(tracks, which):
    active, passive = decompose_roles(tracks)
    return {"all": tracks, "active": active, "passive": passive, "none": tracks.subset([])}[which]


def sample_bundles(sample, cfg, which="active", seed=0, max_tracks=None):
    """Condition pair reproducing a dataset sample: its first frame, camera path and selected tracks.

    Tracks are subsampled to the training track budget unless ``max_tracks``
    says otherwise.
    """
    rng = np.random.default_rng([seed, 0xC0DE])
    tracks = select_tracks(sample.tracks, which)
    h, w = tracks.frame_size
    budget = track_count(h, w, rng) if max_tracks is None else max_tracks
    tracks = subsample(tracks, budget, rng)
    label = LABELS.index(sample.label)
    first = sample.canonical_clip[0]
    identity = CameraPath.identity(sample.frames, sample.path.intrinsics)
    traj = rasterize(tracks, cfg.d_trk, sample.depth0) if len(tracks) else None
    can = ConditionBundle(first, identity, sample.depth0, traj, label, tracks)
    tar = ConditionBundle(first, sample.path, sample.depth0, None, label, None)
    return can, tar


@dataclass
class Stroke:
    anchor: tuple  # frame-0 pixel (u, v)
    displacements: np.ndarray  # (T, 2) offsets from the anchor; row 0 is zero
    role: str = "active"


def expand_strokes(strokes, object_ids, frames, frame_size):
    """One track per mask pixel of each stroked object, all sharing the stroke displacement.

    ``object_ids`` is an ``(H, W)`` map with object indices (negative for
    background). A stroke anchored on background yields a single track.
    """
    h, w = frame_size
    pos, obj, role = [], [], []
    for k, s in enumerate(strokes):
        u, v = map(float, s.anchor)
        if not (0 <= u < w and 0 <= v < h):
            raise ContractError(f"stroke {k} anchor ({u}, {v}) outside the {w}x{h} image")
        disp = np.asarray(s.displacements, dtype=np.float64)
        if disp.shape != (frames, 2):
            raise ContractError(f"stroke {k} needs ({frames}, 2) displacements, got {disp.shape}")
        oid = int(object_ids[int(v), int(u)])
        if oid >= 0:
            rows, cols = np.nonzero(object_ids == oid)
            anchors = np.stack([cols + 0.5, rows + 0.5], axis=1)
        else:
            anchors = np.array([[u, v]])
            oid = 1000 + k
        pos.append(anchors[:, None, :] + disp[None])
        obj.append(np.full(len(anchors), oid))
        role.append(np.full(len(anchors), ACTIVE if s.role == "active" else PASSIVE))
    if not pos:
        return TrackSet.empty(frames, frame_size)
    pos = np.concatenate(pos)
    vis = (pos[..., 0] >= 0) & (pos[..., 0] < w) & (pos[..., 1] >= 0) & (pos[..., 1] < h)
    vis[:, 0] = True
    return TrackSet(pos, vis, np.concatenate(obj), np.concatenate(role), frame_size)


def prepare_user_condition(strokes, depth0, object_ids, path, first_frame, cfg, label=None,
                           max_tracks=None, seed=0):
    """Turn user strokes and a camera path into ``(canonical, target)`` bundles."""
    frames = len(path)
    tracks = expand_strokes(strokes, object_ids, frames, depth0.values.shape)
    if max_tracks is not None:
        tracks = subsample(tracks, max_tracks, np.random.default_rng(seed))
    if len(tracks):
        tracks = tracks.with_visible(occlusion_mask(tracks, depth0))
        traj = rasterize(tracks, cfg.d_trk, depth0)
    else:
        traj = TrajectoryMap(np.zeros((frames, *depth0.values.shape, cfg.d_trk), np.float32),
                             np.zeros((frames, *depth0.values.shape), bool))
    identity = CameraPath.identity(frames, path.intrinsics)
    can = ConditionBundle(first_frame, identity, depth0, traj, label, tracks)
    tar = ConditionBundle(first_frame, path, depth0, None, label, None)
    return can, tar
