"""Track data model and track-space transforms.

All stochastic functions take an explicit ``numpy.random.Generator``; the
module keeps no global random state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError
from .geometry import occlusion_mask, sample_depth

ACTIVE = 0
PASSIVE = 1
ROLE_NAMES = ("active", "passive")


@dataclass(frozen=True)
class TrackSet:
    positions: np.ndarray  # (N, T, 2) float64 pixel coordinates
    visible: np.ndarray  # (N, T) bool
    object_id: np.ndarray  # (N,) int
    role: np.ndarray  # (N,) int, ACTIVE or PASSIVE
    frame_size: tuple  # (H, W)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if pos.ndim != 3 or pos.shape[2] != 2 or vis.shape != pos.shape[:2]:
            raise ContractError(f"bad track shapes positions={pos.shape} visible={vis.shape}")
        obj = np.asarray(self.object_id, dtype=np.int64).reshape(pos.shape[0])
        role = np.asarray(self.role, dtype=np.int64).reshape(pos.shape[0])
        if not np.isin(role, (ACTIVE, PASSIVE)).all():
            raise ContractError("role labels must be active (0) or passive (1)")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visible", vis)
        object.__setattr__(self, "object_id", obj)
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "frame_size", tuple(int(x) for x in self.frame_size))

    @classmethod
    def empty(cls, frames, frame_size):
        return cls(np.zeros((0, frames, 2)), np.zeros((0, frames), bool),
                   np.zeros(0, np.int64), np.zeros(0, np.int64), frame_size)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def frames(self):
        return self.positions.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.intp)
        return TrackSet(self.positions[index], self.visible[index], self.object_id[index],
                        self.role[index], self.frame_size)

    def with_visible(self, visible):
        return replace(self, visible=np.asarray(visible, dtype=bool))

    def validate(self):
        """Check the stronger invariants that transforms are allowed to break mid-pipeline."""
        h, w = self.frame_size
        p = self.positions[self.visible]
        if p.size and not ((p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)).all():
            raise ContractError("visible track positions outside the frame")
        if len(self) and not self.visible[:, 0].all():
            raise ContractError("every track must be visible at frame 0")

    def object_centroids(self):
        """``{object_id: (T, 2)}`` mean of visible positions; NaN where none are visible."""
        out = {}
        for oid in np.unique(self.object_id):
            m = self.object_id == oid
            vis = self.visible[m][..., None]
            count = vis.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[int(oid)] = np.where(count > 0, (self.positions[m] * vis).sum(axis=0) / count, np.nan)
        return out


@dataclass(frozen=True)
class TrajectoryMap:
    embedding: np.ndarray  # (T, H, W, d_trk) float32
    occupancy: np.ndarray  # (T, H, W) bool


def decompose_roles(tracks):
    """Split into ``(active, passive)`` by role label."""
    return (tracks.subset(np.flatnonzero(tracks.role == ACTIVE)),
            tracks.subset(np.flatnonzero(tracks.role == PASSIVE)))


def causal_dropout(tracks, p, rng):
    """Keep only the active tracks when ``rng.random() < p``, otherwise only the passive ones.

    Exactly one uniform draw is consumed. An empty selection falls back to the
    other role.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"causal dropout probability {p} outside [0, 1]", "causal_p")
    active, passive = decompose_roles(tracks)
    keep_active = rng.random() < p
    chosen, other = (active, passive) if keep_active else (passive, active)
    return chosen if len(chosen) else other


def coarsen(tracks, mode="object", patch=None):
    """Share one mean displacement among grouped tracks, keeping their frame-0 anchors.

    ``mode`` is ``"object"`` (group by object id) or ``"patch"`` (group by
    object and ``patch`` x ``patch`` cell of the frame-0 position). A group's
    step is visible only when all its members are.
    """
    if len(tracks) == 0:
        raise ContractError("cannot coarsen an empty track set")
    if mode == "object":
        keys = tracks.object_id
    elif mode == "patch":
        if not patch or patch < 1:
            raise ConfigError("patch mode needs a positive cell size", "patch")
        cell = np.floor(tracks.positions[:, 0] / patch).astype(np.int64)
        keys = np.stack([tracks.object_id, cell[:, 0], cell[:, 1]], axis=1)
    else:
        raise ConfigError(f"unknown coarsening mode {mode!r}", "mode")
    _, group = np.unique(keys, axis=0, return_inverse=True)
    group = group.reshape(-1)
    anchors = tracks.positions[:, :1]
    disp = tracks.positions - anchors
    pos = np.empty_like(tracks.positions)
    vis = np.empty_like(tracks.visible)
    for g in np.unique(group):
        m = group == g
        pos[m] = anchors[m] + disp[m].mean(axis=0)
        vis[m] = tracks.visible[m].all(axis=0)
    return TrackSet(pos, vis, tracks.object_id, tracks.role, tracks.frame_size)


def degrade(tracks, drop_prob, truncate_prob, rng):
    """Randomly remove tracks and truncate survivors after a middle frame.

    Track 0 is never removed so at least one track survives. Truncation
    frames are drawn uniformly from ``[T // 4, 3T // 4]``.
    """
    for name, p in (("drop_prob", drop_prob), ("truncate_prob", truncate_prob)):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name}={p} outside [0, 1]", name)
    n, t = tracks.visible.shape
    if n == 0:
        return tracks
    keep = rng.random(n) >= drop_prob
    keep[0] = True
    truncate = rng.random(n) < truncate_prob
    cut = rng.integers(t // 4, 3 * t // 4 + 1, size=n)
    vis = tracks.visible.copy()
    frame = np.arange(t)
    vis[truncate] &= frame[None, :] <= cut[truncate, None]
    return tracks.with_visible(vis).subset(np.flatnonzero(keep))


def track_count(height, width, rng=None, low=500, high=2000, floor=16):
    """Training track budget, scaled from the reference 480x832 density.

    Without ``rng`` returns the inclusive ``(low, high)`` range at this size.
    """
    scale = height * width / (480 * 832)
    lo = max(floor, int(round(low * scale)))
    hi = max(lo, int(round(high * scale)))
    if rng is None:
        return lo, hi
    return int(rng.integers(lo, hi + 1))


def subsample(tracks, count, rng):
    if len(tracks) <= count:
        return tracks
    return tracks.subset(np.sort(rng.choice(len(tracks), size=count, replace=False)))


def position_encoding(points, d_trk, frame_size):
    """Sinusoidal code of ``(..., 2)`` pixel positions into ``d_trk`` channels.

    Each axis gets ``d_trk // 2`` channels on a geometric period ladder from
    4 px to ``max(H, W)`` px, alternating sine and cosine.
    """
    if d_trk % 2:
        raise ConfigError(f"d_trk must be even, got {d_trk}", "d_trk")
    n = d_trk // 2
    periods = np.geomspace(4.0, float(max(frame_size)), n) if n > 1 else np.array([4.0])
    phase = np.where(np.arange(n) % 2 == 0, 0.0, np.pi / 2)
    points = np.asarray(points, dtype=np.float64)
    ang = 2 * np.pi * points[..., None] / periods + phase  # (..., 2, n)
    return np.sin(ang).reshape(*points.shape[:-1], d_trk)


def rasterize(tracks, d_trk, depth0=None):
    """Per-pixel trajectory map: each visible step writes its track's frame-0 code.

    When several steps land on one pixel, the object nearest in ``depth0``
    wins (if given), then the lower object id, then the lower track index.
    """
    if d_trk % 2:
        raise ConfigError(f"d_trk must be even, got {d_trk}", "d_trk")
    h, w = tracks.frame_size
    t = tracks.frames
    emb = np.zeros((t, h, w, d_trk), np.float32)
    occ = np.zeros((t, h, w), bool)
    if len(tracks) == 0:
        return TrajectoryMap(emb, occ)
    vis = tracks.visible
    if depth0 is not None:
        vis = occlusion_mask(tracks, depth0)
        prio = sample_depth(depth0, tracks.positions[:, 0])
    else:
        prio = np.zeros(len(tracks))
    codes = position_encoding(tracks.positions[:, 0], d_trk, (h, w)).astype(np.float32)
    n_idx, t_idx = np.nonzero(vis)
    cells = np.floor(tracks.positions[n_idx, t_idx]).astype(np.int64)
    inside = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
    n_idx, t_idx, cells = n_idx[inside], t_idx[inside], cells[inside]
    flat = (t_idx * h + cells[:, 1]) * w + cells[:, 0]
    order = np.lexsort((n_idx, tracks.object_id[n_idx], prio[n_idx], flat))
    flat, n_idx = flat[order], n_idx[order]
    first = np.unique(flat, return_index=True)[1]
    emb.reshape(-1, d_trk)[flat[first]] = codes[n_idx[first]]
    occ.reshape(-1)[flat[first]] = True
    return TrajectoryMap(emb, occ)
