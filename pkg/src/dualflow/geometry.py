"""Pinhole camera geometry.

Conventions used throughout the package:

* Pixel coordinates are continuous ``(u, v)`` with ``u`` along the width.
  Pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)`` so its center is
  ``(col + 0.5, row + 0.5)`` and the image support is ``[0, W) x [0, H)``.
* Poses are world-to-camera: ``x_cam = R @ x_world + t``. Frame 0 of every
  path is the identity, so the world frame is the first camera frame.
* Geometry is float64 everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BehindCameraError, ContractError, EmptyWarpError, InvalidDepthError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def centered(cls, width, height, focal):
        return cls(float(focal), float(focal), width / 2.0, height / 2.0, int(width), int(height))

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ContractError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ContractError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        """Map world points ``(..., 3)`` into this camera's frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return CameraPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @property
    def center(self):
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraPath:
    """Per-frame world-to-camera poses sharing one set of intrinsics."""

    rotations: np.ndarray  # (T, 3, 3)
    translations: np.ndarray  # (T, 3)
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=np.float64)
        t = np.asarray(self.translations, dtype=np.float64)
        if r.ndim != 3 or r.shape[1:] != (3, 3) or t.shape != (r.shape[0], 3):
            raise ContractError(f"bad path shapes {r.shape}, {t.shape}")
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "translations", t)

    @classmethod
    def from_poses(cls, poses, intrinsics):
        return cls(np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]), intrinsics)

    @classmethod
    def identity(cls, frames, intrinsics):
        return cls(np.tile(np.eye(3), (frames, 1, 1)), np.zeros((frames, 3)), intrinsics)

    def __len__(self):
        return self.rotations.shape[0]

    def pose(self, i):
        return CameraPose(self.rotations[i], self.translations[i])

    def is_identity(self, tol=0.0):
        return (np.abs(self.rotations - np.eye(3)).max() <= tol
                and np.abs(self.translations).max(initial=0.0) <= tol)


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.validity, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise ContractError(f"depth values {v.shape} and validity {m.shape} must be equal 2-D shapes")
        if m.any() and not (np.isfinite(v[m]).all() and (v[m] > 0).all()):
            raise InvalidDepthError("valid depth entries must be finite and positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "validity", m)

    @classmethod
    def dense(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values) & (values > 0))


def unproject(intr, pixel, depth):
    """Lift pixel(s) ``(..., 2)`` with depth ``(...)`` to camera-frame points ``(..., 3)``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if not (np.isfinite(depth).all() and (depth > 0).all()):
        raise InvalidDepthError("depth must be finite and positive")
    x = depth * (pixel[..., 0] - intr.cx) / intr.fx
    y = depth * (pixel[..., 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def project(intr, point):
    """Project camera-frame point(s) ``(..., 3)`` to pixels ``(..., 2)``. No clipping."""
    point = np.asarray(point, dtype=np.float64)
    z = point[..., 2]
    if not (z > 0).all():
        raise BehindCameraError("point at or behind the camera plane")
    return np.stack([intr.fx * point[..., 0] / z + intr.cx, intr.fy * point[..., 1] / z + intr.cy], axis=-1)


def sample_depth(depth, pixels):
    """Bilinear lookup of ``depth.values`` at continuous pixel coordinates ``(..., 2)``."""
    pixels = np.asarray(pixels, dtype=np.float64)
    coords = np.stack([pixels[..., 1].ravel() - 0.5, pixels[..., 0].ravel() - 0.5])
    out = ndimage.map_coordinates(depth.values, coords, order=1, mode="nearest")
    return out.reshape(pixels.shape[:-1])


def relative_pose(path, u, ref=0):
    """Pose taking camera-``u`` coordinates to camera-``ref`` coordinates (C_ref · C_u⁻¹)."""
    return path.pose(ref).compose(path.pose(u).inverse())


def canonicalize_track(track, depths, path, intr, visible=None):
    """Reproject a per-frame track observed under ``path`` into the frame-0 image plane.

    Returns ``(positions, visible)``. Invisible input steps pass through
    unchanged; steps that land behind the frame-0 camera come back invisible
    with their input position.
    """
    track = np.asarray(track, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    n = track.shape[0]
    if len(path) != n or depths.shape != (n,):
        raise ContractError(f"track length {n} must equal path length {len(path)} and depth count")
    visible = np.ones(n, bool) if visible is None else np.asarray(visible, dtype=bool).copy()
    out = track.copy()
    for u in np.flatnonzero(visible):
        if not (np.isfinite(depths[u]) and depths[u] > 0):
            raise InvalidDepthError(f"invalid depth {depths[u]} at visible step {u}")
        p = relative_pose(path, u).apply(unproject(intr, track[u], depths[u]))
        if p[2] <= 0:
            visible[u] = False
            continue
        out[u] = project(intr, p)
    return out, visible


def pixel_centers(height, width):
    """``(H, W, 2)`` array of pixel-center coordinates ``(u, v)``."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    return np.stack([u, v], axis=-1)


def warp_first_frame(image, depth0, intr, target_pose):
    """Forward-splat ``image`` into the view of ``target_pose``.

    Every valid source pixel is lifted with its depth, moved rigidly and
    projected; the nearest target depth wins each pixel (ties go to the
    lower source index). Returns ``(warped, validity)`` with holes zeroed.
    """
    image = np.asarray(image)
    h, w = depth0.values.shape
    if image.shape[:2] != (h, w):
        raise ContractError(f"image {image.shape[:2]} and depth {depth0.values.shape} differ")
    src = np.flatnonzero(depth0.validity.ravel())
    if src.size == 0:
        raise EmptyWarpError("depth map has no valid pixels")
    pts = unproject(intr, pixel_centers(h, w).reshape(-1, 2)[src], depth0.values.ravel()[src])
    pts = target_pose.apply(pts)
    front = pts[:, 2] > 0
    src, pts = src[front], pts[front]
    warped = np.zeros_like(image)
    validity = np.zeros((h, w), bool)
    if src.size == 0:
        raise EmptyWarpError("all content lands behind the target camera")
    uv = project(intr, pts)
    cols = np.floor(uv[:, 0]).astype(np.int64)
    rows = np.floor(uv[:, 1]).astype(np.int64)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    if not inside.any():
        raise EmptyWarpError("no content lands inside the target image")
    dst = rows[inside] * w + cols[inside]
    z = pts[inside, 2]
    src = src[inside]
    order = np.lexsort((src, z, dst))
    dst, src = dst[order], src[order]
    first = np.unique(dst, return_index=True)[1]
    flat = warped.reshape(h * w, -1)
    flat[dst[first]] = image.reshape(h * w, -1)[src[first]]
    validity.ravel()[dst[first]] = True
    return warped, validity


def occlusion_mask(tracks, depth0):
    """Visibility flags after resolving same-pixel collisions between objects.

    ``tracks`` is any object with ``positions (N, T, 2)``, ``visible (N, T)``
    and ``object_id (N,)``. At each frame and pixel holding steps from two or
    more objects, only the object whose track has the smallest frame-0 depth
    keeps its steps; equal depths go to the lower object id.
    """
    pos = np.asarray(tracks.positions, dtype=np.float64)
    vis = np.asarray(tracks.visible, dtype=bool).copy()
    obj = np.asarray(tracks.object_id)
    n, t = vis.shape
    if n == 0:
        return vis
    d0 = sample_depth(depth0, pos[:, 0])
    idx_n, idx_t = np.nonzero(vis)
    cells = np.floor(pos[idx_n, idx_t]).astype(np.int64)
    keys = (idx_t * 1_000_003 + cells[:, 1]) * 1_000_003 + cells[:, 0]
    order = np.lexsort((obj[idx_n], d0[idx_n], keys))
    keys_s, n_s, t_s = keys[order], idx_n[order], idx_t[order]
    starts = np.flatnonzero(np.r_[True, keys_s[1:] != keys_s[:-1]])
    winner = np.repeat(obj[n_s[starts]], np.diff(np.r_[starts, keys_s.size]))
    lose = obj[n_s] != winner
    vis[n_s[lose], t_s[lose]] = False
    return vis
