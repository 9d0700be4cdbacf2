"""Controllability metrics computed from clips alone.

Objects and fiducials carry unique flat colors, so tracking reduces to
color-mass centroids. Every metric reports a median.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation, uniform_filter
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import MetricUndefinedError
from .geometry import pixel_centers, project
from .world import FIDUCIAL_COLORS, OBJECT_COLORS

COLOR_TOL = 0.3
PALETTE = OBJECT_COLORS + FIDUCIAL_COLORS
MIN_PIXELS = 2
SURROUND = 5  # window for the local surround color
DEADZONE = 0.05  # mixing fractions below this are treated as noise
MIX_RESIDUAL = 0.25  # off-axis chroma, relative, beyond which a pixel mixes another color


def color_mask(frame, color, tol=COLOR_TOL):
    return np.linalg.norm(np.asarray(frame, np.float64) - np.asarray(color, np.float64), axis=-1) < tol


def _chroma(x):
    return x - x.mean(-1, keepdims=True)


def _unmix(ch, cc, palette):
    """Fraction of chroma ``cc`` in pixels that blend it with one other palette color.

    Chroma lives in a plane, so each pair of chromatic colors splits a pixel
    uniquely; the first pair giving fractions in ``[0, 1]`` wins. Pixels that
    no pair explains get zero.
    """
    out = np.zeros(ch.shape[:-1])
    done = np.zeros(ch.shape[:-1], bool)
    for other in palette:
        ck = _chroma(np.asarray(other, np.float64))
        basis = np.stack([cc, ck], 1)  # (3, 2)
        if np.linalg.matrix_rank(basis, tol=1e-6) < 2:
            continue
        ab = ch @ np.linalg.pinv(basis).T
        fit = np.linalg.norm(ch - ab @ basis.T, axis=-1) < 1e-3 + MIX_RESIDUAL * 0.1
        ok = ~done & fit & (ab >= -1e-6).all(-1) & (ab.sum(-1) <= 1 + 1e-6)
        out = np.where(ok, ab[..., 0], out)
        done |= ok
    return out


def color_mass(frame, color, tol=COLOR_TOL, min_pixels=MIN_PIXELS, palette=None):
    """Soft ``(H, W)`` membership of ``color``, or None below ``min_pixels`` core pixels.

    Pixels within ``tol`` form the core. Around it each pixel weighs its mixing
    fraction of ``color``. For chromatic colors the fraction comes from the
    chroma component, which a gray background does not contribute to; pixels
    mixing in some other chromatic color are left out. Achromatic colors fall
    back to unmixing against the local surround. Pixels blending two chromatic
    colors are split when the other one is in ``palette`` (by default every
    synthetic-world albedo).
    """
    frame = np.asarray(frame, np.float64)
    color = np.asarray(color, np.float64)
    core = color_mask(frame, color, tol)
    if core.sum() < min_pixels:
        return None
    near = binary_dilation(core)
    cc = _chroma(color)
    if cc @ cc > 1e-6:
        ch = _chroma(frame)
        frac = ch @ cc / (cc @ cc)
        resid = np.linalg.norm(ch - frac[..., None] * cc, axis=-1)
        mixed = resid >= MIX_RESIDUAL * np.sqrt(cc @ cc)
        frac = np.where(mixed, _unmix(ch, cc, PALETTE if palette is None else palette) if mixed.any() else 0.0, frac)
    else:
        ring = (binary_dilation(near) & ~near).astype(np.float64)
        weight = uniform_filter(ring, SURROUND)
        local = np.stack([uniform_filter(frame[..., c] * ring, SURROUND) for c in range(3)], -1)
        fallback = np.median(frame[ring > 0], axis=0) if ring.any() else np.full(3, 0.45)
        surround = np.where(weight[..., None] > 1e-9, local / np.maximum(weight, 1e-9)[..., None], fallback)
        d = color - surround
        frac = ((frame - surround) * d).sum(-1) / np.maximum((d * d).sum(-1), 1e-12)
    frac = np.clip(frac, 0.0, 1.0)
    frac[frac < DEADZONE] = 0.0
    return np.where(near | core, frac, 0.0)


def centroid(frame, color, tol=COLOR_TOL, min_pixels=MIN_PIXELS, palette=None):
    """Color-mass centroid ``(u, v)`` in pixel coordinates, or None if undetected."""
    mass = color_mass(frame, color, tol, min_pixels, palette)
    if mass is None:
        return None
    pix = pixel_centers(*mass.shape)
    return (pix * mass[..., None]).sum((0, 1)) / mass.sum()


def centroid_track(clip, color, **kw):
    """``(T, 2)`` centroids with NaN where the color is not detected."""
    out = np.full((len(clip), 2), np.nan)
    for t, frame in enumerate(clip):
        c = centroid(frame, color, **kw)
        if c is not None:
            out[t] = c
    return out


@dataclass
class EPEResult:
    median: float
    errors: list
    missed: int
    compared: int


def epe(clip, gt_tracks, colors):
    """Median end-point error between detected and ground-truth object centroids.

    Ground truth per object and frame is the mean of its visible track
    positions. Steps where an object is not detected are skipped and counted.
    """
    gt = gt_tracks.object_centroids()
    errors, missed = [], 0
    for oid, gt_c in gt.items():
        det = centroid_track(clip, colors[oid])
        for t in range(len(clip)):
            if np.isnan(gt_c[t]).any():
                continue
            if np.isnan(det[t]).any():
                missed += 1
                continue
            errors.append(float(np.linalg.norm(det[t] - gt_c[t])))
    if not errors:
        raise MetricUndefinedError("no object detected in any frame")
    return EPEResult(float(np.median(errors)), errors, missed, len(errors) + missed)


def _touches_border(mass):
    return bool(mass[0].any() or mass[-1].any() or mass[:, 0].any() or mass[:, -1].any())


def _square_corners(centers, half):
    """``(N, 4, 3)`` corners, in order, of axis-aligned squares on a plane of constant z."""
    steps = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], np.float64) * half
    corners = np.repeat(centers[:, None, :], 4, axis=1).copy()
    corners[..., :2] += steps
    return corners


def polygon_moments(poly):
    """Area and area centroid of simple polygons ``(..., K, 2)``."""
    x, y = poly[..., 0], poly[..., 1]
    xn, yn = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    cross = x * yn - xn * y
    area = cross.sum(-1) / 2
    cx = ((x + xn) * cross).sum(-1) / (6 * area)
    cy = ((y + yn) * cross).sum(-1) / (6 * area)
    return np.abs(area), np.stack([cx, cy], -1)


def _projected_squares(rot, trans, centers, half, intr):
    corners = _square_corners(centers, half)
    cam = corners @ rot.T + trans
    return cam, project(intr, cam.reshape(-1, 3)).reshape(corners.shape[:2] + (2,))


def solve_planar_pnp(world, pixels, intr, half_size=None):
    """Pose from >= 4 coplanar points on a plane ``z = const`` with known intrinsics.

    A direct linear homography estimate is orthonormalized and then refined by
    minimizing reprojection error. With ``half_size`` the points are centers of
    squares of that half extent and ``pixels`` are their image area centroids,
    which differ from projected centers under perspective.
    """
    world = np.asarray(world, np.float64)
    pixels = np.asarray(pixels, np.float64)
    z0 = world[0, 2]
    kinv = np.linalg.inv(intr.matrix)
    xn = (np.column_stack([pixels, np.ones(len(pixels))]) @ kinv.T)[:, :2]
    rows = []
    for (x, y), (u, v) in zip(world[:, :2], xn):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    h = np.linalg.svd(np.asarray(rows))[2][-1].reshape(3, 3)
    h /= np.mean([np.linalg.norm(h[:, 0]), np.linalg.norm(h[:, 1])])
    if h[2, 2] < 0:
        h = -h
    r1, r2 = h[:, 0], h[:, 1]
    u_, _, vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    rot = u_ @ np.diag([1, 1, np.linalg.det(u_ @ vt)]) @ vt
    trans = h[:, 2] - z0 * rot[:, 2]

    def residual(p):
        r = Rotation.from_rotvec(p[:3]).as_matrix()
        pts = world if half_size is None else _square_corners(world, half_size)
        cam = pts @ r.T + p[3:]
        if (cam[..., 2] <= 1e-6).any():
            return np.full(2 * len(world), 1e3)
        proj = project(intr, cam.reshape(-1, 3)).reshape(cam.shape[:-1] + (2,))
        pred = proj if half_size is None else polygon_moments(proj)[1]
        return (pred - pixels).ravel()

    x0 = np.concatenate([Rotation.from_matrix(rot).as_rotvec(), trans])
    sol = least_squares(residual, x0, method="lm", xtol=1e-14, ftol=1e-14)
    return Rotation.from_rotvec(sol.x[:3]).as_matrix(), sol.x[3:]


def rotation_angle_deg(r_a, r_b):
    """Geodesic angle between two rotations; stays accurate near zero unlike an arccos of the trace."""
    return float(np.degrees(Rotation.from_matrix(r_a @ r_b.T).magnitude()))


@dataclass
class CameraErrorResult:
    rotation_deg: float
    translation: float
    per_frame: list = field(default_factory=list)
    frames_used: int = 0


def camera_error(clip, gt_path, fid, min_frames=3, min_coverage=0.75):
    """Median rotation (degrees) and translation error of poses recovered from fiducials.

    A frame counts only when all four fiducials are detected, none touches the
    image border, and each carries at least ``min_coverage`` of the mass its
    square should have under the recovered pose (otherwise it is occluded).
    """
    intr = gt_path.intrinsics
    per_frame = []
    for t, frame in enumerate(clip):
        masses = [color_mass(frame, color) for color in fid.colors]
        if any(m is None or _touches_border(m) for m in masses):
            continue
        pix = pixel_centers(*masses[0].shape)
        pts = np.array([(pix * m[..., None]).sum((0, 1)) / m.sum() for m in masses])
        rot, trans = solve_planar_pnp(fid.centers, pts, intr, fid.half_size)
        area = polygon_moments(_projected_squares(rot, trans, fid.centers, fid.half_size, intr)[1])[0]
        if any(m.sum() < min_coverage * a for m, a in zip(masses, area)):
            continue
        gt = gt_path.pose(t)
        per_frame.append((t, rotation_angle_deg(rot, gt.rotation), float(np.linalg.norm(trans - gt.translation))))
    if len(per_frame) < min_frames:
        raise MetricUndefinedError(f"only {len(per_frame)} frames with all fiducials usable (need {min_frames})")
    arr = np.array([(r, tr) for _, r, tr in per_frame])
    return CameraErrorResult(float(np.median(arr[:, 0])), float(np.median(arr[:, 1])), per_frame, len(per_frame))


def _pixels(frame, color):
    rows, cols = np.nonzero(color_mask(frame, color))
    return np.column_stack([cols + 0.5, rows + 0.5])


def contact_frame(clip, color_a, color_b, reach=2.0):
    """First frame where the two color masks come within ``reach`` pixels, or None."""
    for t, frame in enumerate(clip):
        a, b = _pixels(frame, color_a), _pixels(frame, color_b)
        if len(a) and len(b):
            d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).min()
            if d <= reach:
                return t
    return None


def onset_frame(track, tol=0.5):
    """First frame whose centroid sits more than ``tol`` px from its frame-0 position."""
    if np.isnan(track[0]).any():
        return None
    d = np.linalg.norm(track - track[0], axis=1)
    moved = np.flatnonzero(np.nan_to_num(d, nan=0.0) > tol)
    return int(moved[0]) if moved.size else None


def _displacement(track):
    ok = ~np.isnan(track).any(axis=1)
    if ok.sum() < 2:
        return None
    idx = np.flatnonzero(ok)
    return track[idx[-1]] - track[idx[0]]


@dataclass
class CausalityReport:
    mode: str
    magnitude: float
    cosine: float | None = None
    gt_magnitude: float | None = None
    contact_frame: int | None = None
    onset_frame: int | None = None
    contact_precedes_onset: bool | None = None

    def to_dict(self):
        return asdict(self)


def causality_probe(clip, sample, mode, view="target"):
    """Forward: passive response to active-only conditioning. Inverse: active motion behind passive-only conditioning.

    Ground-truth displacement comes from the sample's tracks in ``view``. The
    inverse contact/onset test is only meaningful on a fixed-camera clip
    (``view="canonical"``): under a moving camera the passive object appears to
    move before anything touches it.
    """
    spec = sample.spec
    a = spec.active_index
    passive = [i for i, o in enumerate(spec.objects) if o.role == "passive"]
    if a is None or not passive:
        raise MetricUndefinedError("probe needs one active and at least one passive object")
    gt_tracks = sample.target_tracks if view == "target" else sample.tracks
    gt = gt_tracks.object_centroids()
    gt_disp = {i: _displacement(gt[i]) for i in passive}
    p = max(passive, key=lambda i: 0.0 if gt_disp[i] is None else float(np.linalg.norm(gt_disp[i])))
    colors = sample.object_colors
    if mode == "forward":
        det = _displacement(centroid_track(clip, colors[p]))
        if det is None:
            raise MetricUndefinedError("passive object not detected")
        g = gt_disp[p]
        g_mag = float(np.linalg.norm(g)) if g is not None else 0.0
        mag = float(np.linalg.norm(det))
        cos = float(det @ g / (mag * g_mag)) if mag > 0 and g_mag > 0 else None
        return CausalityReport("forward", mag, cos, g_mag)
    if mode == "inverse":
        track_a = centroid_track(clip, colors[a])
        det = _displacement(track_a)
        if det is None:
            raise MetricUndefinedError("active object not detected")
        g = _displacement(gt[a])
        contact = contact_frame(clip, colors[a], colors[p])
        onset = onset_frame(centroid_track(clip, colors[p]))
        precedes = contact is not None and onset is not None and contact < onset
        return CausalityReport("inverse", float(np.linalg.norm(det)), None,
                               float(np.linalg.norm(g)) if g is not None else None, contact, onset, precedes)
    raise ValueError(f"unknown probe mode {mode!r}")


def summary_table(records):
    """Fixed-width text table of per-clip metric records."""
    cols = ["name", "epe_px", "rot_deg", "trans", "status"]
    lines = ["  ".join(f"{c:>14}" for c in cols)]
    fmt = lambda v: "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))
    for r in records:
        lines.append("  ".join(f"{fmt(r.get(c)):>14}" for c in cols))
    return "\n".join(lines)
