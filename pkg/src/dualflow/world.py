"""Procedural interaction scenes with exact ground truth.

A scene is a textured background plane plus a few fronto-parallel, flat
colored rectangles on distinct depth layers. One active object follows a
scripted motion; passive objects only move after it touches them. Four
colored fiducial patches sit on the background so that camera pose can be
recovered from any rendered (or generated) frame.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, ContractError, RenderError
from .geometry import CameraIntrinsics, CameraPath, CameraPose, DepthMap, pixel_centers, project
from .tracks import ACTIVE, PASSIVE, TrackSet

SCRIPTS = ("none", "push", "pull", "collide")
CAMERA_KINDS = ("static", "orbit", "pan", "zoom", "mixed")
MODES = ("paired", "static-dup", "single-dynamic")
DEFAULT_MIX = {"paired": 0.5, "static-dup": 0.25, "single-dynamic": 0.25}

OBJECT_COLORS = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
FIDUCIAL_COLORS = ((1.0, 1.0, 0.0), (1.0, 0.0, 1.0), (0.0, 1.0, 1.0), (1.0, 0.5, 0.0))

DAMPING = 0.9
MAX_STEP_ROTATION_DEG = 2.0
MAX_STEP_TRANSLATION_FRAC = 0.02

BACKGROUND_ID = -1


def fiducial_id(k):
    return -2 - k


@dataclass
class ObjectSpec:
    center: tuple  # world (x, y) at frame 0
    half_size: tuple  # world (half width, half height)
    depth: float
    color: tuple
    role: str = "passive"


@dataclass
class SceneSpec:
    seed: int
    height: int = 32
    width: int = 32
    frames: int = 8
    focal: float = 32.0
    bg_depth: float = 8.0
    texture_id: int = 0
    objects: list = field(default_factory=list)
    script: str = "none"
    velocity: tuple = (0.0, 0.0)  # active object, world units per frame
    camera: str = "static"
    camera_magnitude: float = 0.0
    supervision: str | None = None

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if self.script not in SCRIPTS:
            raise ConfigError(f"unknown script {self.script!r}", "script")
        if self.camera not in CAMERA_KINDS:
            raise ConfigError(f"unknown camera program {self.camera!r}", "camera")
        if self.supervision is not None and self.supervision not in MODES:
            raise ConfigError(f"unknown supervision mode {self.supervision!r}", "supervision")
        n_active = sum(o.role == "active" for o in self.objects)
        if self.script != "none" and n_active != 1:
            raise ConfigError(f"script {self.script!r} needs exactly one active object, got {n_active}", "objects")
        depths = [o.depth for o in self.objects]
        if len(set(depths)) != len(depths):
            raise ConfigError("object depths must be distinct", "objects")
        intr = self.intrinsics
        for i, o in enumerate(self.objects):
            if not 0 < o.depth < self.bg_depth:
                raise ConfigError(f"object {i} depth must lie in front of the background", f"objects[{i}].depth")
            u, v = project(intr, np.array([o.center[0], o.center[1], o.depth]))
            if not (0 <= u < self.width and 0 <= v < self.height):
                raise ConfigError(f"object {i} starts outside the view", f"objects[{i}].center")

    @property
    def intrinsics(self):
        return CameraIntrinsics.centered(self.width, self.height, self.focal)

    @property
    def active_index(self):
        for i, o in enumerate(self.objects):
            if o.role == "active":
                return i
        return None

    @property
    def centroid(self):
        if not self.objects:
            return np.array([0.0, 0.0, self.bg_depth])
        return np.mean([[o.center[0], o.center[1], o.depth] for o in self.objects], axis=0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["objects"] = [ObjectSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                        for o in d.get("objects", [])]
        for key in ("velocity",):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Fiducials:
    centers: np.ndarray  # (4, 3) world positions of patch centers
    half_size: float  # world half extent on the background plane
    colors: np.ndarray  # (4, 3)


def fiducials(spec):
    """Four patches on the background plane, pixel-aligned in the first frame."""
    size = max(2, spec.width // 8)
    margin = max(1, spec.width // 6)
    intr = spec.intrinsics
    z = spec.bg_depth
    lo_u, hi_u = margin + size / 2, spec.width - margin - size / 2
    lo_v, hi_v = margin + size / 2, spec.height - margin - size / 2
    px = np.array([[lo_u, lo_v], [hi_u, lo_v], [lo_u, hi_v], [hi_u, hi_v]])
    centers = np.stack([(px[:, 0] - intr.cx) * z / intr.fx, (px[:, 1] - intr.cy) * z / intr.fy,
                        np.full(4, z)], axis=1)
    return Fiducials(centers, size / 2 * z / intr.fx, np.array(FIDUCIAL_COLORS))


def texture(texture_id, x, y):
    """Smooth gray background pattern in ``[0.35, 0.55]`` over world ``(x, y)``."""
    rng = np.random.default_rng(10_000 + int(texture_id))
    acc = np.zeros(np.broadcast(x, y).shape)
    for _ in range(4):
        ang = rng.uniform(0, np.pi)
        freq = rng.uniform(0.3, 0.7)
        acc += np.sin(2 * np.pi * freq * (np.cos(ang) * x + np.sin(ang) * y) + rng.uniform(0, 2 * np.pi))
    return 0.45 + 0.025 * acc


def _overlap(ca, ha, cb, hb):
    return (abs(ca[0] - cb[0]) <= ha[0] + hb[0]) and (abs(ca[1] - cb[1]) <= ha[1] + hb[1])


def _contact_normal(ca, ha, cb, hb):
    """Unit axis from a towards b along the direction of least penetration."""
    d = np.asarray(cb, float) - np.asarray(ca, float)
    pen = np.array([ha[0] + hb[0] - abs(d[0]), ha[1] + hb[1] - abs(d[1])])
    axis = int(np.argmin(pen))
    n = np.zeros(2)
    n[axis] = 1.0 if d[axis] >= 0 else -1.0
    return n


def simulate(spec):
    """Per-frame object centers ``(T, n_objects, 2)`` in world units.

    The active object moves with ``spec.velocity`` (``collide`` stops it at
    first contact). A passive object starts moving the frame after it is
    touched: it takes the active velocity's component along the contact normal
    (the full velocity for ``pull``), damped by 0.9 each frame without contact.
    """
    t_count = spec.frames
    n = len(spec.objects)
    pos = np.zeros((t_count, n, 2))
    pos[0] = [o.center for o in spec.objects]
    if spec.script == "none" or n == 0:
        pos[:] = pos[0]
        return pos
    a = spec.active_index
    half = [np.asarray(o.half_size, float) for o in spec.objects]
    v_active = np.asarray(spec.velocity, float)
    vel = np.zeros((n, 2))
    stopped = False
    for t in range(1, t_count):
        prev = pos[t - 1]
        step = np.zeros(2) if stopped else v_active
        for j in range(n):
            if j == a:
                continue
            if spec.script == "pull":
                # tether engages once the active object has moved
                if t == 2:
                    vel[j] = v_active
                elif t > 2:
                    vel[j] = vel[j] * DAMPING
            elif _overlap(prev[a], half[a], prev[j], half[j]):
                normal = _contact_normal(prev[a], half[a], prev[j], half[j])
                push = float(v_active @ normal)
                if push > 0:
                    vel[j] = push * normal
                else:
                    vel[j] = vel[j] * DAMPING
                if spec.script == "collide":
                    stopped = True
            else:
                vel[j] = vel[j] * DAMPING
        pos[t] = prev
        pos[t, a] = prev[a] + step
        for j in range(n):
            if j != a:
                pos[t, j] = prev[j] + vel[j]
    return pos


def first_motion_frames(positions, tol=1e-12):
    """Index of the first frame each object has moved from its start, or None."""
    disp = np.abs(positions - positions[:1]).max(axis=2)
    out = []
    for j in range(positions.shape[1]):
        moved = np.flatnonzero(disp[:, j] > tol)
        out.append(int(moved[0]) if moved.size else None)
    return out


def max_camera_magnitude(kind, frames, scene_depth, centroid):
    """Largest magnitude keeping per-frame rotation ≤ 2° and translation ≤ 2% of scene depth."""
    steps = max(frames - 1, 1)
    max_step_t = MAX_STEP_TRANSLATION_FRAC * scene_depth
    radius = float(np.linalg.norm(centroid))
    if kind == "static":
        return 0.0
    if kind in ("pan", "zoom"):
        return max_step_t * steps
    if kind == "orbit":
        by_chord = 2 * np.degrees(np.arcsin(min(1.0, max_step_t / (2 * radius)))) if radius > 0 else np.inf
        return min(MAX_STEP_ROTATION_DEG, by_chord) * steps
    if kind == "mixed":
        # orbit angle; an added zoom uses half the translation budget
        by_chord = 2 * np.degrees(np.arcsin(min(1.0, 0.5 * max_step_t / (2 * radius)))) if radius > 0 else np.inf
        return min(MAX_STEP_ROTATION_DEG, by_chord) * steps
    raise ConfigError(f"unknown camera program {kind!r}", "camera")


def sample_camera_program(kind, magnitude, frames, rng, scene_depth=8.0, centroid=(0.0, 0.0, 5.0)):
    """World-to-camera poses for a basic camera move; frame 0 is the identity.

    ``magnitude`` is the total displacement in scene units for ``pan`` and
    ``zoom`` and the total orbit angle in degrees for ``orbit`` and ``mixed``.
    """
    centroid = np.asarray(centroid, dtype=np.float64)
    limit = max_camera_magnitude(kind, frames, scene_depth, centroid)
    if not 0 <= magnitude <= limit + 1e-12:
        raise ConfigError(f"{kind} magnitude {magnitude} outside [0, {limit:.4g}]", "camera_magnitude")
    frac = np.arange(frames) / max(frames - 1, 1)
    poses = []
    if kind == "static":
        poses = [CameraPose.identity() for _ in range(frames)]
    elif kind == "pan":
        ang = rng.uniform(-np.pi / 6, np.pi / 6) + (np.pi if rng.random() < 0.5 else 0.0)
        direction = np.array([np.cos(ang), np.sin(ang), 0.0])
        poses = [CameraPose(np.eye(3), -f * magnitude * direction) for f in frac]
    elif kind == "zoom":
        poses = [CameraPose(np.eye(3), np.array([0.0, 0.0, -f * magnitude])) for f in frac]
    elif kind in ("orbit", "mixed"):
        ang = rng.uniform(-np.pi / 6, np.pi / 6)
        axis = np.array([np.sin(ang), np.cos(ang), 0.0])
        sign = 1.0 if rng.random() < 0.5 else -1.0
        zoom = 0.0
        if kind == "mixed":
            zoom = 0.5 * MAX_STEP_TRANSLATION_FRAC * scene_depth * (frames - 1) * rng.uniform(0.5, 1.0)
        for f in frac:
            cam_to_world = Rotation.from_rotvec(sign * np.radians(f * magnitude) * axis).as_matrix()
            center = centroid + cam_to_world @ (-centroid) + cam_to_world @ np.array([0.0, 0.0, f * zoom])
            rot = cam_to_world.T
            poses.append(CameraPose(rot, -rot @ center))
    else:
        raise ConfigError(f"unknown camera program {kind!r}", "camera")
    poses[0] = CameraPose.identity()
    return poses


def _layers(spec, positions_t):
    """Paint order far to near: (kind, index, depth, center, half)."""
    order = sorted(range(len(spec.objects)), key=lambda i: -spec.objects[i].depth)
    return [(i, spec.objects[i].depth, positions_t[i], spec.objects[i].half_size) for i in order]


SUPERSAMPLE = 8


def render(spec, positions, poses, supersample=SUPERSAMPLE):
    """Painter's-algorithm render through the pinhole model.

    Colors average ``supersample``^2 rays per pixel so edges carry sub-pixel
    coverage; depth and ids come from the pixel-center ray. Returns
    ``(clip (T,H,W,3) float32, depth (T,H,W) float64, ids (T,H,W) int16)``
    where ``ids`` holds the object index, ``BACKGROUND_ID`` or a fiducial id.
    """
    intr = spec.intrinsics
    h, w, t_count = spec.height, spec.width, spec.frames
    if len(poses) != t_count or positions.shape[0] != t_count:
        raise ContractError("poses and positions must cover every frame")
    pix = pixel_centers(h, w)
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    fid = fiducials(spec)
    clip = np.zeros((t_count, h, w, 3), np.float32)
    depth = np.zeros((t_count, h, w))
    ids = np.full((t_count, h, w), BACKGROUND_ID, np.int16)

    center_rays = np.stack([(pix[..., 0] - intr.cx) / intr.fx, (pix[..., 1] - intr.cy) / intr.fy,
                            np.ones((h, w))], -1)

    # sub-pixel sample grid laid out as (row, sub-row, col, sub-col)
    du = np.broadcast_to(offsets[None, None, None, :], (h, supersample, w, supersample))
    dv = np.broadcast_to(offsets[None, :, None, None], (h, supersample, w, supersample))
    pu = np.broadcast_to(pix[:, None, :, None, 0], du.shape)
    pv = np.broadcast_to(pix[:, None, :, None, 1], du.shape)
    fine_rays = np.stack([(pu + du - intr.cx) / intr.fx, (pv + dv - intr.cy) / intr.fy, np.ones(du.shape)],
                         -1).reshape(h * supersample, w * supersample, 3)

    for t in range(t_count):
        pose = poses[t]
        for i, o in enumerate(spec.objects):
            if pose.apply(np.array([*positions[t, i], o.depth]))[2] <= 0:
                raise RenderError(f"object {i} is behind the camera at frame {t}")
        layers = _layers(spec, positions[t])
        frame, zbuf, idbuf = _shade(spec, fid, layers, pose, center_rays, t)
        if supersample > 1:
            fine = _shade(spec, fid, layers, pose, fine_rays, t)[0]
            frame = fine.reshape(h, supersample, w, supersample, 3).mean(axis=(1, 3))
        clip[t] = frame
        depth[t] = zbuf
        ids[t] = idbuf
    return clip, depth, ids


def _shade(spec, fid, layers, pose, rays, t):
    center = pose.center
    dirs = rays @ pose.rotation  # camera ray -> world direction (R^T d)

    def hit(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (z - center[2]) / dirs[..., 2]
        ok = np.isfinite(s) & (s > 0)
        s = np.where(ok, s, np.inf)
        return s, center[0] + s * dirs[..., 0], center[1] + s * dirs[..., 1], ok

    s, x, y, ok = hit(spec.bg_depth)
    if not ok.any():
        raise RenderError(f"background not visible at frame {t}")
    g = texture(spec.texture_id, np.where(ok, x, 0.0), np.where(ok, y, 0.0))
    frame = np.repeat(np.where(ok, g, 0.0)[..., None], 3, axis=-1)
    zbuf = np.where(ok, s, np.inf)
    idbuf = np.full(ok.shape, BACKGROUND_ID)
    for k in range(4):
        c = fid.centers[k]
        inside = ok & (np.abs(x - c[0]) < fid.half_size) & (np.abs(y - c[1]) < fid.half_size)
        frame[inside] = fid.colors[k]
        idbuf = np.where(inside, fiducial_id(k), idbuf)
    for i, z, c, hs in layers:
        s, x, y, ok = hit(z)
        inside = ok & (np.abs(x - c[0]) < hs[0]) & (np.abs(y - c[1]) < hs[1])
        frame[inside] = spec.objects[i].color
        zbuf = np.where(inside, s, zbuf)
        idbuf = np.where(inside, i, idbuf)
    return frame, zbuf, idbuf


@dataclass
class Sample:
    spec: SceneSpec
    canonical_clip: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    target_clip: np.ndarray
    depth0: DepthMap
    path: CameraPath  # target stream; the canonical stream is the identity path
    tracks: TrackSet  # canonical view
    target_tracks: TrackSet  # same surface points seen by the target camera
    target_depth: np.ndarray  # (T, H, W) float64 z-buffer of the target render
    ids0: np.ndarray  # (H, W) int16 first-frame object ids
    label: str
    mode: str

    @property
    def frames(self):
        return self.canonical_clip.shape[0]

    @property
    def object_colors(self):
        return {i: np.asarray(o.color) for i, o in enumerate(self.spec.objects)}

    def object_mask(self, index):
        return self.ids0 == index


def _surface_tracks(spec, positions, poses, local_pts, object_index):
    """Project per-object surface points through ``poses``.

    A point is visible when it lands inside the image and the exact ray through
    it meets no nearer rectangle, so visibility does not depend on which
    pixel center the point falls near.
    """
    intr = spec.intrinsics
    t_count = spec.frames
    h, w = spec.height, spec.width
    n = local_pts.shape[0]
    depth = np.array([spec.objects[i].depth for i in object_index])
    pos = np.zeros((n, t_count, 2))
    vis = np.zeros((n, t_count), bool)
    for t in range(t_count):
        world = np.column_stack([local_pts[:, :2] + positions[t, object_index], depth])
        cam = poses[t].apply(world)
        front = cam[:, 2] > 0
        uv = np.full((n, 2), np.nan)
        uv[front] = project(intr, cam[front])
        pos[:, t] = uv
        u, v = np.nan_to_num(uv[:, 0], nan=-1.0), np.nan_to_num(uv[:, 1], nan=-1.0)
        inside = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        center = poses[t].center
        dirs = world - center  # ray parameter 1 reaches the point itself
        clear = np.ones(n, bool)
        for j, o in enumerate(spec.objects):
            with np.errstate(divide="ignore", invalid="ignore"):
                s_hit = (o.depth - center[2]) / dirs[:, 2]
            hx = center[0] + s_hit * dirs[:, 0] - positions[t, j, 0]
            hy = center[1] + s_hit * dirs[:, 1] - positions[t, j, 1]
            blocks = ((object_index != j) & np.isfinite(s_hit) & (s_hit > 0) & (s_hit < 1 - 1e-9)
                      & (np.abs(hx) < o.half_size[0]) & (np.abs(hy) < o.half_size[1]))
            clear &= ~blocks
        vis[:, t] = inside & clear
    pos = np.where(np.isnan(pos), -1.0, pos)
    return pos, vis


def make_sample(spec):
    """Render the canonical and target views of ``spec`` with ground-truth tracks."""
    rng = np.random.default_rng(spec.seed)
    positions = simulate(spec)
    intr = spec.intrinsics
    t_count = spec.frames
    identity = [CameraPose.identity() for _ in range(t_count)]
    target_poses = sample_camera_program(spec.camera, spec.camera_magnitude, t_count, rng,
                                         scene_depth=spec.bg_depth, centroid=spec.centroid)
    can_clip, can_depth, can_ids = render(spec, positions, identity)
    if spec.camera == "static":
        tar_clip, tar_depth, tar_ids = can_clip.copy(), can_depth.copy(), can_ids.copy()
    else:
        tar_clip, tar_depth, tar_ids = render(spec, positions, target_poses)

    mode = spec.supervision or ("static-dup" if spec.camera == "static" else "paired")
    if (mode == "static-dup") != (spec.camera == "static"):
        raise ConfigError(f"supervision {mode!r} inconsistent with camera {spec.camera!r}", "supervision")

    pix = pixel_centers(spec.height, spec.width)
    local, owner = [], []
    for i, o in enumerate(spec.objects):
        m = can_ids[0] == i
        uv = pix[m]
        d = o.depth
        world = np.column_stack([(uv[:, 0] - intr.cx) * d / intr.fx, (uv[:, 1] - intr.cy) * d / intr.fy])
        local.append(world - positions[0, i])
        owner.append(np.full(len(uv), i))
    local_pts = np.concatenate(local) if local else np.zeros((0, 2))
    owner = np.concatenate(owner) if owner else np.zeros(0, int)
    roles = np.array([ACTIVE if spec.objects[i].role == "active" else PASSIVE for i in owner], dtype=np.int64)

    c_pos, c_vis = _surface_tracks(spec, positions, identity, local_pts, owner)
    t_pos, t_vis = _surface_tracks(spec, positions, target_poses, local_pts, owner)
    frame_size = (spec.height, spec.width)
    return Sample(
        spec=spec,
        canonical_clip=can_clip,
        target_clip=tar_clip,
        depth0=DepthMap.dense(can_depth[0]),
        path=CameraPath.from_poses(target_poses, intr),
        tracks=TrackSet(c_pos, c_vis, owner, roles, frame_size),
        target_tracks=TrackSet(t_pos, t_vis, owner, roles, frame_size),
        target_depth=tar_depth,
        ids0=can_ids[0].copy(),
        label=spec.script,
        mode=mode,
    )


def _pixel_align(center, half, depth, intr):
    """Snap a rectangle so its frame-0 image has integer pixel edges; returns world ``(center, half)``."""
    out_c, out_h = [], []
    for axis, (f, c0) in enumerate(((intr.fx, intr.cx), (intr.fy, intr.cy))):
        hp = max(1.0, round(2 * half[axis] * f / depth) / 2)
        lo = round(c0 + center[axis] * f / depth - hp)
        out_c.append(float((lo + hp - c0) * depth / f))
        out_h.append(float(hp * depth / f))
    return tuple(out_c), tuple(out_h)


def random_scene_spec(seed, height=32, width=32, frames=8, script=None, camera=None,
                      supervision=None, mix=None, focal=None):
    """Draw a valid SceneSpec from ``seed``.

    The supervision mode is drawn from ``mix`` first; ``static-dup`` forces a
    static camera, the other modes a moving one. Objects start pixel-aligned so
    their frame-0 surface tracks sample them without bias.
    """
    rng = np.random.default_rng(seed)
    mix = mix or DEFAULT_MIX
    if supervision is None:
        names = [k for k in mix if camera is None or (k == "static-dup") == (camera == "static")]
        probs = np.array([mix[k] for k in names], float)
        supervision = names[int(rng.choice(len(names), p=probs / probs.sum()))]
    if script is None:
        script = SCRIPTS[int(rng.choice(4, p=[0.25, 0.45, 0.15, 0.15]))]
    if camera is None:
        camera = "static" if supervision == "static-dup" else str(rng.choice(CAMERA_KINDS[1:]))
    focal = float(width) if focal is None else focal
    bg_depth = 8.0
    unit = focal / 5.0  # pixels per world unit at the object depth
    half = np.array([rng.uniform(2.0, 2.8), rng.uniform(2.0, 2.8)]) / unit
    half_p = np.array([rng.uniform(2.0, 2.8), rng.uniform(2.0, 2.8)]) / unit
    depth_a = float(rng.uniform(4.6, 5.0))
    depth_p = depth_a + float(rng.choice([-0.5, 0.5]))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    y = float(rng.uniform(-1.5, 1.5)) / unit
    speed = float(rng.uniform(1.1, 1.6)) / unit
    tilt = float(rng.uniform(-0.15, 0.15))
    velocity = (sign * speed * np.cos(tilt), speed * np.sin(tilt))
    if script == "pull":
        xa = sign * 1.5 / unit
        xp = xa - sign * (half[0] + half_p[0])
        velocity = (sign * speed * np.cos(tilt), speed * np.sin(tilt))
    elif script == "none":
        xa = -sign * rng.uniform(4.0, 7.0) / unit
        xp = sign * rng.uniform(3.0, 6.0) / unit
        velocity = (0.0, 0.0)
    else:
        gap = float(rng.uniform(0.6, 2.0)) / unit
        xa = -sign * rng.uniform(6.5, 8.5) / unit
        xp = xa + sign * (half[0] + half_p[0] + gap)
    palette = rng.permutation(len(OBJECT_COLORS))
    intr = CameraIntrinsics.centered(width, height, focal)
    ca, half = _pixel_align((xa, y), half, depth_a, intr)
    cp, half_p = _pixel_align((xp, y + float(rng.uniform(-0.6, 0.6)) / unit), half_p, depth_p, intr)
    if script in ("push", "collide"):
        # snapping may close the gap; step the passive object away a pixel at a time
        step = depth_p / intr.fx
        while abs(cp[0] - ca[0]) - half[0] - half_p[0] < 0.3 / unit:
            cp = (cp[0] + sign * step, cp[1])
    objects = [
        ObjectSpec(ca, half, depth_a, OBJECT_COLORS[palette[0]], "active"),
        ObjectSpec(cp, half_p, depth_p, OBJECT_COLORS[palette[1]], "passive"),
    ]
    spec = SceneSpec(seed=int(seed), height=height, width=width, frames=frames, focal=focal,
                     bg_depth=bg_depth, texture_id=int(rng.integers(0, 1000)), objects=objects,
                     script=script, velocity=tuple(float(v) for v in velocity), camera=camera,
                     supervision=supervision)
    if camera != "static":
        limit = max_camera_magnitude(camera, frames, bg_depth, spec.centroid)
        spec.camera_magnitude = float(rng.uniform(0.6, 0.9) * limit)
    return spec


def mode_schedule(count, mix, rng):
    """Exactly-proportioned supervision modes for ``count`` samples (largest remainder), shuffled."""
    names = list(mix)
    probs = np.array([mix[k] for k in names], float)
    probs = probs / probs.sum()
    raw = probs * count
    n = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - n), kind="stable")[: count - n.sum()]:
        n[i] += 1
    out = [name for name, k in zip(names, n) for _ in range(k)]
    return [out[i] for i in rng.permutation(len(out))]


@dataclass
class WorldConfig:
    """Dataset-level settings for ``dataset_specs``."""

    height: int = 32
    width: int = 32
    frames: int = 8
    focal: float | None = None
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    scripts: list | None = None  # cycled per sample; None draws them
    cameras: list | None = None  # cycled over moving-camera samples; None draws them

    def __post_init__(self):
        if set(self.mix) - set(MODES):
            raise ConfigError(f"unknown supervision modes {sorted(set(self.mix) - set(MODES))}", "mix")
        if any(v < 0 for v in self.mix.values()) or sum(self.mix.values()) <= 0:
            raise ConfigError("mix weights must be non-negative with a positive sum", "mix")
        for i, s in enumerate(self.scripts or []):
            if s not in SCRIPTS:
                raise ConfigError(f"unknown script {s!r}", f"scripts[{i}]")
        for i, c in enumerate(self.cameras or []):
            if c not in CAMERA_KINDS[1:]:
                raise ConfigError(f"unknown moving camera program {c!r}", f"cameras[{i}]")
        if self.frames < 2 or self.height < 8 or self.width < 8:
            raise ConfigError("clips need at least 2 frames of 8x8 pixels", "frames")

    def to_dict(self):
        return asdict(self)


def dataset_specs(count, seed, cfg=None):
    """``count`` scene specs; supervision modes follow ``cfg.mix`` exactly (largest remainder)."""
    cfg = cfg or WorldConfig()
    modes = mode_schedule(count, cfg.mix, np.random.default_rng([seed, 1]))
    specs, moving = [], 0
    for i, mode in enumerate(modes):
        sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        script = cfg.scripts[i % len(cfg.scripts)] if cfg.scripts else None
        camera = None
        if mode != "static-dup" and cfg.cameras:
            camera = cfg.cameras[moving % len(cfg.cameras)]
            moving += 1
        specs.append(random_scene_spec(sub, cfg.height, cfg.width, cfg.frames, script=script, camera=camera,
                                       supervision=mode, mix=cfg.mix, focal=cfg.focal))
    return specs
