"""Flow-matching training for the dual-stream model."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ContractError, RuntimeAbort
from .model import LABELS, DualStreamDiT, ModelConfig, clip_to_latent, encode_camera
from .tracks import ACTIVE, causal_dropout, coarsen, degrade, rasterize, subsample, track_count

log = logging.getLogger(__name__)

STREAM_MASKS = {"paired": (1.0, 1.0), "static-dup": (1.0, 1.0), "single-dynamic": (0.0, 1.0)}


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 8
    lr: float = 3e-5
    weight_decay: float = 1e-3
    causal_p: float = 0.8
    drop_prob: float = 0.2
    truncate_prob: float = 0.2
    coarsen_prob: float = 0.5
    label_dropout: float = 0.2
    seed: int = 0
    checkpoint_every: int = 1000
    smoothing: int = 50
    threads: int = 1

    def __post_init__(self):
        for name in ("causal_p", "drop_prob", "truncate_prob", "coarsen_prob", "label_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]", name)
        if self.iterations < 1:
            raise ConfigError("iterations must be positive", "iterations")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "batch_size")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainingPair:
    z0_can: np.ndarray
    z0_tar: np.ndarray
    eps_can: np.ndarray
    eps_tar: np.ndarray
    t: float
    cam_can: np.ndarray
    cam_tar: np.ndarray
    trk_can: np.ndarray  # raw trajectory map (T, H, W, d_trk)
    label: int
    mask: tuple  # per-stream loss weight (canonical, target)
    role: str
    coarsened: bool

    @property
    def z_can(self):
        return interpolate(self.z0_can, self.eps_can, self.t)

    @property
    def z_tar(self):
        return interpolate(self.z0_tar, self.eps_tar, self.t)

    @property
    def target_can(self):
        return self.eps_can - self.z0_can

    @property
    def target_tar(self):
        return self.eps_tar - self.z0_tar


def interpolate(z0, eps, t):
    """Straight path between data (t=0) and noise (t=1)."""
    return (1 - t) * z0 + t * eps


@dataclass
class PreparedSample:
    """Per-sample tensors that do not depend on training randomness."""

    sample: object
    z0_can: np.ndarray
    z0_tar: np.ndarray
    cam_can: np.ndarray
    cam_tar: np.ndarray


def prepare(sample, model_cfg):
    from .geometry import CameraPath

    first = sample.canonical_clip[0]
    identity = CameraPath.identity(sample.frames, sample.path.intrinsics)
    return PreparedSample(
        sample=sample,
        z0_can=clip_to_latent(sample.canonical_clip, model_cfg),
        z0_tar=clip_to_latent(sample.target_clip, model_cfg),
        cam_can=encode_camera(first, sample.depth0, identity, model_cfg),
        cam_tar=encode_camera(first, sample.depth0, sample.path, model_cfg),
    )


def condition_tracks(sample, cfg, rng):
    """Training-time track pipeline: causal dropout, optional coarsening, degradation, subsampling."""
    tracks = causal_dropout(sample.tracks, cfg.causal_p, rng)
    role = "active" if len(tracks) and tracks.role[0] == ACTIVE else "passive"
    coarsened = bool(rng.random() < cfg.coarsen_prob)
    if coarsened and len(tracks):
        tracks = coarsen(tracks, "object")
    h, w = tracks.frame_size
    tracks = subsample(tracks, track_count(h, w, rng), rng)
    tracks = degrade(tracks, cfg.drop_prob, cfg.truncate_prob, rng)
    return tracks, role, coarsened


def make_training_pair(prepared, cfg, model_cfg, rng, t=None):
    """Noisy latents, velocity targets, loss mask and conditions for one sample."""
    if not isinstance(prepared, PreparedSample):
        prepared = prepare(prepared, model_cfg)
    sample = prepared.sample
    tracks, role, coarsened = condition_tracks(sample, cfg, rng)
    traj = rasterize(tracks, model_cfg.d_trk, sample.depth0)
    t_draw = float(rng.random())
    t = t_draw if t is None else float(t)
    shape = prepared.z0_can.shape
    eps_can = rng.standard_normal(shape, dtype=np.float32)
    eps_tar = rng.standard_normal(shape, dtype=np.float32)
    label = LABELS.index(sample.label)
    if rng.random() < cfg.label_dropout:
        label = model_cfg.labels
    return TrainingPair(prepared.z0_can, prepared.z0_tar, eps_can, eps_tar, t, prepared.cam_can,
                        prepared.cam_tar, traj.embedding, label, STREAM_MASKS[sample.mode], role, coarsened)


def flow_loss(v_can, v_tar, target_can, target_tar, mask):
    """Mean squared velocity error over the supervised streams.

    ``mask`` is ``(B, 2)`` per-stream weights; masked streams add nothing and
    get no gradient.
    """
    mask = torch.as_tensor(mask, dtype=v_can.dtype)
    if mask.ndim == 1:
        mask = mask[None]
    per_elem = v_can[0].numel()
    denom = mask.sum() * per_elem
    if denom <= 0:
        raise ConfigError("every stream is masked out; loss undefined", "mask")
    sq_can = ((v_can - target_can) ** 2).flatten(1).sum(1)
    sq_tar = ((v_tar - target_tar) ** 2).flatten(1).sum(1)
    total = (torch.where(mask[:, 0] > 0, sq_can * mask[:, 0], 0.0).sum()
             + torch.where(mask[:, 1] > 0, sq_tar * mask[:, 1], 0.0).sum())
    return total / denom


def collate(pairs, dtype=torch.float32):
    t = lambda key: torch.as_tensor(np.stack([getattr(p, key) for p in pairs]), dtype=dtype)
    return {
        "z_can": t("z_can"), "z_tar": t("z_tar"),
        "target_can": t("target_can"), "target_tar": t("target_tar"),
        "t": torch.tensor([p.t for p in pairs], dtype=dtype),
        "cam_can": t("cam_can"), "cam_tar": t("cam_tar"), "trk_can": t("trk_can"),
        "label": torch.tensor([p.label for p in pairs], dtype=torch.long),
        "mask": torch.tensor([p.mask for p in pairs], dtype=dtype),
    }


def batch_loss(model, batch, cross_view=True):
    v_can, v_tar = model(batch["z_can"], batch["z_tar"], batch["t"], batch["cam_can"], batch["cam_tar"],
                         batch["trk_can"], None, batch["label"], cross_view=cross_view)
    return flow_loss(v_can, v_tar, batch["target_can"], batch["target_tar"], batch["mask"])


def smoothed(losses, window):
    """``(initial, final)`` means over the first and last ``window`` losses."""
    window = max(1, min(window, len(losses)))
    return float(np.mean(losses[:window])), float(np.mean(losses[-window:]))


@dataclass
class TrainResult:
    model: DualStreamDiT
    losses: list
    counters: dict = field(default_factory=dict)


def train(samples, cfg, model_cfg, out_dir=None, progress=None):
    """Train on a list of samples.

    Writes ``metrics.jsonl`` and periodic checkpoints under ``out_dir`` when
    given. Raises ``RuntimeAbort`` on a non-finite loss after dumping state.
    """
    if not samples:
        raise ContractError("empty dataset")
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    model = DualStreamDiT(model_cfg)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    prepared = [prepare(s, model_cfg) for s in samples]
    order_rng = np.random.default_rng([cfg.seed, 0xDA7A])
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / "metrics.jsonl", "w")
    losses = []
    modes = Counter()
    draws = Counter()
    queue = []
    try:
        for it in range(cfg.iterations):
            idx = []
            while len(idx) < cfg.batch_size:
                if not queue:
                    queue = list(order_rng.permutation(len(prepared)))
                idx.append(int(queue.pop(0)))
            pairs = []
            for slot, i in enumerate(idx):
                rng = np.random.default_rng([cfg.seed, it, slot])
                pair = make_training_pair(prepared[i], cfg, model_cfg, rng)
                pairs.append(pair)
                modes[prepared[i].sample.mode] += 1
                draws[pair.role] += 1
            loss = batch_loss(model, collate(pairs))
            value = float(loss.detach())
            if not math.isfinite(value):
                state = {"iteration": it, "loss": value, "batch": idx, "recent_losses": losses[-20:]}
                if out is not None:
                    (out / "abort_state.json").write_text(json.dumps(state, indent=2))
                raise RuntimeAbort(f"non-finite loss at iteration {it}", state)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(value)
            if metrics is not None:
                metrics.write(json.dumps({"iteration": it, "loss": value, "mode_counts": dict(modes),
                                          "p_draws": dict(draws)}) + "\n")
            if progress is not None:
                progress(it, value)
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                from .io import write_checkpoint

                write_checkpoint(out / f"checkpoint_{it + 1:06d}", model)
    finally:
        if metrics is not None:
            metrics.close()
    if out is not None:
        from .io import write_checkpoint

        write_checkpoint(out / "checkpoint", model)
    model.eval()
    return TrainResult(model, losses, {"modes": dict(modes), "p_draws": dict(draws)})
