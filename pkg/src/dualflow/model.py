"""Dual-stream diffusion transformer with per-block condition injection.

Both streams are tokenized from their latent grids and concatenated along
the token axis. Every block first adds the projected camera and trajectory
encodings of each stream to its tokens, then runs one self-attention over the
joint token set, so the target stream can read motion from the canonical one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from . import codec
from .errors import ConfigError
from .geometry import CameraPath, warp_first_frame

LABELS = ("none", "push", "pull", "collide")


@dataclass
class ModelConfig:
    frames: int = 8
    height: int = 32
    width: int = 32
    patch_t: int = 4
    patch_s: int = 4
    hidden: int = 192
    blocks: int = 4
    heads: int = 4
    d_trk: int = 16
    trk_channels: int = 32
    labels: int = len(LABELS)
    mlp_ratio: float = 2.0
    rope_base: float = 100.0
    trainable: str = "all"  # or "encoders+attention"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ConfigError(f"hidden width {self.hidden} not divisible by {self.heads} heads", "hidden")
        if self.frames % self.patch_t:
            raise ConfigError(f"patch_t={self.patch_t} must divide frames={self.frames}", "patch_t")
        if self.height % self.patch_s or self.width % self.patch_s:
            raise ConfigError(f"patch_s={self.patch_s} must divide {self.height}x{self.width}", "patch_s")
        if self.patch_t & (self.patch_t - 1):
            raise ConfigError("patch_t must be a power of two (stride-2 temporal encoder)", "patch_t")
        if self.d_trk % 2:
            raise ConfigError(f"d_trk must be even, got {self.d_trk}", "d_trk")
        if self.trainable not in ("all", "encoders+attention"):
            raise ConfigError(f"unknown trainable subset {self.trainable!r}", "trainable")

    @property
    def latent_dim(self):
        return 3 * self.patch_t * self.patch_s ** 2

    @property
    def camera_dim(self):
        return 4 * self.patch_t * self.patch_s ** 2

    @property
    def grid(self):
        return self.frames // self.patch_t, self.height // self.patch_s, self.width // self.patch_s

    @property
    def tokens_per_stream(self):
        t, h, w = self.grid
        return t * h * w

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class RMSNorm(nn.Module):
    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class TrajectoryEncoder(nn.Module):
    """Pool a trajectory map to the latent grid and downsample time with stride-2 convolutions.

    Convolutions carry no bias, so an all-zero map encodes to exactly zero.
    """

    def __init__(self, cfg):
        super().__init__()
        self.ps = cfg.patch_s
        n_down = int(math.log2(cfg.patch_t))
        widths = [cfg.d_trk] + [cfg.trk_channels] * (max(n_down, 1) - 1) + [cfg.latent_dim]
        self.norms = nn.ModuleList(RMSNorm(c) for c in widths[:-1])
        self.convs = nn.ModuleList(
            nn.Conv3d(cin, cout, (3, 1, 1), stride=(2 if i < n_down else 1, 1, 1), padding=(1, 0, 0), bias=False)
            for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])))

    def forward(self, traj_map):
        x = rearrange(traj_map, "b t (h p) (w q) c -> b t h w (p q) c", p=self.ps, q=self.ps).mean(-2)
        for norm, conv in zip(self.norms, self.convs):
            x = F.silu(norm(x))
            x = conv(x.permute(0, 4, 1, 2, 3)).permute(0, 2, 3, 4, 1)
        return x


def timestep_embedding(t, dim, max_period=10_000.0):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = (t * 1000.0)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class Rope3D(nn.Module):
    """Rotary embedding over (time, row, col) token indices.

    The canonical stream uses temporal indices ``0..T̂-1`` and the target
    stream ``T̂..2T̂-1``; spatial indices are shared.
    """

    def __init__(self, cfg):
        super().__init__()
        head_dim = cfg.hidden // cfg.heads
        self.axis_dim = (head_dim // 3) // 2 * 2
        t, h, w = cfg.grid
        tt, hh, ww = torch.meshgrid(torch.arange(2 * t), torch.arange(h), torch.arange(w), indexing="ij")
        pos = torch.stack([tt, hh, ww], -1).reshape(-1, 3).double()
        half = self.axis_dim // 2
        freqs = cfg.rope_base ** (-torch.arange(half, dtype=torch.float64) / max(half, 1))
        ang = pos[:, :, None] * freqs  # (L, 3, half)
        self.register_buffer("cos", ang.cos(), persistent=False)
        self.register_buffer("sin", ang.sin(), persistent=False)

    def forward(self, x):
        # x: (B, heads, L, head_dim)
        if self.axis_dim == 0:
            return x
        half = self.axis_dim // 2
        cos = self.cos.to(x.dtype)
        sin = self.sin.to(x.dtype)
        parts = []
        for a in range(3):
            seg = x[..., a * self.axis_dim:(a + 1) * self.axis_dim]
            x1, x2 = seg[..., :half], seg[..., half:]
            c, s = cos[:, a], sin[:, a]
            parts += [x1 * c - x2 * s, x2 * c + x1 * s]
        parts.append(x[..., 3 * self.axis_dim:])
        return torch.cat(parts, dim=-1)


def _modulate(x, shift, scale):
    return x * (1 + scale) + shift


class Block(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d = cfg.hidden
        self.heads = cfg.heads
        self.w_cam = nn.Linear(cfg.camera_dim, d, bias=False)
        self.w_trk = nn.Linear(cfg.latent_dim, d, bias=False)
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        hidden_mlp = int(d * cfg.mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(d, hidden_mlp), nn.GELU(approximate="tanh"), nn.Linear(hidden_mlp, d))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(d, 6 * d))
        for lin in (self.w_cam, self.w_trk, self.ada[1]):
            nn.init.zeros_(lin.weight)
            if lin.bias is not None:
                nn.init.zeros_(lin.bias)

    def attention(self, h, rope, cross_view):
        b, n, d = h.shape
        q, k, v = rearrange(self.qkv(h), "b n (three hd d) -> three b hd n d", three=3, hd=self.heads)
        q, k = rope(q), rope(k)
        if cross_view:
            out = F.scaled_dot_product_attention(q, k, v)
        else:
            m = n // 2
            out = torch.cat([F.scaled_dot_product_attention(q[:, :, :m], k[:, :, :m], v[:, :, :m]),
                             F.scaled_dot_product_attention(q[:, :, m:], k[:, :, m:], v[:, :, m:])], dim=2)
        return self.proj(rearrange(out, "b hd n d -> b n (hd d)"))

    def forward(self, f, c, rope, cam=None, trk=None, cross_view=True):
        if cam is not None:
            f = f + self.w_cam(cam)
        if trk is not None:
            f = f + self.w_trk(trk)
        shift1, scale1, gate1, shift2, scale2, gate2 = self.ada(c)[:, None].chunk(6, dim=-1)
        f = f + gate1 * self.attention(_modulate(self.norm1(f), shift1, scale1), rope, cross_view)
        f = f + gate2 * self.mlp(_modulate(self.norm2(f), shift2, scale2))
        return f


class DualStreamDiT(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden
        self.embed = nn.Linear(cfg.latent_dim, d)
        self.t_embed = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.label_embed = nn.Embedding(cfg.labels + 1, d)  # last index is the dropped label
        self.traj_encoder = TrajectoryEncoder(cfg)
        self.rope = Rope3D(cfg)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.blocks))
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        self.out = nn.Linear(d, cfg.latent_dim)
        for lin in (self.final_ada[1], self.out):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)
        self.set_trainable(cfg.trainable)

    @property
    def null_label(self):
        return self.cfg.labels

    def set_trainable(self, subset):
        for name, p in self.named_parameters():
            if subset == "all":
                p.requires_grad_(True)
            else:
                keep = name.startswith("traj_encoder") or any(
                    key in name for key in (".w_cam.", ".w_trk.", ".qkv.", ".proj."))
                p.requires_grad_(keep)

    def encode_trajectory(self, traj_map):
        """``(B, T, H, W, d_trk) -> (B, T̂, Ĥ, Ŵ, latent_dim)``."""
        cfg = self.cfg
        if tuple(traj_map.shape[1:]) != (cfg.frames, cfg.height, cfg.width, cfg.d_trk):
            raise ConfigError(f"trajectory map shape {tuple(traj_map.shape[1:])} does not match config", "d_trk")
        return self.traj_encoder(traj_map)

    def forward(self, z_can, z_tar, t, cam_can=None, cam_tar=None, trk_can=None, trk_tar=None,
                label=None, cross_view=True):
        """Velocity for both streams.

        ``z_*``: ``(B, T̂, Ĥ, Ŵ, d)`` noisy latents; ``cam_*``: camera latents
        ``(B, T̂, Ĥ, Ŵ, 4·p_t·p_s²)``; ``trk_*``: raw trajectory maps or None
        (empty condition); ``label``: ``(B,)`` ints, None means dropped.
        """
        cfg = self.cfg
        if z_can.shape != z_tar.shape or tuple(z_can.shape[1:]) != (*cfg.grid, cfg.latent_dim):
            raise ConfigError(f"latent shapes {tuple(z_can.shape)} / {tuple(z_tar.shape)} do not match config",
                              "latent")
        b = z_can.shape[0]
        tokens = lambda g: rearrange(g, "b t h w c -> b (t h w) c")
        f = self.embed(torch.cat([tokens(z_can), tokens(z_tar)], dim=1))
        t = torch.as_tensor(t, dtype=f.dtype).reshape(-1).expand(b)
        if label is None:
            label = torch.full((b,), self.null_label, dtype=torch.long)
        c = self.t_embed(timestep_embedding(t, cfg.hidden)) + self.label_embed(label)

        cam = None
        if cam_can is not None or cam_tar is not None:
            zero = torch.zeros(b, cfg.tokens_per_stream, cfg.camera_dim, dtype=f.dtype)
            cam = torch.cat([tokens(cam_can) if cam_can is not None else zero,
                             tokens(cam_tar) if cam_tar is not None else zero], dim=1)
        trk = None
        if trk_can is not None or trk_tar is not None:
            zero = torch.zeros(b, cfg.tokens_per_stream, cfg.latent_dim, dtype=f.dtype)
            trk = torch.cat([tokens(self.encode_trajectory(trk_can)) if trk_can is not None else zero,
                             tokens(self.encode_trajectory(trk_tar)) if trk_tar is not None else zero], dim=1)

        for block in self.blocks:
            f = block(f, c, self.rope, cam=cam, trk=trk, cross_view=cross_view)
        shift, scale = self.final_ada(c)[:, None].chunk(2, dim=-1)
        v = self.out(_modulate(self.final_norm(f), shift, scale))
        grid = dict(zip("thw", cfg.grid))
        n = cfg.tokens_per_stream
        unflat = lambda x: rearrange(x, "b (t h w) c -> b t h w c", **grid)
        return unflat(v[:, :n]), unflat(v[:, n:])


def camera_frames(first_frame, depth0, path):
    """Warp ``first_frame`` along ``path``: ``(T, H, W, 4)`` with model-range RGB and a validity channel.

    Holes carry zero RGB (before range mapping) and zero validity.
    """
    out = []
    for i in range(len(path)):
        rgb, valid = warp_first_frame(first_frame, depth0, path.intrinsics, path.pose(i))
        rgb = np.where(valid[..., None], codec.to_model_range(np.asarray(rgb, np.float64)), 0.0)
        out.append(np.concatenate([rgb, valid[..., None].astype(np.float64)], axis=-1))
    return np.stack(out).astype(np.float32)


def encode_camera(first_frame, depth0, path, cfg):
    """Camera latent ``(T̂, Ĥ, Ŵ, 4·p_t·p_s²)`` from first-frame warps."""
    return codec.encode(camera_frames(first_frame, depth0, path), cfg.patch_t, cfg.patch_s)


def clip_to_latent(clip, cfg):
    return codec.encode(codec.to_model_range(np.asarray(clip, np.float32)), cfg.patch_t, cfg.patch_s)


def latent_to_clip(latent, cfg):
    return codec.from_model_range(codec.decode(latent, cfg.patch_t, cfg.patch_s))


def identity_path(cfg, intrinsics):
    return CameraPath.identity(cfg.frames, intrinsics)
