"""Invertible space-time-to-depth codec standing in for a video autoencoder.

``encode`` folds each ``p_t x p_s x p_s`` block of a clip into the channel
axis; ``decode`` is its exact inverse. Both accept numpy arrays or torch
tensors with any number of leading batch dimensions.
"""
from __future__ import annotations

from einops import rearrange

from .errors import ConfigError


def _check(frames, height, width, pt, ps):
    if frames % pt or height % ps or width % ps:
        raise ConfigError(
            f"clip {frames}x{height}x{width} not divisible by patch sizes (p_t={pt}, p_s={ps})", "patch")


def encode(clip, pt, ps):
    """``(..., T, H, W, C) -> (..., T/pt, H/ps, W/ps, C*pt*ps*ps)``."""
    _check(*clip.shape[-4:-1], pt, ps)
    return rearrange(clip, "... (t a) (h b) (w c) ch -> ... t h w (a b c ch)", a=pt, b=ps, c=ps)


def decode(latent, pt, ps):
    if latent.shape[-1] % (pt * ps * ps):
        raise ConfigError(f"latent width {latent.shape[-1]} not divisible by {pt * ps * ps}", "patch")
    return rearrange(latent, "... t h w (a b c ch) -> ... (t a) (h b) (w c) ch", a=pt, b=ps, c=ps)


def to_model_range(clip):
    """Pixel values in ``[0, 1]`` to the ``[-1, 1]`` range the network sees."""
    return clip * 2 - 1


def from_model_range(x):
    return (x + 1) / 2
