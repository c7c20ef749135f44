"""Noise-prediction transformer over latent frames with conditioning cross-attention.

Latent frames are projected to the model width, tagged with fixed sinusoidal
positions, and processed by pre-norm blocks of self-attention, cross-attention
to the fused condition matrix, and a feedforward.  The timestep embedding is
added to every block's residual stream before its norms.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import Attention, FeedForward, sinusoid_features


def timestep_features(t: torch.Tensor, dim: int, max_steps: int) -> torch.Tensor:
    """Pre-projection sinusoidal features; distinct timesteps map to distinct rows."""
    if torch.any(t < 0) or torch.any(t >= max_steps):
        raise ValueError(f"timestep out of range [0, {max_steps})")
    return sinusoid_features(t, dim)


class DenoiserBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = x + t_emb.unsqueeze(1)
        x = x + self.attn(self.norm1(x))
        x = x + self.cross(self.norm2(x), cond)
        return x + self.ff(self.norm3(x))


class LatentDenoiser(nn.Module):
    def __init__(self, dim: int = 64, layers: int = 4, heads: int = 4,
                 channels: int = 16, frames: int = 500, max_steps: int = 1000):
        super().__init__()
        self.dim = dim
        self.channels = channels
        self.frames = frames
        self.max_steps = max_steps
        self.input_proj = nn.Linear(channels, dim)
        self.time_proj = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))
        self.blocks = nn.ModuleList([DenoiserBlock(dim, heads) for _ in range(layers)])
        # no final norm: the residual stream keeps a path that scales linearly with
        # the input, which the noise estimate needs at high noise levels.  No output
        # bias either: a constant per-channel offset decodes to a comb artifact.
        self.output_proj = nn.Linear(dim, channels, bias=False)
        pos = sinusoid_features(torch.arange(frames), dim).float()
        self.register_buffer("positions", pos, persistent=False)

    def timestep_embed(self, t: torch.Tensor) -> torch.Tensor:
        feats = timestep_features(t, self.dim, self.max_steps)
        return self.time_proj(feats.to(self.input_proj.weight.dtype))

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """z_t: (B, frames, channels); t: (B,) int64; cond: (B, T_c, dim) -> noise estimate shaped like z_t."""
        if z_t.dim() != 3 or z_t.shape[1:] != (self.frames, self.channels):
            raise ValueError(f"expected (B, {self.frames}, {self.channels}), got {tuple(z_t.shape)}")
        if cond.dim() != 3 or cond.shape[-1] != self.dim or cond.shape[0] != z_t.shape[0]:
            raise ValueError(f"condition shape {tuple(cond.shape)} does not match")
        t_emb = self.timestep_embed(t)
        x = self.input_proj(z_t) + self.positions.to(z_t.dtype)
        for block in self.blocks:
            x = block(x, t_emb, cond)
        return self.output_proj(x)
