"""Small transformer building blocks shared by the encoders and the denoiser."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoid_features(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos features; position 0 maps to all-zero sines and all-one cosines."""
    if dim % 2 != 0:
        raise ValueError("feature dim must be even")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(positions.device)
    angles = positions.double().unsqueeze(-1) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class Attention(nn.Module):
    """Multi-head attention with explicit projections (works in float64)."""

    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        context = x if context is None else context
        b, tq, d = x.shape
        tk = context.shape[1]
        hd = d // self.heads
        q = self.q(x).view(b, tq, self.heads, hd).transpose(1, 2)
        k = self.k(context).view(b, tk, self.heads, hd).transpose(1, 2)
        v = self.v(context).view(b, tk, self.heads, hd).transpose(1, 2)
        attended = F.scaled_dot_product_attention(q, k, v)
        return self.out(attended.transpose(1, 2).reshape(b, tq, d))


class FeedForward(nn.Module):
    def __init__(self, dim: int, expansion: int = 2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, expansion * dim),
            nn.GELU(),
            nn.Linear(expansion * dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feedforward; permutation-equivariant (no positions)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))
