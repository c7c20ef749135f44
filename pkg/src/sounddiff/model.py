"""Composition of condition encoders, adaptive fusion, and the latent denoiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from . import codec
from .denoiser import LatentDenoiser
from .encoders import ConditionEncoder, ConditionBundle, Task
from .fusion import AdaptiveFusion, FusionMode


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 4
    heads: int = 4
    queries: int = 8
    latent_frames: int = 500
    latent_channels: int = codec.FRAME_SIZE
    diffusion_steps: int = 1000

    def fingerprint_fields(self) -> dict:
        return {
            "dim": self.dim,
            "layers": self.layers,
            "heads": self.heads,
            "queries": self.queries,
            "latent_frames": self.latent_frames,
            "latent_channels": self.latent_channels,
            "diffusion_steps": self.diffusion_steps,
        }


class GenerativeModel(nn.Module):
    """Anything-to-audio denoising model over codec latents."""

    def __init__(self, config: ModelConfig = ModelConfig(),
                 fusion_mode: FusionMode = FusionMode.FULL, seed: int = 0):
        super().__init__()
        self.config = config
        self.fusion_mode = fusion_mode
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.encoder = ConditionEncoder(config.dim, config.heads)
            self.fusion = AdaptiveFusion(config.dim, config.queries)
            self.denoiser = LatentDenoiser(
                dim=config.dim, layers=config.layers, heads=config.heads,
                channels=config.latent_channels, frames=config.latent_frames,
                max_steps=config.diffusion_steps,
            )

    def conditions(self, bundles: list[ConditionBundle], **drop_flags) -> torch.Tensor:
        """Fused conditioning matrix (B, 132, d) for a batch of bundles."""
        h_v, h_t, h_a = self.encoder(bundles, **drop_flags)
        _, _, _, fused = self.fusion(h_v, h_t, h_a, mode=self.fusion_mode)
        return fused

    def null_conditions(self, batch_size: int) -> torch.Tensor:
        """Unconditional branch: zero video/audio embeddings plus empty text."""
        null = [ConditionBundle(task=Task.T2A, text=[]) for _ in range(batch_size)]
        return self.conditions(null)

    def predict_noise(self, z_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.denoiser(z_t, t, cond)

    def parameter_tree(self) -> dict[str, torch.Tensor]:
        return dict(self.named_parameters())
