"""Denoising-diffusion machinery: schedule, forward corruption, training loss,
guided ancestral sampling, and inpainting replacement.

The forward process corrupts a latent over T steps with per-step Gaussian
noise of variance beta_t; its closed-form marginal is
z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.  The model is trained to predict
eps by mean squared error with uniformly sampled timesteps and condition
dropout for guidance.  The reverse step uses the posterior mean
mu = (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) with variance
fixed to beta_t.  Sampling over a strided timestep subsequence runs the same
step over the restricted schedule whose cumulative products match the parent
at the visited steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import codec
from .encoders import ConditionBundle, Task
from .model import GenerativeModel

# Codec latents of typical clips have RMS well under 1, which starves the
# conditional part of the noise-estimation loss (its weight scales with the
# data variance).  Training and sampling scale latents by a power of two
# (exact to divide back out) so event content carries real loss mass.
LATENT_SCALE = 32.0

# Scaled latent entries stay well inside this envelope for |samples| <= 1;
# clamping the implied clean latent to it keeps an imperfect denoiser's
# reverse chain from drifting off-distribution.
LATENT_CLAMP = 2.5 * LATENT_SCALE


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; cumulative products are exact sequential multiplies."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def _restricted_schedule(schedule: NoiseSchedule, visited: np.ndarray) -> NoiseSchedule:
    """Schedule over a timestep subsequence whose marginals match the parent."""
    abar = schedule.alpha_bars[visited]
    alphas = np.empty(len(visited))
    alphas[0] = abar[0]
    alphas[1:] = abar[1:] / abar[:-1]
    return NoiseSchedule(betas=1.0 - alphas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def timestep_subsequence(total: int, steps: int) -> np.ndarray:
    """Ascending uniform-stride subsequence that always includes t=0."""
    if not 1 <= steps <= total:
        raise ValueError(f"steps must be in [1, {total}], got {steps}")
    ts = np.unique(np.round(np.linspace(0, total - 1, steps)).astype(np.int64))
    if len(ts) != steps:
        raise AssertionError("rounded subsequence collapsed; should be unreachable")
    return ts


def q_sample(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward marginal z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.

    `t` may be a scalar (applied to the whole tensor) or a 1-D batch of
    timesteps matching z0's leading dimension.
    """
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {tuple(z0.shape)} and eps {tuple(eps.shape)} differ")
    t = torch.as_tensor(t, dtype=torch.int64)
    if torch.any(t < 0) or torch.any(t >= schedule.steps):
        raise ValueError("timestep outside the schedule")
    abar = torch.as_tensor(schedule.alpha_bars, dtype=z0.dtype, device=z0.device)[t]
    if abar.dim() == 1:
        abar = abar.view(-1, *([1] * (z0.dim() - 1)))
    return torch.sqrt(abar) * z0 + torch.sqrt(1.0 - abar) * eps


def cfg_eps(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free-guided estimate: uncond + scale * (cond - uncond)."""
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("conditional and unconditional estimates differ in shape")
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def p_step(z_t: torch.Tensor, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule,
           noise: torch.Tensor | None = None) -> torch.Tensor:
    """One reverse step; variance fixed to beta_t, no noise at the terminal step."""
    if z_t.shape != eps_hat.shape:
        raise ValueError("z_t and eps_hat differ in shape")
    if not 0 <= t < schedule.steps:
        raise ValueError(f"t={t} outside [0, {schedule.steps})")
    beta = float(schedule.betas[t])
    alpha = float(schedule.alphas[t])
    abar = float(schedule.alpha_bars[t])
    mean = (z_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t == 0 or noise is None:
        return mean
    return mean + np.sqrt(beta) * noise


def eps_loss(model: GenerativeModel, batch: list[tuple[torch.Tensor, ConditionBundle]],
             schedule: NoiseSchedule, generator: torch.Generator,
             drop_all_p: float = 0.1, drop_each_p: float = 0.1) -> torch.Tensor:
    """Noise-estimation MSE over a batch with uniform timesteps and condition dropout.

    With probability drop_all_p an item's conditions collapse to the null
    bundle (zero embeddings plus empty text); otherwise each present modality
    is independently dropped with probability drop_each_p (missing text falls
    back to the task default prompt).
    """
    if not batch:
        raise ValueError("empty batch")
    z0 = torch.stack([z for z, _ in batch])
    bundles = [b for _, b in batch]
    n = len(batch)
    t = torch.randint(0, schedule.steps, (n,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    coins = torch.rand((n, 4), generator=generator)
    null_all = (coins[:, 0] < drop_all_p).tolist()
    drop_video = (coins[:, 1] < drop_each_p).tolist()
    drop_text = (coins[:, 2] < drop_each_p).tolist()
    drop_audio = (coins[:, 3] < drop_each_p).tolist()
    cond = model.conditions(
        bundles, null_all=null_all, drop_video=drop_video,
        drop_text=drop_text, drop_audio=drop_audio,
    )
    z_t = q_sample(z0, t, eps, schedule)
    eps_hat = model.predict_noise(z_t, t, cond)
    return (eps - eps_hat).pow(2).mean()


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 250
    guidance_scale: float = 7.0
    seed: int = 0


def _unmasked_frames(mask: list[tuple[float, float]], frames: int, frame_rate: int) -> torch.Tensor:
    """Frames whose span does not intersect any masked interval."""
    keep = torch.ones(frames, dtype=torch.bool)
    for s, e in mask:
        first = int(np.floor(s * frame_rate))
        last = int(np.ceil(e * frame_rate))
        keep[first:last] = False
    return keep


def sample_batch(model: GenerativeModel, bundles: list[ConditionBundle],
                 sampler: SamplerConfig, schedule: NoiseSchedule,
                 ) -> list[tuple[codec.LatentSeq, np.ndarray]]:
    """Ancestral CFG sampling of several bundles in one batched reverse chain.

    INPAINT bundles pin latent frames that lie fully inside unmasked regions to
    the forward-diffused known signal after every reverse step, ending with the
    exact clean values, so the decoded output matches the known audio there.
    """
    if not bundles:
        raise ValueError("no bundles to sample")
    for bundle in bundles:
        bundle.validate()
    if sampler.guidance_scale < 0:
        raise ValueError("guidance scale must be nonnegative")
    cfg_model = model.config
    visited = timestep_subsequence(schedule.steps, sampler.steps)
    sub = _restricted_schedule(schedule, visited)
    generator = torch.Generator().manual_seed(sampler.seed)
    n = len(bundles)

    was_training = model.training
    model.eval()
    with torch.no_grad():
        cond = model.conditions(bundles)
        null = model.null_conditions(n)
        shape = (n, cfg_model.latent_frames, cfg_model.latent_channels)
        z = torch.randn(shape, generator=generator)

        keep = torch.zeros(n, cfg_model.latent_frames, 1, dtype=torch.bool)
        z_known = torch.zeros(shape)
        any_inpaint = False
        for i, bundle in enumerate(bundles):
            if bundle.task is Task.INPAINT and bundle.mask:
                any_inpaint = True
                known = codec.encode(np.asarray(bundle.audio_cond, dtype=np.float64)).data
                z_known[i] = torch.as_tensor(known * LATENT_SCALE, dtype=z.dtype)
                keep[i, :, 0] = _unmasked_frames(bundle.mask, cfg_model.latent_frames, codec.FRAME_RATE)

        for k in range(len(visited) - 1, -1, -1):
            t_orig = int(visited[k])
            t_batch = torch.full((n,), t_orig, dtype=torch.int64)
            guided = cfg_eps(
                model.predict_noise(z, t_batch, cond),
                model.predict_noise(z, t_batch, null),
                sampler.guidance_scale,
            )
            # clamp the implied clean latent; a no-op while predictions stay on-manifold
            abar = float(sub.alpha_bars[k])
            x0_hat = (z - np.sqrt(1.0 - abar) * guided) / np.sqrt(abar)
            clamped = torch.clamp(x0_hat, -LATENT_CLAMP, LATENT_CLAMP)
            if not torch.equal(clamped, x0_hat):
                guided = (z - np.sqrt(abar) * clamped) / np.sqrt(1.0 - abar)
            noise = torch.randn(shape, generator=generator) if k > 0 else None
            z = p_step(z, k, guided, sub, noise)
            if any_inpaint:
                if k > 0:
                    fresh = torch.randn(shape, generator=generator)
                    target = q_sample(z_known, int(visited[k - 1]), fresh, schedule)
                else:
                    target = z_known
                z = torch.where(keep, target, z)
    if was_training:
        model.train()

    out = []
    for i in range(n):
        latent = codec.LatentSeq(np.asarray(z[i].double().numpy() / LATENT_SCALE, dtype=np.float64))
        wave = np.clip(codec.decode(latent), -1.0, 1.0)
        out.append((latent, wave))
    return out


def sample(model: GenerativeModel, bundle: ConditionBundle, sampler: SamplerConfig,
           schedule: NoiseSchedule) -> tuple[codec.LatentSeq, np.ndarray]:
    """Single-bundle ancestral CFG sampling; see sample_batch."""
    return sample_batch(model, [bundle], sampler, schedule)[0]
