"""Per-modality condition encoders and the missing-modality policy.

Text, video and audio conditions are embedded into fixed-shape matrices
((32, d), (50, d), (50, d)).  A modality that is absent from a bundle yields
an exactly-zero matrix, except text, which is substituted with a task-specific
default prompt.  Inpainting zeroes the masked intervals of the conditioning
audio before embedding; completion conditions on a prefix with the remainder
zeroed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn as nn

from . import codec, synth
from .layers import TransformerBlock, sinusoid_features

TEXT_TOKENS = 32
VIDEO_TOKENS = 50
AUDIO_TOKENS = 50
VIDEO_FPS = 25
VIDEO_FRAMES = 250
FRAME_SHAPE = (8, 8)
VOCAB_SIZE = 512

PAD, OOV = 0, 1


def _build_vocabulary() -> tuple[str, ...]:
    words: set[str] = set()
    for name in synth.CATEGORY_NAMES:
        words.update(name.split())
    words.update(
        "the audio contains sound sounds of a an and zero one two three four five six "
        "seven eight nine ten in this occurs occur first followed by distinct from to "
        "seconds is present scene with it continues throughout features continuous "
        "interleaved then single after another silent generate for video music inpaint "
        "missing continue".split()
    )
    words.update(str(i) for i in range(11))
    entries = ["<pad>", "<oov>"] + sorted(words)
    entries += [f"<unused{i}>" for i in range(VOCAB_SIZE - len(entries))]
    return tuple(entries)


VOCABULARY: tuple[str, ...] = _build_vocabulary()
_WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def token_ids(tokens: list[str]) -> list[int]:
    return [_WORD_TO_ID.get(t, OOV) for t in tokens[:TEXT_TOKENS]]


class Task(str, Enum):
    T2A = "T2A"
    V2A = "V2A"
    TV2A = "TV2A"
    T2M = "T2M"
    V2M = "V2M"
    TV2M = "TV2M"
    INPAINT = "INPAINT"
    COMPLETE = "COMPLETE"


DEFAULT_PROMPTS: dict[Task, str] = {
    Task.T2A: "Generate audio for the video.",
    Task.V2A: "Generate audio for the video.",
    Task.TV2A: "Generate audio for the video.",
    Task.T2M: "Generate music for the video.",
    Task.V2M: "Generate music for the video.",
    Task.TV2M: "Generate music for the video.",
    Task.INPAINT: "Inpaint the missing audio.",
    Task.COMPLETE: "Continue the music.",
}


@dataclass
class ConditionBundle:
    """Optional per-modality inputs plus the task tag."""

    task: Task
    text: list[str] | None = None          # token list; None means absent
    video: np.ndarray | None = None        # (250, 8, 8) grayscale at 25 fps
    audio_cond: np.ndarray | None = None   # waveform, CLIP_SAMPLES long
    mask: list[tuple[float, float]] | None = None  # INPAINT: intervals to fill

    def validate(self) -> None:
        if self.task in (Task.INPAINT, Task.COMPLETE) and self.audio_cond is None:
            raise ValueError(f"{self.task.value} requires audio_cond")
        if self.mask is not None:
            if self.task is not Task.INPAINT:
                raise ValueError("mask is only valid for INPAINT bundles")
            spans = sorted(self.mask)
            for s, e in spans:
                if not (0.0 <= s < e <= 10.0):
                    raise ValueError(f"mask interval ({s}, {e}) outside [0, 10]")
            for (_, e1), (s2, _) in zip(spans, spans[1:]):
                if s2 < e1:
                    raise ValueError("mask intervals overlap")
        if self.video is not None and self.video.shape != (VIDEO_FRAMES, *FRAME_SHAPE):
            raise ValueError(f"video must be {(VIDEO_FRAMES, *FRAME_SHAPE)}, got {self.video.shape}")


def apply_mask(samples: np.ndarray, mask: list[tuple[float, float]]) -> np.ndarray:
    """Zero the masked intervals; idempotent by construction."""
    out = np.array(samples, dtype=np.float64)
    for s, e in mask:
        out[int(round(s * synth.SAMPLE_RATE)):int(round(e * synth.SAMPLE_RATE))] = 0.0
    return out


def prefix_condition(samples: np.ndarray, keep_seconds: float) -> np.ndarray:
    """Keep the leading `keep_seconds`, zero the remainder (music completion input)."""
    out = np.array(samples, dtype=np.float64)
    out[int(round(keep_seconds * synth.SAMPLE_RATE)):] = 0.0
    return out


class TextEncoder(nn.Module):
    """Token table + sinusoidal positions + projection head, padded to 32 rows."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.table = nn.Embedding(VOCAB_SIZE, dim)
        self.proj = nn.Linear(dim, dim)
        pos = sinusoid_features(torch.arange(TEXT_TOKENS), dim).float()
        self.register_buffer("positions", pos, persistent=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids: (B, 32) int64, PAD-filled. Pad rows get no positional offset."""
        emb = self.table(ids)
        real = (ids != PAD).unsqueeze(-1)
        emb = emb + self.positions.to(emb.dtype) * real
        return self.proj(emb)


def frame_difference_energy(frames: torch.Tensor) -> torch.Tensor:
    """(B, 250) per-frame mean squared difference to the previous frame; frame 0 is 0."""
    diffs = frames[:, 1:] - frames[:, :-1]
    energy = diffs.pow(2).mean(dim=(-2, -1))
    return torch.cat([torch.zeros_like(energy[:, :1]), energy], dim=1)


class VideoEncoder(nn.Module):
    """Semantic mean-pooled pixels at 5 fps plus motion-energy sync features,
    fused by addition and refined by a small temporal transformer."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        self.dim = dim
        self.semantic_proj = nn.Linear(FRAME_SHAPE[0] * FRAME_SHAPE[1], dim)
        self.sync_proj = nn.Linear(1, dim)
        self.blocks = nn.ModuleList([TransformerBlock(dim, heads) for _ in range(2)])
        self.proj = nn.Linear(dim, dim)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames: (B, 250, 8, 8) -> (B, 50, dim)"""
        if frames.shape[1:] != (VIDEO_FRAMES, *FRAME_SHAPE):
            raise ValueError(f"expected (B, {VIDEO_FRAMES}, 8, 8), got {tuple(frames.shape)}")
        b = frames.shape[0]
        group = VIDEO_FPS // 5
        pooled = frames.view(b, VIDEO_TOKENS, group, -1).mean(dim=2)
        semantic = self.semantic_proj(pooled)
        sync = frame_difference_energy(frames).view(b, VIDEO_TOKENS, group).mean(dim=2)
        fused = semantic + self.sync_proj(sync.unsqueeze(-1))
        for block in self.blocks:
            fused = block(fused)
        return self.proj(fused)


class AudioEncoder(nn.Module):
    """Latent-codec frames pooled to 5 fps, then a small temporal transformer.

    The input projection is bias-free so pre-transformer features inherit the
    codec's linearity in the waveform.
    """

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        self.dim = dim
        group = codec.FRAME_RATE // 5
        self.input_proj = nn.Linear(group * codec.FRAME_SIZE, dim, bias=False)
        self.blocks = nn.ModuleList([TransformerBlock(dim, heads) for _ in range(2)])
        self.proj = nn.Linear(dim, dim)

    def features(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, 500, 16) latents -> (B, 50, dim) pre-transformer features."""
        b, frames, channels = latents.shape
        group = frames // AUDIO_TOKENS
        return self.input_proj(latents.reshape(b, AUDIO_TOKENS, group * channels))

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        x = self.features(latents)
        for block in self.blocks:
            x = block(x)
        return self.proj(x)


class ConditionEncoder(nn.Module):
    """The three modality encoders plus the missing-modality policy."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        self.dim = dim
        self.text = TextEncoder(dim)
        self.video = VideoEncoder(dim, heads)
        self.audio = AudioEncoder(dim, heads)

    @property
    def _device_dtype(self) -> tuple[torch.device, torch.dtype]:
        p = self.text.table.weight
        return p.device, p.dtype

    def embed_text_ids(self, ids: torch.Tensor) -> torch.Tensor:
        return self.text(ids)

    def _pad_ids(self, bundles_tokens: list[list[str]]) -> torch.Tensor:
        device, _ = self._device_dtype
        out = torch.full((len(bundles_tokens), TEXT_TOKENS), PAD, dtype=torch.int64, device=device)
        for i, tokens in enumerate(bundles_tokens):
            ids = token_ids(tokens)
            if ids:
                out[i, : len(ids)] = torch.tensor(ids, dtype=torch.int64, device=device)
        return out

    def conditioning_audio(self, bundle: ConditionBundle) -> np.ndarray | None:
        """The waveform actually embedded for the audio branch, after masking."""
        if bundle.audio_cond is None:
            return None
        if bundle.task is Task.INPAINT and bundle.mask:
            return apply_mask(bundle.audio_cond, bundle.mask)
        return np.asarray(bundle.audio_cond, dtype=np.float64)

    def forward(self, bundles: list[ConditionBundle],
                drop_video: list[bool] | None = None,
                drop_text: list[bool] | None = None,
                drop_audio: list[bool] | None = None,
                null_all: list[bool] | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Batched (H_v, H_t, H_a); absent video/audio become exact zero matrices.

        The drop_* flags implement guidance dropout: a dropped video/audio
        behaves as absent, a dropped text falls back to the task's default
        prompt, and null_all replaces everything with zeros plus empty text.
        """
        b = len(bundles)
        device, dtype = self._device_dtype
        n = lambda flags: flags or [False] * b  # noqa: E731
        drop_video, drop_text, drop_audio, null_all = map(n, (drop_video, drop_text, drop_audio, null_all))

        tokens: list[list[str]] = []
        for i, bundle in enumerate(bundles):
            if null_all[i]:
                tokens.append([])
            elif bundle.text is None or drop_text[i]:
                tokens.append(tokenize(DEFAULT_PROMPTS[bundle.task]))
            else:
                tokens.append(list(bundle.text))
        h_text = self.text(self._pad_ids(tokens))

        h_video = torch.zeros(b, VIDEO_TOKENS, self.dim, device=device, dtype=dtype)
        vids = [i for i, bun in enumerate(bundles)
                if bun.video is not None and not drop_video[i] and not null_all[i]]
        if vids:
            stack = torch.stack([
                torch.as_tensor(bundles[i].video, dtype=dtype, device=device) for i in vids
            ])
            h_video[vids] = self.video(stack)

        h_audio = torch.zeros(b, AUDIO_TOKENS, self.dim, device=device, dtype=dtype)
        auds = [i for i, bun in enumerate(bundles)
                if bun.audio_cond is not None and not drop_audio[i] and not null_all[i]]
        if auds:
            latents = np.stack([codec.encode(self.conditioning_audio(bundles[i])).data for i in auds])
            h_audio[auds] = self.audio(torch.as_tensor(latents, dtype=dtype, device=device))
        return h_video, h_text, h_audio


def assemble_conditions(encoder: ConditionEncoder, bundle: ConditionBundle) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-bundle (H_v, H_t, H_a) with the missing-modality policy applied."""
    bundle.validate()
    h_v, h_t, h_a = encoder([bundle])
    return h_v[0], h_t[0], h_a[0]
