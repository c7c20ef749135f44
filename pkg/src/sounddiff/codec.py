"""Invertible latent codec: per-frame fixed orthonormal transform.

The waveform is cut into frames of FRAME_SIZE samples; each frame is rotated
by a fixed orthonormal matrix (QR of a seeded random matrix with the sign
convention pinned, so the constant is reproducible).  encode/decode form an
exact linear bijection up to float round-off, which keeps reconstruction and
inpainting properties directly testable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FRAME_SIZE = 16
FRAME_RATE = 50  # frames per second at the 800 Hz sample rate

_MAGIC = b"LSQ1"


def _mixing_matrix() -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(0xC0DEC))
    q, r = np.linalg.qr(rng.standard_normal((FRAME_SIZE, FRAME_SIZE)))
    return q * np.sign(np.diag(r))


MIXING_MATRIX: np.ndarray = _mixing_matrix()


@dataclass
class LatentSeq:
    """(frames x channels) latent representation of a clip."""

    data: np.ndarray
    frame_rate: int = FRAME_RATE

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


def encode(samples: np.ndarray) -> LatentSeq:
    w = np.asarray(samples, dtype=np.float64)
    if w.ndim != 1 or w.size % FRAME_SIZE != 0:
        raise ValueError(f"waveform length must be a multiple of {FRAME_SIZE}, got shape {w.shape}")
    frames = w.reshape(-1, FRAME_SIZE)
    return LatentSeq(frames @ MIXING_MATRIX)


def decode(latent: LatentSeq) -> np.ndarray:
    z = np.asarray(latent.data, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != FRAME_SIZE:
        raise ValueError(f"latent must be (frames, {FRAME_SIZE}), got shape {z.shape}")
    return (z @ MIXING_MATRIX.T).reshape(-1)


def dump_latent(latent: LatentSeq) -> bytes:
    """16-byte header (magic, frames, channels, frame_rate) + float32 LE payload."""
    z = np.ascontiguousarray(latent.data, dtype="<f4")
    header = _MAGIC + struct.pack("<III", z.shape[0], z.shape[1], latent.frame_rate)
    return header + z.tobytes()


def load_latent(blob: bytes) -> LatentSeq:
    if blob[:4] != _MAGIC:
        raise ValueError("bad latent magic")
    frames, channels, frame_rate = struct.unpack("<III", blob[4:16])
    data = np.frombuffer(blob[16:], dtype="<f4").reshape(frames, channels).astype(np.float64)
    return LatentSeq(data, frame_rate=frame_rate)
