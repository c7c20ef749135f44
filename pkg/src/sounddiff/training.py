"""Optimization loop: AdamW updates, warmup/decay schedule, EMA shadow, checkpoints.

Per-step randomness (batch choice, caption variant, timesteps, noise, condition
dropout) is drawn from a generator keyed by (seed, step), so training resumed
from a checkpoint is bit-identical to an uninterrupted run.  Checkpoints store
every tensor as row-major float32 LE records behind a config fingerprint and a
trailing CRC32.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule, eps_loss
from .encoders import ConditionBundle
from .model import GenerativeModel

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_MAGIC = b"SDIFFCK1"
_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class FingerprintError(CheckpointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    base_lr: float = 2e-4
    warmup: int = 500
    decay_start: int = 5000
    gamma: float = 0.9995
    weight_decay: float = 1e-3
    ema_decay: float = 0.999
    batch_size: int = 16
    grad_clip: float | None = None   # global-norm clip; off by default
    drop_all_p: float = 0.1
    drop_each_p: float = 0.1
    seed: int = 0


def lr_at(step: int, base: float, warmup: int, decay_start: int, gamma: float) -> float:
    """base * min(1, step/warmup) * gamma^max(0, step - decay_start)."""
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    if step < 0:
        raise ValueError("step must be >= 0")
    return base * min(1.0, step / warmup) * gamma ** max(0, step - decay_start)


def step_generator(seed: int, step: int, stream: str = "train") -> torch.Generator:
    """Deterministic RNG stream keyed by (seed, step)."""
    digest = hashlib.sha256(f"{stream}:{seed}:{step}".encode()).digest()
    gen = torch.Generator()
    gen.manual_seed(int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF)
    return gen


def config_fingerprint(fields: dict) -> int:
    blob = json.dumps(fields, sort_keys=True).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class TrainState:
    model: GenerativeModel
    ema: dict[str, torch.Tensor]
    moment1: dict[str, torch.Tensor]
    moment2: dict[str, torch.Tensor]
    step: int
    fingerprint: int

    @classmethod
    def init(cls, model: GenerativeModel, fingerprint: int) -> "TrainState":
        params = model.parameter_tree()
        return cls(
            model=model,
            ema={k: p.detach().clone() for k, p in params.items()},
            moment1={k: torch.zeros_like(p) for k, p in params.items()},
            moment2={k: torch.zeros_like(p) for k, p in params.items()},
            step=0,
            fingerprint=fingerprint,
        )


def adamw_update(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
                 m1: dict[str, torch.Tensor], m2: dict[str, torch.Tensor],
                 lr: float, weight_decay: float, step: int) -> None:
    """In-place decoupled-weight-decay Adam with bias correction.

    Decay is applied to the parameter before the moment step, then the
    bias-corrected moment ratio is subtracted.  Uses foreach kernels (same
    per-tensor arithmetic, less per-step overhead on small tensors).
    """
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    names = list(params)
    with torch.no_grad():
        ps = [params[n] for n in names]
        gs = [grads[n] for n in names]
        m1s = [m1[n] for n in names]
        m2s = [m2[n] for n in names]
        torch._foreach_mul_(ps, 1.0 - lr * weight_decay)
        torch._foreach_mul_(m1s, ADAM_BETA1)
        torch._foreach_add_(m1s, gs, alpha=1.0 - ADAM_BETA1)
        torch._foreach_mul_(m2s, ADAM_BETA2)
        torch._foreach_addcmul_(m2s, gs, gs, value=1.0 - ADAM_BETA2)
        denoms = torch._foreach_div(m2s, bc2)
        torch._foreach_sqrt_(denoms)
        torch._foreach_add_(denoms, ADAM_EPS)
        torch._foreach_addcdiv_(ps, torch._foreach_div(m1s, bc1), denoms, value=-lr)


def ema_update(ema: dict[str, torch.Tensor], params: dict[str, torch.Tensor], decay: float) -> None:
    names = list(params)
    with torch.no_grad():
        shadows = [ema[n] for n in names]
        torch._foreach_mul_(shadows, decay)
        torch._foreach_add_(shadows, [params[n] for n in names], alpha=1.0 - decay)


def train_step(state: TrainState, batch: list[tuple[torch.Tensor, ConditionBundle]],
               schedule: NoiseSchedule, cfg: TrainerConfig,
               generator: torch.Generator | None = None) -> float:
    """One optimization step; returns the scalar loss."""
    model = state.model
    if generator is None:
        generator = step_generator(cfg.seed, state.step)
    loss = eps_loss(model, batch, schedule, generator,
                    drop_all_p=cfg.drop_all_p, drop_each_p=cfg.drop_each_p)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at step {state.step}")
    model.zero_grad(set_to_none=True)
    loss.backward()

    params = model.parameter_tree()
    grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in params.items()}
    if cfg.grad_clip is not None:
        total = torch.sqrt(sum(g.pow(2).sum() for g in grads.values()))
        if float(total) > cfg.grad_clip:
            factor = cfg.grad_clip / (float(total) + 1e-12)
            grads = {k: g * factor for k, g in grads.items()}

    state.step += 1
    lr = lr_at(state.step, cfg.base_lr, cfg.warmup, cfg.decay_start, cfg.gamma)
    adamw_update(params, grads, state.moment1, state.moment2, lr, cfg.weight_decay, state.step)
    ema_update(state.ema, params, cfg.ema_decay)
    return value


@dataclass
class ClipRecord:
    """One training clip: scaled latent, caption token variants, raw audio."""

    latent: torch.Tensor                 # (frames, channels), already scaled
    captions: list[list[str]]            # tokenized caption variants
    wave: np.ndarray | None = None       # needed for INPAINT / COMPLETE bundles


def _bundle_for(rec: ClipRecord, task: "Task", tokens: list[str],
                gen: torch.Generator) -> ConditionBundle:
    from .encoders import Task, prefix_condition

    if task is Task.INPAINT:
        if rec.wave is None:
            raise ValueError("INPAINT training needs raw waveforms in the dataset")
        r = torch.rand(2, generator=gen)
        start = 1.0 + 6.0 * float(r[0])
        dur = 1.0 + 2.0 * float(r[1])
        return ConditionBundle(task=task, text=tokens, audio_cond=rec.wave,
                               mask=[(round(start, 3), round(min(start + dur, 9.5), 3))])
    if task is Task.COMPLETE:
        if rec.wave is None:
            raise ValueError("COMPLETE training needs raw waveforms in the dataset")
        keep = 3.0 + 4.0 * float(torch.rand(1, generator=gen))
        return ConditionBundle(task=task, text=tokens,
                               audio_cond=prefix_condition(rec.wave, keep))
    return ConditionBundle(task=task, text=tokens)


def select_batch(dataset: list[ClipRecord], cfg: TrainerConfig, step: int,
                 task: "Task | None" = None,
                 ) -> tuple[list[tuple[torch.Tensor, ConditionBundle]], torch.Generator]:
    """Step-keyed batch selection and caption-variant choice.

    Returns the batch plus the per-step generator (already advanced past the
    selection draws) to be reused for the loss randomness.
    """
    from .encoders import Task

    task = task or Task.T2A
    gen = step_generator(cfg.seed, step)
    idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=gen)
    batch = []
    for i in idx.tolist():
        rec = dataset[i]
        which = int(torch.randint(0, len(rec.captions), (1,), generator=gen))
        batch.append((rec.latent, _bundle_for(rec, task, rec.captions[which], gen)))
    return batch, gen


def run_training(state: TrainState, dataset: list[ClipRecord], schedule: NoiseSchedule,
                 cfg: TrainerConfig, steps: int, task: "Task | None" = None,
                 on_step=None) -> list[float]:
    """Run `steps` optimization steps; deterministic and resumable at any step."""
    losses = []
    for _ in range(steps):
        batch, gen = select_batch(dataset, cfg, state.step, task=task)
        loss = train_step(state, batch, schedule, cfg, generator=gen)
        losses.append(loss)
        if on_step is not None:
            on_step(state.step, loss)
    return losses


def validation_loss(model, records: list[ClipRecord], schedule: NoiseSchedule,
                    seed: int = 1234) -> float:
    """Mean loss over fixed (clip, t, eps) draws; comparable across model variants."""
    from .diffusion import eps_loss
    from .encoders import Task

    was_training = model.training
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i, rec in enumerate(records):
            gen = step_generator(seed, i, stream="val")
            bundle = ConditionBundle(task=Task.T2A, text=rec.captions[0])
            loss = eps_loss(model, [(rec.latent, bundle)], schedule, gen,
                            drop_all_p=0.0, drop_each_p=0.0)
            total += float(loss)
    if was_training:
        model.train()
    return total / max(1, len(records))


# -- Checkpoint serialization ---------------------------------------------------

def _tensor_records(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    records = []
    for name, p in sorted(state.model.parameter_tree().items()):
        records.append((f"model.{name}", p))
    for prefix, tree in (("ema", state.ema), ("m1", state.moment1), ("m2", state.moment2)):
        for name, p in sorted(tree.items()):
            records.append((f"{prefix}.{name}", p))
    return records


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    chunks = [_MAGIC, struct.pack("<IQQ", _VERSION, state.fingerprint, state.step)]
    records = _tensor_records(state)
    chunks.append(struct.pack("<I", len(records)))
    for name, tensor in records:
        data = tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(b"f4")
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _parse_checkpoint(blob: bytes) -> tuple[int, int, dict[str, np.ndarray]]:
    if len(blob) < 28 or blob[:8] != _MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC mismatch")
    version, fingerprint, step = struct.unpack("<IQQ", blob[8:28])
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", blob[28:32])
    tensors: dict[str, np.ndarray] = {}
    offset = 32
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode()
        offset += name_len
        dtype = blob[offset:offset + 2]
        offset += 2
        if dtype != b"f4":
            raise CheckpointError(f"unsupported dtype {dtype!r} for {name}")
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
    return fingerprint, step, tensors


def load_checkpoint(path: str | Path, model: GenerativeModel, fingerprint: int) -> TrainState:
    fp, step, tensors = _parse_checkpoint(Path(path).read_bytes())
    if fp != fingerprint:
        raise FingerprintError(f"checkpoint fingerprint {fp:#x} != configured {fingerprint:#x}")
    state = TrainState.init(model, fingerprint)
    state.step = step
    params = model.parameter_tree()
    expected = {f"model.{k}" for k in params} | {
        f"{prefix}.{k}" for prefix in ("ema", "m1", "m2") for k in params
    }
    if expected != set(tensors):
        raise CheckpointError("checkpoint tensor names do not match the model")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(torch.from_numpy(tensors[f"model.{name}"].copy()))
            state.ema[name] = torch.from_numpy(tensors[f"ema.{name}"].copy())
            state.moment1[name] = torch.from_numpy(tensors[f"m1.{name}"].copy())
            state.moment2[name] = torch.from_numpy(tensors[f"m2.{name}"].copy())
    return state


def load_ema_into(model: GenerativeModel, state: TrainState) -> None:
    """Copy the EMA shadow into the live parameters (inference weights)."""
    with torch.no_grad():
        for name, p in model.parameter_tree().items():
            p.copy_(state.ema[name])
