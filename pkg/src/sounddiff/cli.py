"""Batch command-line surface tying the pipeline together.

Subcommands: synth (dataset generation), train, sample, eval (distribution
metrics), bench (instruction-following accuracy via the oracle detector), and
ablate (fusion-mode comparison).  Configuration is a flat JSON file of dotted
keys; every key is mirrored as a ``--key value`` override, with precedence
CLI > file > defaults.  Each artifact directory receives a sidecar.json that
reproduces the run when passed back as ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import captions, codec, detector, diffusion, metrics, synth, training, wavio
from .annotations import dump_annotation, dump_prompts, load_annotation
from .config import DEFAULTS, ConfigError, fingerprint_fields, load_config, write_sidecar
from .encoders import ConditionBundle, Task, tokenize
from .fusion import FusionMode
from .model import GenerativeModel, ModelConfig
from .training import (
    ClipRecord,
    TrainerConfig,
    TrainState,
    config_fingerprint,
    load_checkpoint,
    load_ema_into,
    run_training,
    save_checkpoint,
)

COMMANDS = ("synth", "train", "sample", "eval", "bench", "ablate")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="sounddiff", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="flat JSON config file")
    for key, default in DEFAULTS.items():
        parser.add_argument(f"--{key}", dest=key, default=None, metavar=str(default))
    return parser


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        dim=cfg["model.dim"], layers=cfg["model.layers"], heads=cfg["model.heads"],
        queries=cfg["model.queries"], diffusion_steps=cfg["schedule.steps"],
    )


def _trainer_config(cfg: dict) -> TrainerConfig:
    return TrainerConfig(
        base_lr=cfg["trainer.lr"], warmup=cfg["trainer.warmup"],
        decay_start=cfg["trainer.decay_start"], gamma=cfg["trainer.gamma"],
        weight_decay=cfg["trainer.weight_decay"], ema_decay=cfg["trainer.ema_decay"],
        batch_size=cfg["trainer.batch"],
        grad_clip=cfg["trainer.grad_clip"] or None,
        drop_all_p=cfg["trainer.drop_all"], drop_each_p=cfg["trainer.drop_each"],
        seed=cfg["trainer.seed"],
    )


def _schedule(cfg: dict) -> diffusion.NoiseSchedule:
    return diffusion.make_schedule(
        cfg["schedule.steps"], cfg["schedule.beta_start"], cfg["schedule.beta_end"]
    )


def _sampler(cfg: dict, seed: int | None = None, steps: int | None = None) -> diffusion.SamplerConfig:
    return diffusion.SamplerConfig(
        steps=steps or cfg["sampler.steps"], guidance_scale=cfg["sampler.scale"],
        seed=cfg["sampler.seed"] if seed is None else seed,
    )


def _out_dir(cfg: dict) -> Path:
    if not cfg["out.dir"]:
        raise UsageError("out.dir is required")
    out = Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _category_pool(cfg: dict) -> list[str]:
    if not cfg["data.categories"]:
        return list(synth.CATEGORY_NAMES)
    pool = [c.strip() for c in cfg["data.categories"].split(",") if c.strip()]
    unknown = [c for c in pool if c not in synth.CATEGORY_BY_NAME]
    if unknown:
        raise UsageError(f"unknown categories: {unknown}")
    return pool


def cmd_synth(cfg: dict) -> int:
    out = _out_dir(cfg)
    pool = _category_pool(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg["data.seed"]))
    manifest = []
    for i in range(cfg["data.clips"]):
        spec = synth.random_spec(rng, max_categories=cfg["data.max_categories"], categories=pool)
        clip_id = f"clip_{i:05d}"
        wave, ann = synth.gen_clip(spec, seed=cfg["data.seed"] * 1_000_003 + i, clip_id=clip_id)
        wavio.write_wav(out / f"{clip_id}.wav", wave, synth.SAMPLE_RATE)
        (out / f"{clip_id}.json").write_text(dump_annotation(ann))
        (out / f"{clip_id}.captions.json").write_text(
            json.dumps([ann.caption] + captions.augment_captions(ann), indent=2)
        )
        manifest.append({"id": clip_id, "categories": list(ann.category)})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    write_sidecar(out, cfg, "synth")
    print(f"wrote {len(manifest)} clips to {out}")
    return 0


def load_dataset(data_dir: str | Path, keep_waves: bool = False) -> list[ClipRecord]:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"no manifest.json under {root}")
    records = []
    for entry in json.loads(manifest_path.read_text()):
        clip_id = entry["id"]
        wave, _ = wavio.read_wav(root / f"{clip_id}.wav")
        latent = torch.as_tensor(
            codec.encode(wave).data * diffusion.LATENT_SCALE, dtype=torch.float32
        )
        caption_variants = json.loads((root / f"{clip_id}.captions.json").read_text())
        records.append(ClipRecord(
            latent=latent,
            captions=[tokenize(c) for c in caption_variants],
            wave=wave if keep_waves else None,
        ))
    if not records:
        raise UsageError(f"dataset at {root} is empty")
    return records


def _fingerprint(cfg: dict) -> int:
    return config_fingerprint(fingerprint_fields(cfg))


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    if not cfg["data.dir"]:
        raise UsageError("data.dir is required")
    task = Task(cfg["task"])
    if task not in (Task.T2A, Task.T2M, Task.INPAINT, Task.COMPLETE):
        raise UsageError("train supports tasks T2A, T2M, INPAINT, COMPLETE")
    dataset = load_dataset(cfg["data.dir"], keep_waves=task in (Task.INPAINT, Task.COMPLETE))
    model = GenerativeModel(_model_config(cfg), fusion_mode=FusionMode(cfg["fusion.mode"]),
                            seed=cfg["model.seed"])
    state = TrainState.init(model, fingerprint=_fingerprint(cfg))
    if cfg["checkpoint.path"]:
        state = load_checkpoint(cfg["checkpoint.path"], model, _fingerprint(cfg))
    schedule = _schedule(cfg)
    trainer_cfg = _trainer_config(cfg)
    rows = []

    def log(step, loss):
        rows.append((step, loss, training.lr_at(step, trainer_cfg.base_lr, trainer_cfg.warmup,
                                                trainer_cfg.decay_start, trainer_cfg.gamma)))

    run_training(state, dataset, schedule, trainer_cfg, steps=cfg["trainer.steps"],
                 task=task, on_step=log)
    with open(out / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "lr"])
        writer.writerows(rows)
    save_checkpoint(state, out / "checkpoint.ckpt")
    write_sidecar(out, cfg, "train")
    print(f"trained {cfg['trainer.steps']} steps; final loss {rows[-1][1]:.4f}; checkpoint at {out}")
    return 0


def _parse_mask(text: str) -> list[tuple[float, float]]:
    spans = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, _, hi = part.partition("-")
        spans.append((float(lo), float(hi)))
    return spans


def _bundle_from_config(cfg: dict) -> ConditionBundle:
    task = Task(cfg["task"])
    text = tokenize(cfg["sample.text"]) if cfg["sample.text"] else None
    audio = None
    if cfg["sample.wav"]:
        audio, rate = wavio.read_wav(cfg["sample.wav"])
        if rate != synth.SAMPLE_RATE or audio.shape[0] != synth.CLIP_SAMPLES:
            raise UsageError(f"sample.wav must be {synth.CLIP_SAMPLES} samples at {synth.SAMPLE_RATE} Hz")
    video = None
    if cfg["sample.video"]:
        video = np.load(cfg["sample.video"])
    mask = _parse_mask(cfg["sample.mask"]) if cfg["sample.mask"] else None
    bundle = ConditionBundle(task=task, text=text, video=video, audio_cond=audio, mask=mask)
    bundle.validate()
    return bundle


def _load_model_for_inference(cfg: dict) -> GenerativeModel:
    if not cfg["checkpoint.path"]:
        raise UsageError("checkpoint.path is required")
    model = GenerativeModel(_model_config(cfg), fusion_mode=FusionMode(cfg["fusion.mode"]),
                            seed=cfg["model.seed"])
    state = load_checkpoint(cfg["checkpoint.path"], model, _fingerprint(cfg))
    load_ema_into(model, state)
    return model


def _schedule_fingerprint(cfg: dict) -> int:
    return config_fingerprint({
        "steps": cfg["schedule.steps"],
        "beta_start": cfg["schedule.beta_start"],
        "beta_end": cfg["schedule.beta_end"],
    })


def cmd_sample(cfg: dict) -> int:
    out = _out_dir(cfg)
    model = _load_model_for_inference(cfg)
    schedule = _schedule(cfg)
    bundle = _bundle_from_config(cfg)
    for j in range(cfg["sample.count"]):
        seed = cfg["sampler.seed"] + j
        sampler = _sampler(cfg, seed=seed)
        _, wave = diffusion.sample(model, bundle, sampler, schedule)
        wavio.write_wav(out / f"sample_{seed:05d}.wav", wave, synth.SAMPLE_RATE)
        (out / f"sample_{seed:05d}.json").write_text(json.dumps({
            "seed": seed,
            "steps": sampler.steps,
            "scale": sampler.guidance_scale,
            "task": bundle.task.value,
            "text": cfg["sample.text"],
            "schedule_fingerprint": f"{_schedule_fingerprint(cfg):016x}",
        }, indent=2))
    write_sidecar(out, cfg, "sample")
    print(f"wrote {cfg['sample.count']} sample(s) to {out}")
    return 0


def _wavs_in(path: str) -> list[Path]:
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise UsageError(f"no .wav files under {path}")
    return files


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    if not cfg["eval.generated"] or not cfg["eval.reference"]:
        raise UsageError("eval.generated and eval.reference are required")
    gen_files = _wavs_in(cfg["eval.generated"])
    ref_files = _wavs_in(cfg["eval.reference"])
    gen_waves = [wavio.read_wav(p)[0] for p in gen_files]
    ref_waves = [wavio.read_wav(p)[0] for p in ref_files]

    gen_emb = np.stack([metrics.toy_embed(w) for w in gen_waves])
    ref_emb = np.stack([metrics.toy_embed(w) for w in ref_waves])
    report = metrics.MetricReport(metadata={
        "generated": cfg["eval.generated"], "reference": cfg["eval.reference"],
        "n_generated": len(gen_waves), "n_reference": len(ref_waves),
    })
    report.aggregates["fd"] = metrics.frechet_distance(
        metrics.GaussStats.from_samples(ref_emb), metrics.GaussStats.from_samples(gen_emb)
    )
    gen_probs = [metrics.toy_class_probs(w) for w in gen_waves]
    report.aggregates["is"] = metrics.inception_score(gen_probs)
    if len(gen_waves) == len(ref_waves):
        ref_probs = [metrics.toy_class_probs(w) for w in ref_waves]
        report.aggregates["kl"] = metrics.kl_score(ref_probs, gen_probs)

    for i, (path, wave) in enumerate(zip(gen_files, gen_waves)):
        row = {"id": path.stem}
        text = None
        own_sidecar = path.with_suffix(".json")
        ref_ann = Path(cfg["eval.reference"]) / f"{path.stem}.json"
        if own_sidecar.exists():
            text = json.loads(own_sidecar.read_text()).get("text") or None
        if text is None and ref_ann.exists():
            text = load_annotation(ref_ann.read_text()).caption
        if text:
            try:
                row["align"] = metrics.cosine_align(gen_emb[i], metrics.text_embed(text))
            except ValueError:
                pass  # prompt names no known category; no alignment axis
        report.per_sample.append(row)
    aligns = [r["align"] for r in report.per_sample if "align" in r]
    if aligns:
        report.aggregates["align"] = float(np.mean(aligns))
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    write_sidecar(out, cfg, "eval")
    print(report.aggregates)
    return 0


def cmd_bench(cfg: dict) -> int:
    out = _out_dir(cfg)
    prompts = synth.gen_benchmark(cfg["bench.n_per_type"], seed=cfg["data.seed"])
    (out / "prompts.json").write_text(dump_prompts(prompts))
    model = _load_model_for_inference(cfg)
    schedule = _schedule(cfg)
    report = metrics.MetricReport(metadata={"n_prompts": len(prompts)})
    steps = cfg["bench.sample_steps"] or cfg["sampler.steps"]
    chunk = 16
    for lo in range(0, len(prompts), chunk):
        group = prompts[lo:lo + chunk]
        bundles = [ConditionBundle(task=Task.T2A, text=tokenize(p.prompt)) for p in group]
        sampler = _sampler(cfg, seed=cfg["sampler.seed"] + lo, steps=steps)
        for prompt, (_, wave) in zip(group, diffusion.sample_batch(model, bundles, sampler, schedule)):
            detected = detector.oracle_detect(wave, clip_id=prompt.id)
            judged = metrics.judge_accuracies(prompt, detected)
            report.per_sample.append({"id": prompt.id, "type": prompt.type, **judged})
    report.finalize_accuracies(["cat", "cnt", "ord", "ts"])
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    write_sidecar(out, cfg, "bench")
    print(report.aggregates)
    return 0


def cmd_ablate(cfg: dict) -> int:
    out = _out_dir(cfg)
    if not cfg["data.dir"]:
        raise UsageError("data.dir is required")
    dataset = load_dataset(cfg["data.dir"])
    n_eval = min(cfg["ablate.eval_clips"], len(dataset))
    train_set, eval_set = dataset[:-n_eval] or dataset, dataset[-n_eval:]
    schedule = _schedule(cfg)
    trainer_cfg = _trainer_config(cfg)
    rows = []
    for mode in (FusionMode.OFF, FusionMode.NO_GATE, FusionMode.NO_QUERY, FusionMode.FULL):
        model = GenerativeModel(_model_config(cfg), fusion_mode=mode, seed=cfg["model.seed"])
        state = TrainState.init(model, fingerprint=_fingerprint(cfg))
        losses = run_training(state, train_set, schedule, trainer_cfg, steps=cfg["ablate.steps"])
        val = training.validation_loss(model, eval_set, schedule)
        rows.append({"mode": mode.value, "train_loss_last50": float(np.mean(losses[-50:])),
                     "val_loss": val})
        print(f"  {mode.value}: val_loss={val:.4f}")
    with open(out / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["mode", "train_loss_last50", "val_loss"])
        writer.writeheader()
        writer.writerows(rows)
    write_sidecar(out, cfg, "ablate")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
        cfg = load_config(args.config, overrides)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    handlers = {
        "synth": cmd_synth, "train": cmd_train, "sample": cmd_sample,
        "eval": cmd_eval, "bench": cmd_bench, "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures exit 2 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
