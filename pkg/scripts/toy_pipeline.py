#!/usr/bin/env python3
"""End-to-end smoke pipeline at tiny scale: synth -> train -> sample -> eval -> bench.

Finishes in about a minute on one CPU core; artifacts land under ./out/pipeline.
"""

import sys
from pathlib import Path

from sounddiff.cli import main

OUT = Path("out/pipeline")

TINY = [
    "--model.dim", "32", "--model.layers", "2", "--model.heads", "2", "--model.queries", "4",
    "--schedule.steps", "200", "--sampler.steps", "25",
]


def run(args: list[str]) -> None:
    print(f"\n$ sounddiff {' '.join(args)}")
    rc = main(args)
    if rc != 0:
        sys.exit(rc)


if __name__ == "__main__":
    data = OUT / "data"
    run(["synth", "--out.dir", str(data), "--data.clips", "24", "--data.seed", "1",
         "--data.categories", "dog bark,siren,crowd cheering"])
    run(["train", "--data.dir", str(data), "--out.dir", str(OUT / "run"),
         "--trainer.steps", "40", "--trainer.batch", "4", "--trainer.warmup", "10",
         "--trainer.lr", "1e-3", *TINY])
    run(["sample", "--checkpoint.path", str(OUT / "run" / "checkpoint.ckpt"),
         "--out.dir", str(OUT / "samples"), "--sample.text", "one siren sound",
         "--sample.count", "3", *TINY])
    run(["eval", "--eval.generated", str(OUT / "samples"), "--eval.reference", str(data),
         "--out.dir", str(OUT / "eval")])
    run(["bench", "--checkpoint.path", str(OUT / "run" / "checkpoint.ckpt"),
         "--out.dir", str(OUT / "bench"), "--bench.n_per_type", "5", *TINY])
    run(["ablate", "--data.dir", str(data), "--out.dir", str(OUT / "ablation"),
         "--ablate.steps", "10", "--ablate.eval_clips", "4",
         "--trainer.batch", "4", "--trainer.warmup", "5", *TINY])
    print("\npipeline artifacts under", OUT)
