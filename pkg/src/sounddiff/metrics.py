"""Evaluation metrics: distribution distances, alignment, and instruction judging.

Distribution metrics (Frechet distance, paired KL, inception score) run over a
pluggable embedder/classifier; the defaults are deterministic toy stand-ins
built on the detector's band energies.  Instruction judging compares oracle
annotations of generated audio against benchmark prompts, and the timing
metrics score ordering, total duration, event count, and onset/offset F1.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import detector, synth
from .annotations import BenchPrompt, EventAnnotation, validate_prompt

KL_EPS = 1e-10
TIMESTAMP_TOL_S = 1.0


@dataclass
class ClassDist:
    """Probability vector over K classes."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be a nonnegative vector summing to 1")
        self.probs = p


@dataclass
class GaussStats:
    """Moment summary of an embedding set: mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-9:
            raise ValueError("covariance must be positive semidefinite")

    @classmethod
    def from_samples(cls, embeddings: np.ndarray) -> "GaussStats":
        emb = np.asarray(embeddings, dtype=np.float64)
        mean = emb.mean(axis=0)
        centered = emb - mean
        cov = centered.T @ centered / max(1, emb.shape[0] - 1)
        cov = 0.5 * (cov + cov.T)
        return cls(mean=mean, cov=cov)


def frechet_distance(a: GaussStats, b: GaussStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), via symmetric eigensolves."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch")
    vals_a, vecs_a = np.linalg.eigh(a.cov)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ b.cov @ root_a
    inner = 0.5 * (inner + inner.T)
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(0.0, value)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], KL_EPS)))))


def kl_score(ref: list[ClassDist], gen: list[ClassDist]) -> float:
    """Mean KL(ref_i || gen_i) over paired samples."""
    if len(ref) != len(gen):
        raise ValueError(f"length mismatch: {len(ref)} vs {len(gen)}")
    if not ref:
        raise ValueError("empty lists")
    return float(np.mean([_kl(r.probs, g.probs) for r, g in zip(ref, gen)]))


def inception_score(probs: list[ClassDist]) -> float:
    """exp of the mean KL between per-sample posteriors and their marginal."""
    if not probs:
        raise ValueError("empty list")
    matrix = np.stack([p.probs for p in probs])
    marginal = matrix.mean(axis=0)
    return float(np.exp(np.mean([_kl(row, marginal) for row in matrix])))


def cosine_align(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    a = np.asarray(emb_a, dtype=np.float64)
    b = np.asarray(emb_b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero vector has no direction")
    return float(a @ b / (na * nb))


# -- Toy embedder / classifier ---------------------------------------------------

EMBED_DIM = 24
_EMBED_RNG = np.random.Generator(np.random.PCG64(0xE4BED))
_PROJECTION = _EMBED_RNG.standard_normal((len(synth.CATEGORIES) + 4, EMBED_DIM))


def _band_features(samples: np.ndarray) -> np.ndarray:
    envs = detector.band_envelopes(samples)
    band = np.log1p(envs.mean(axis=1) * 100.0)
    w = np.asarray(samples, dtype=np.float64)
    extras = np.array([
        np.log1p(100.0 * np.sqrt(np.mean(w**2))),
        np.log1p(100.0 * np.max(np.abs(w))),
        np.log1p(np.mean(np.abs(np.diff(w))) * 1000.0),
        float((w[:-1] * w[1:] < 0).mean()),
    ])
    return np.concatenate([band, extras])


def toy_embed(samples: np.ndarray) -> np.ndarray:
    """Deterministic random projection of log band energies plus coarse stats."""
    return _band_features(samples) @ _PROJECTION


def toy_class_probs(samples: np.ndarray, temperature: float = 0.1) -> ClassDist:
    """Softmax over per-category band energies."""
    envs = detector.band_envelopes(samples)
    scores = envs.max(axis=1) / temperature
    scores -= scores.max()
    exp = np.exp(scores)
    return ClassDist(exp / exp.sum())


def text_embed(text: str) -> np.ndarray:
    """Category-indicator embedding through the same projection as audio bands."""
    low = text.lower()
    feats = np.zeros(len(synth.CATEGORIES) + 4)
    for i, cat in enumerate(synth.CATEGORIES):
        from .annotations import base_name
        if base_name(cat.name) in low or cat.name in low:
            feats[i] = 1.0
    return feats @ _PROJECTION


# -- Instruction judging ----------------------------------------------------------

def _first_onsets(ann: EventAnnotation, categories: list[str]) -> dict[str, float]:
    from .annotations import _names_in_text

    onsets: dict[str, float] = {}
    for ev in sorted(ann.sed, key=lambda e: (e.start, e.end)):
        for name in _names_in_text(ev.description, categories):
            onsets.setdefault(name, ev.start)
    return onsets


def _intervals_for(ann: EventAnnotation, category: str) -> list[tuple[float, float]]:
    from .annotations import _names_in_text

    return [
        (ev.start, ev.end)
        for ev in ann.sed
        if category in _names_in_text(ev.description, [category])
    ]


def judge_accuracies(prompt: BenchPrompt, detected: EventAnnotation) -> dict[str, int | None]:
    """Binary judgments {cat, cnt, ord, ts}; fields outside the prompt type are None.

    cat: every prompted category detected.  cnt: exact count match.  ord: first
    onsets of the prompted categories in exactly the prompted order.  ts: some
    detected interval of the category within the 1 s start and end tolerance.
    """
    report = validate_prompt(prompt)
    if not report.ok:
        raise ValueError(f"malformed prompt: {[str(v) for v in report.violations]}")

    out: dict[str, int | None] = {"cat": None, "cnt": None, "ord": None, "ts": None}
    out["cat"] = int(all(c in detected.category for c in prompt.category))

    if prompt.type == "category+count":
        (cat, want), = prompt.count.items()
        out["cnt"] = int(detected.category.get(cat) == want)
    elif prompt.type == "category+ordering":
        onsets = _first_onsets(detected, prompt.time_relation)
        if all(c in onsets for c in prompt.time_relation):
            ordered = sorted(prompt.time_relation, key=lambda c: onsets[c])
            out["ord"] = int(tuple(ordered) == tuple(prompt.time_relation))
        else:
            out["ord"] = 0
    elif prompt.type == "category+timestamp":
        (cat, span), = prompt.timestamp.items()
        hits = [
            1
            for s, e in _intervals_for(detected, cat)
            if abs(s - span["start"]) <= TIMESTAMP_TOL_S and abs(e - span["end"]) <= TIMESTAMP_TOL_S
        ]
        out["ts"] = int(bool(hits))
    return out


def audiotime_errors(target: dict, detected: EventAnnotation) -> dict[str, float]:
    """Timing metrics: ordering error, total-duration L1, count L1, onset/offset F1.

    target: {"order": [categories...], "duration_s": float, "count": int,
    "intervals": [(start, end), ...]}.  Duration compares the summed detected
    event durations with the target; count compares the number of detected
    events; timestamps match greedily in onset order with a 1 s tolerance on
    both ends.
    """
    for key in ("order", "duration_s", "count", "intervals"):
        if key not in target:
            raise ValueError(f"target missing '{key}'")

    onsets = _first_onsets(detected, list(target["order"]))
    if target["order"] and all(c in onsets for c in target["order"]):
        ordered = sorted(target["order"], key=lambda c: onsets[c])
        ordering = 0.0 if list(ordered) == list(target["order"]) else 1.0
    else:
        ordering = 0.0 if not target["order"] else 1.0

    detected_intervals = sorted((ev.start, ev.end) for ev in detected.sed)
    total_dur = sum(e - s for s, e in detected_intervals)
    duration_l1 = abs(total_dur - float(target["duration_s"]))
    frequency_l1 = abs(len(detected_intervals) - int(target["count"]))

    targets = sorted(tuple(iv) for iv in target["intervals"])
    matched = 0
    used = [False] * len(targets)
    for ds, de in detected_intervals:
        for j, (ts, te) in enumerate(targets):
            if used[j]:
                continue
            if abs(ds - ts) <= TIMESTAMP_TOL_S and abs(de - te) <= TIMESTAMP_TOL_S:
                used[j] = True
                matched += 1
                break
    if not targets and not detected_intervals:
        f1 = 1.0
    elif matched == 0:
        f1 = 0.0
    else:
        precision = matched / len(detected_intervals)
        recall = matched / len(targets)
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "ordering": ordering,
        "duration_l1": duration_l1,
        "frequency_l1": frequency_l1,
        "timestamp_f1": f1,
    }


# -- Report -----------------------------------------------------------------------

@dataclass
class MetricReport:
    """Aggregates plus per-sample values; accuracies are exact means of binaries."""

    aggregates: dict[str, float] = field(default_factory=dict)
    per_sample: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def finalize_accuracies(self, keys: list[str]) -> None:
        for key in keys:
            values = [s[key] for s in self.per_sample if s.get(key) is not None]
            if values:
                self.aggregates[key] = float(np.mean(values))

    def to_json(self) -> str:
        return json.dumps(
            {"aggregates": self.aggregates, "per_sample": self.per_sample, "metadata": self.metadata},
            indent=2,
        )

    def to_csv(self) -> str:
        keys: list[str] = []
        for row in self.per_sample:
            for k in row:
                if k not in keys:
                    keys.append(k)
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(keys)
        for row in self.per_sample:
            writer.writerow([row.get(k, "") for k in keys])
        writer.writerow([])
        writer.writerow(["aggregate"] + [f"{k}={v:.6g}" for k, v in self.aggregates.items()])
        return buf.getvalue()


def oracle_detect(samples: np.ndarray, clip_id: str = "") -> EventAnnotation:
    """Re-export of the detector oracle for metric pipelines."""
    return detector.oracle_detect(samples, clip_id=clip_id)
