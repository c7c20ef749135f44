"""Procedural event-audio generator with ground-truth annotations.

Clips are 10 s of mono audio at 800 Hz.  Each of the 16 sound categories owns
a distinct narrow tone band plus an envelope family and a noise mix, so a
band-energy detector can recover categories, counts and intervals exactly.
Events never overlap (>= 0.3 s gaps) except in interleave mode, where one
continuous background category spans the clip underneath the foreground
events.  Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .annotations import INTERLEAVE, BenchPrompt, EventAnnotation, SedEvent
from . import captions

SAMPLE_RATE = 800
CLIP_SECONDS = 10.0
CLIP_SAMPLES = int(SAMPLE_RATE * CLIP_SECONDS)

MIN_GAP = 0.3          # seconds between events (and from clip edges)
EDGE_MARGIN = 0.3
MAX_CATEGORIES = 5

# envelope family -> (duration range, attack/release ramp seconds)
_FAMILIES = {
    "burst": ((0.3, 1.0), 0.025),
    "steady": ((1.0, 3.0), 0.06),
    "swell": ((0.6, 2.0), 0.08),
    "tremolo": ((0.6, 1.6), 0.06),
}


@dataclass(frozen=True)
class Category:
    name: str
    center_hz: float
    family: str
    noise_mix: float


def _build_vocabulary() -> tuple[Category, ...]:
    # 21 Hz band spacing keeps neighbouring categories separable at sr=800.
    names_families_mixes = [
        ("dog bark", "burst", 0.25),
        ("thunder", "swell", 0.45),
        ("explosion", "burst", 0.45),
        ("machine gun", "tremolo", 0.3),
        ("generic impact sounds", "burst", 0.35),
        ("crowd cheering", "steady", 0.45),
        ("gargle", "tremolo", 0.35),
        ("water splash", "swell", 0.45),
        ("wave crash", "swell", 0.45),
        ("rain", "steady", 0.45),
        ("yip", "burst", 0.2),
        ("siren", "steady", 0.1),
        ("church bell", "burst", 0.1),
        ("engine hum", "steady", 0.3),
        ("bird chirp", "tremolo", 0.15),
        ("door knock", "tremolo", 0.25),
    ]
    cats = []
    for i, (name, family, mix) in enumerate(names_families_mixes):
        cats.append(Category(name=name, center_hz=60.0 + 21.0 * i, family=family, noise_mix=mix))
    return tuple(cats)


CATEGORIES: tuple[Category, ...] = _build_vocabulary()
CATEGORY_BY_NAME: dict[str, Category] = {c.name: c for c in CATEGORIES}
CATEGORY_NAMES: list[str] = [c.name for c in CATEGORIES]

BAND_HALF_WIDTH_HZ = 9.0        # detector band half-width
NOISE_HALF_WIDTH_HZ = 6.0       # synthesis noise band half-width
TREMOLO_HZ = 3.0
TREMOLO_DEPTH = 0.6


class InfeasibleSpecError(ValueError):
    """The requested events cannot be packed into a 10 s clip."""


@dataclass(frozen=True)
class EventRequest:
    category: str
    count: int = 1
    start: float | None = None   # explicit placement; requires count == 1
    end: float | None = None


@dataclass(frozen=True)
class ClipSpec:
    """Event recipe: categories with counts, optional order, optional background."""

    events: tuple[EventRequest, ...] = ()
    order: tuple[str, ...] | None = None
    background: str | None = None

    def key(self) -> str:
        payload = {
            "events": [(e.category, e.count, e.start, e.end) for e in self.events],
            "order": self.order,
            "background": self.background,
        }
        return json.dumps(payload, sort_keys=True)


def _ramp(n: int) -> np.ndarray:
    # raised-cosine 0 -> 1 over n samples
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(1, n + 1) / n))


def _envelope(family: str, n: int) -> np.ndarray:
    ramp_s = _FAMILIES[family][1]
    n_ramp = max(2, int(round(ramp_s * SAMPLE_RATE)))
    n_ramp = min(n_ramp, n // 2)
    env = np.ones(n)
    env[:n_ramp] = _ramp(n_ramp)
    env[n - n_ramp:] = _ramp(n_ramp)[::-1]
    if family == "burst":
        # smooth decay towards 0.35 of peak; keeps the tail detectable
        t = np.linspace(0.0, 1.0, n)
        env = env * (0.35 + 0.65 * np.exp(-2.2 * t))
    elif family == "tremolo":
        t = np.arange(n) / SAMPLE_RATE
        env = env * (1.0 - TREMOLO_DEPTH / 2 + (TREMOLO_DEPTH / 2) * np.cos(2 * np.pi * TREMOLO_HZ * t))
    # "steady" and "swell" differ only in ramp length
    return env


def _band_noise(rng: np.random.Generator, n: int, center: float) -> np.ndarray:
    """Unit-RMS noise confined to center +- NOISE_HALF_WIDTH_HZ (FFT brickwall)."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    keep = np.abs(freqs - center) <= NOISE_HALF_WIDTH_HZ
    spectrum[~keep] = 0.0
    band = np.fft.irfft(spectrum, n)
    rms = np.sqrt(np.mean(band**2))
    return band / rms if rms > 0 else band


def _render_event(rng: np.random.Generator, cat: Category, start: float, end: float, amp: float,
                  family: str | None = None, noise_mix: float | None = None) -> np.ndarray:
    i0 = int(round(start * SAMPLE_RATE))
    i1 = int(round(end * SAMPLE_RATE))
    n = i1 - i0
    t = (np.arange(i0, i1)) / SAMPLE_RATE
    phase = rng.uniform(0.0, 2 * np.pi)
    tone = np.sin(2 * np.pi * cat.center_hz * t + phase)
    mix = cat.noise_mix if noise_mix is None else noise_mix
    signal = (1.0 - mix) * tone + mix * _band_noise(rng, n, cat.center_hz) / np.sqrt(2.0)
    out = np.zeros(CLIP_SAMPLES)
    out[i0:i1] = amp * _envelope(family or cat.family, n) * signal
    return out


def _snap(t: float) -> float:
    """Snap a time to the sample grid; keeps annotation spans exact."""
    return round(t * SAMPLE_RATE) / SAMPLE_RATE


def _resolve_sequence(spec: ClipSpec, rng: np.random.Generator) -> list[EventRequest]:
    """Expand counts into single events, ordered so that category first-onsets
    follow spec.order when it is given."""
    singles: dict[str, list[EventRequest]] = {}
    for req in spec.events:
        if req.count < 1:
            raise InfeasibleSpecError(f"count for '{req.category}' must be >= 1")
        if req.start is not None and req.count != 1:
            raise InfeasibleSpecError("explicit timing requires count == 1")
        singles.setdefault(req.category, [])
        for _ in range(req.count):
            singles[req.category].append(EventRequest(req.category, 1, req.start, req.end))

    auto = [e for evs in singles.values() for e in evs if e.start is None]
    if spec.order is not None:
        for name in spec.order:
            if name not in singles:
                raise InfeasibleSpecError(f"order lists unknown category '{name}'")
        heads, tails = [], []
        seen: set[str] = set()
        for name in spec.order:
            events = [e for e in singles[name] if e.start is None]
            if events and name not in seen:
                heads.append(events[0])
                tails.extend(events[1:])
                seen.add(name)
        rest = [e for e in auto if e.category not in seen]
        order = heads + list(tails) + rest
        tail_part = order[len(heads):]
        rng.shuffle(tail_part)
        return order[: len(heads)] + tail_part
    rng.shuffle(auto)
    return auto


def _duration_bounds(category: str) -> tuple[float, float]:
    return _FAMILIES[CATEGORY_BY_NAME[category].family][0]


def _free_windows(fixed: list[tuple[float, float]]) -> list[tuple[float, float]]:
    windows = []
    cursor = EDGE_MARGIN
    for s, e in sorted(fixed):
        if s - MIN_GAP > cursor:
            windows.append((cursor, s - MIN_GAP))
        cursor = max(cursor, e + MIN_GAP)
    if cursor < CLIP_SECONDS - EDGE_MARGIN:
        windows.append((cursor, CLIP_SECONDS - EDGE_MARGIN))
    return windows


# placement uses a slightly padded gap so sample-grid snapping never dips below MIN_GAP
_GAP = MIN_GAP + 0.005


def _place_events(spec: ClipSpec, rng: np.random.Generator) -> list[tuple[str, float, float]]:
    """Choose (category, start, end) for every requested event."""
    fixed: list[tuple[str, float, float]] = []
    for req in spec.events:
        if req.start is None:
            continue
        if req.end is None or not (0.0 <= req.start < req.end <= CLIP_SECONDS):
            raise InfeasibleSpecError(f"explicit interval for '{req.category}' invalid")
        fixed.append((req.category, _snap(req.start), _snap(req.end)))
    fixed.sort(key=lambda x: x[1])
    for (_, _, a1), (_, b0, _) in zip(fixed, fixed[1:]):
        if b0 - a1 < MIN_GAP:
            raise InfeasibleSpecError("explicit intervals closer than the 0.3 s gap")

    sequence = _resolve_sequence(spec, rng)
    placed = list(fixed)
    if not sequence:
        return placed

    if not fixed:
        placed.extend(_pack_single_window(sequence, rng))
    else:
        placed.extend(_pack_around_fixed(sequence, fixed, rng))
    return sorted(placed, key=lambda x: x[1])


def _pack_single_window(sequence: list[EventRequest], rng: np.random.Generator) -> list[tuple[str, float, float]]:
    lo, hi = EDGE_MARGIN, CLIP_SECONDS - EDGE_MARGIN
    k = len(sequence)
    budget = (hi - lo) - _GAP * (k - 1)
    dmins = [_duration_bounds(e.category)[0] for e in sequence]
    dmaxs = [_duration_bounds(e.category)[1] for e in sequence]
    if sum(dmins) > budget + 1e-9:
        raise InfeasibleSpecError(
            f"{k} events need at least {sum(dmins) + _GAP * (k - 1):.1f} s of the {hi - lo:.1f} s available"
        )
    slack = budget - sum(dmins)
    durs = []
    for dmin, dmax in zip(dmins, dmaxs):
        grow = rng.uniform(0.0, 1.0) * min(dmax - dmin, slack)
        slack -= grow
        durs.append(dmin + grow)
    weights = rng.uniform(0.0, 1.0, size=k + 1)
    extra = weights / weights.sum() * slack
    out, cursor = [], lo
    for i, (ev, dur) in enumerate(zip(sequence, durs)):
        cursor += extra[i]
        start = _snap(cursor)
        end = _snap(start + dur)
        out.append((ev.category, start, end))
        cursor += dur + _GAP
    return out


def _pack_around_fixed(sequence: list[EventRequest], fixed: list[tuple[str, float, float]],
                       rng: np.random.Generator) -> list[tuple[str, float, float]]:
    """First-fit at minimum durations around explicitly timed events."""
    windows = _free_windows([(s, e) for _, s, e in fixed])
    out: list[tuple[str, float, float]] = []
    remaining = sequence[:]
    for w, (lo, hi) in enumerate(windows):
        future = sum(h - l for l, h in windows[w + 1:])
        cursor = lo
        while remaining:
            ev = remaining[0]
            dmin, dmax = _duration_bounds(ev.category)
            need_rest = sum(_duration_bounds(e.category)[0] + _GAP for e in remaining[1:])
            surplus = (hi - cursor) - dmin - max(0.0, need_rest - future)
            if surplus < 0:
                break
            grow = rng.uniform(0.0, 1.0) * min(dmax - dmin, surplus)
            jitter = rng.uniform(0.0, min(surplus - grow, 0.5))
            start = _snap(cursor + jitter)
            end = _snap(start + dmin + grow)
            out.append((ev.category, start, end))
            remaining.pop(0)
            cursor = end + _GAP
    if remaining:
        raise InfeasibleSpecError("events do not fit around the explicitly timed ones")
    return out


def _sed_description(category: str) -> str:
    return f"The sound of a {captions.base_name(category)}."


def gen_clip(spec: ClipSpec, seed: int, clip_id: str | None = None) -> tuple[np.ndarray, EventAnnotation]:
    """Render a clip and its ground-truth annotation; bit-identical per (spec, seed)."""
    distinct = {e.category for e in spec.events}
    if spec.background is not None:
        distinct.add(spec.background)
    if len(distinct) > MAX_CATEGORIES:
        raise InfeasibleSpecError(f"at most {MAX_CATEGORIES} categories per clip, got {len(distinct)}")
    for name in distinct:
        if name not in CATEGORY_BY_NAME:
            raise InfeasibleSpecError(f"unknown category '{name}'")

    rng = np.random.Generator(np.random.PCG64(_mix_seed(spec, seed)))
    placed = _place_events(spec, rng)

    wave = np.zeros(CLIP_SAMPLES)
    sed: list[SedEvent] = []
    if spec.background is not None:
        cat = CATEGORY_BY_NAME[spec.background]
        # continuous sounds get a flat, mostly tonal rendering regardless of the
        # category family, so the quiet background never fades under the detector floor
        wave += _render_event(rng, cat, 0.0, CLIP_SECONDS, amp=0.25, family="steady",
                              noise_mix=min(cat.noise_mix, 0.2))
        sed.append(SedEvent(0.0, CLIP_SECONDS, _sed_description(spec.background) + " It continues throughout."))
    for name, start, end in placed:
        amp = rng.uniform(0.6, 0.7)
        wave += _render_event(rng, CATEGORY_BY_NAME[name], start, end, amp)
        sed.append(SedEvent(start, end, _sed_description(name)))
    sed.sort(key=lambda ev: (ev.start, ev.end))
    np.clip(wave, -1.0, 1.0, out=wave)

    category: dict[str, int | None] = {}
    if spec.background is not None:
        category[spec.background] = None
    onset_order = []
    for name, start, _ in placed:
        if name not in category:
            category[name] = 0
            onset_order.append(name)
        category[name] = (category[name] or 0) + 1

    if spec.background is not None:
        time_relation: tuple[str, ...] | str = INTERLEAVE
    else:
        time_relation = tuple(onset_order)

    ann = EventAnnotation(
        caption="",
        category=category,
        sed=sed,
        time_relation=time_relation,
        clip_id=clip_id if clip_id is not None else f"synth-{_mix_seed(spec, seed):016x}",
    )
    ann.caption = captions.interleave_caption(ann) if spec.background is not None else (
        captions.category_count_caption(ann) or "The audio is silent."
    )
    return wave, ann


def _mix_seed(spec: ClipSpec, seed: int) -> int:
    digest = hashlib.sha256((spec.key() + f"|{seed}").encode()).digest()
    return int.from_bytes(digest[:8], "little")


def random_spec(rng: np.random.Generator, max_categories: int = 3, max_count: int = 3,
                allow_background: bool = True, categories: list[str] | None = None) -> ClipSpec:
    """Draw a feasible random recipe (used by dataset generation and tests)."""
    pool = categories if categories is not None else CATEGORY_NAMES
    n_cats = int(rng.integers(1, max_categories + 1))
    chosen = [str(c) for c in rng.choice(pool, size=n_cats, replace=False)]
    events, budget = [], CLIP_SECONDS - 2 * EDGE_MARGIN
    for name in chosen:
        dmin = _duration_bounds(name)[0]
        max_fit = int((budget + MIN_GAP) // (dmin + MIN_GAP))
        if max_fit < 1:
            continue
        count = int(rng.integers(1, min(max_count, max_fit) + 1))
        events.append(EventRequest(name, count))
        budget -= count * (dmin + MIN_GAP)
    if not events:
        events = [EventRequest(chosen[0], 1)]
    background = None
    if allow_background and rng.uniform() < 0.2:
        others = [c for c in pool if c not in {e.category for e in events}]
        if others:
            background = str(rng.choice(others))
    order = None
    if background is None and len(events) > 1 and rng.uniform() < 0.5:
        names = [e.category for e in events]
        rng.shuffle(names)
        order = tuple(names)
    return ClipSpec(events=tuple(events), order=order, background=background)


# -- Benchmark generation -------------------------------------------------------

def gen_benchmark(n_per_type: int, seed: int) -> list[BenchPrompt]:
    """Four equally-sized prompt sets; the stratified types spread counts 1..5 uniformly."""
    if n_per_type % 5 != 0:
        raise ValueError(f"n_per_type must be divisible by 5, got {n_per_type}")
    rng = np.random.Generator(np.random.PCG64(seed))
    prompts: list[BenchPrompt] = []
    idx = 0

    per_bucket = n_per_type // 5
    for bucket in range(1, 6):
        for _ in range(per_bucket):
            cats = list(rng.choice(CATEGORY_NAMES, size=bucket, replace=False))
            prompts.append(BenchPrompt(
                id=f"t2a_{idx:05d}", type="category-only",
                prompt=captions.category_only_prompt(cats), category=cats))
            idx += 1

    for count in range(1, 6):
        for _ in range(per_bucket):
            cat = str(rng.choice(CATEGORY_NAMES))
            prompts.append(BenchPrompt(
                id=f"t2a_{idx:05d}", type="category+count",
                prompt=captions.category_count_prompt(cat, count),
                category=[cat], count={cat: count}))
            idx += 1

    for k in range(n_per_type):
        size = 2 + (k % 2)
        cats = list(rng.choice(CATEGORY_NAMES, size=size, replace=False))
        prompts.append(BenchPrompt(
            id=f"t2a_{idx:05d}", type="category+ordering",
            prompt=captions.ordering_prompt(cats), category=cats,
            time_relation=list(cats)))
        idx += 1

    for _ in range(n_per_type):
        cat = str(rng.choice(CATEGORY_NAMES))
        start = round(float(rng.uniform(0.5, 6.5)), 1)
        end = round(start + float(rng.uniform(1.0, 3.0)), 1)
        prompts.append(BenchPrompt(
            id=f"t2a_{idx:05d}", type="category+timestamp",
            prompt=captions.timestamp_prompt(cat, start, end), category=[cat],
            timestamp={cat: {"start": start, "end": end}}))
        idx += 1

    return prompts
