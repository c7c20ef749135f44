"""Structured sound-event annotations: types, validation, JSON round trip.

An annotation record carries a holistic caption, a category -> count map
(count is None for continuous/unquantifiable sounds), a list of timestamped
sound events (SED), and the temporal relation between categories (an ordered
category list, or the literal "interleave" for overlapping sounds).

The JSON form uses exactly the field names ``caption``, ``category``, ``SED``,
``time_relation`` and ``audio_id``.  SED entries are single-key objects
mapping an ``MM:SS.ffffff-MM:SS.ffffff`` span to a description string, and a
list-valued time_relation is rendered as a comma-joined string.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Union

CLIP_SECONDS = 10.0

INTERLEAVE = "interleave"

_SPAN_RE = re.compile(r"^(\d{2,}):(\d{2}(?:\.\d+)?)-(\d{2,}):(\d{2}(?:\.\d+)?)$")


@dataclass(frozen=True)
class SedEvent:
    """One timestamped sound event inside a clip."""

    start: float
    end: float
    description: str


@dataclass
class EventAnnotation:
    caption: str
    category: dict[str, Union[int, None]]
    sed: list[SedEvent]
    time_relation: Union[tuple[str, ...], str]
    clip_id: str = ""

    def categories(self) -> list[str]:
        return list(self.category.keys())


@dataclass(frozen=True)
class Violation:
    """A single failed rule; names the offending field and the rule."""

    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, where: str, rule: str) -> None:
        self.violations.append(Violation(where, rule))


def base_name(category: str) -> str:
    """Category name with a trailing 'sound(s)' stripped, for template slots."""
    for suffix in (" sounds", " sound"):
        if category.endswith(suffix):
            return category[: -len(suffix)]
    return category


def _names_in_text(text: str, names: list[str]) -> set[str]:
    """Category names referenced in a description.

    A category counts as named when either its full name or its base form
    (without a trailing 'sound(s)') occurs as a whole phrase, case-insensitive.
    """
    low = text.lower()
    found = set()
    for name in names:
        for phrase in {name.lower(), base_name(name).lower()}:
            if re.search(r"(?<![a-z])" + re.escape(phrase) + r"(?![a-z])", low):
                found.add(name)
                break
    return found


def validate_annotation(ann: EventAnnotation, known_names: list[str] | None = None) -> ValidationReport:
    """Check every schema invariant; violations are data, not exceptions.

    ``known_names`` extends the set of category names searched for inside SED
    descriptions (the annotation's own category keys are always included).
    """
    report = ValidationReport()

    for i, ev in enumerate(ann.sed):
        where = f"sed[{i}]"
        if not (0.0 <= ev.start <= CLIP_SECONDS and 0.0 <= ev.end <= CLIP_SECONDS):
            report.add(where, "interval outside [0, 10] seconds")
        if ev.start == ev.end:
            report.add(where, "empty interval")
        elif ev.start > ev.end:
            report.add(where, "start after end")

    names = list(ann.category.keys())
    if known_names:
        names = names + [n for n in known_names if n not in ann.category]

    referenced: list[set[str]] = [_names_in_text(ev.description, names) for ev in ann.sed]
    for i, ref in enumerate(referenced):
        for name in ref:
            if name not in ann.category:
                report.add(f"sed[{i}]", f"references category '{name}' not in category map")

    for name, count in ann.category.items():
        if count is None:
            continue
        if not isinstance(count, int) or count < 1:
            report.add(f"category[{name}]", "count must be a positive integer or null")
            continue
        n_ref = sum(1 for ref in referenced if name in ref)
        if n_ref != count:
            report.add(f"category[{name}]", f"count mismatch: count={count} but {n_ref} SED entries reference it")

    tr = ann.time_relation
    if isinstance(tr, str):
        if tr != INTERLEAVE:
            report.add("time_relation", f"string value must be '{INTERLEAVE}'")
    else:
        for name in tr:
            if name not in ann.category:
                report.add("time_relation", f"lists '{name}' which is not a key of category")

    if not isinstance(ann.clip_id, str):
        report.add("audio_id", "must be a string")

    return report


# -- JSON serialization -------------------------------------------------------

def format_span(start: float, end: float) -> str:
    return f"{_fmt_time(start)}-{_fmt_time(end)}"


def _fmt_time(t: float) -> str:
    minutes = int(t // 60)
    seconds = t - 60 * minutes
    return f"{minutes:02d}:{seconds:09.6f}"


def parse_span(span: str) -> tuple[float, float]:
    m = _SPAN_RE.match(span)
    if m is None:
        raise ValueError(f"malformed SED span {span!r}")
    start = 60 * int(m.group(1)) + float(m.group(2))
    end = 60 * int(m.group(3)) + float(m.group(4))
    return start, end


def annotation_to_dict(ann: EventAnnotation) -> dict:
    tr = ann.time_relation
    return {
        "caption": ann.caption,
        "category": dict(ann.category),
        "SED": [{format_span(ev.start, ev.end): ev.description} for ev in ann.sed],
        "time_relation": tr if isinstance(tr, str) else ", ".join(tr),
        "audio_id": ann.clip_id,
    }


def annotation_from_dict(obj: dict) -> EventAnnotation:
    sed = []
    for entry in obj["SED"]:
        if len(entry) != 1:
            raise ValueError("each SED entry must be a single-key object")
        (span, desc), = entry.items()
        start, end = parse_span(span)
        sed.append(SedEvent(start, end, desc))
    tr_raw = obj["time_relation"]
    tr: Union[tuple[str, ...], str]
    if tr_raw == INTERLEAVE:
        tr = INTERLEAVE
    else:
        tr = tuple(s.strip() for s in tr_raw.split(",")) if tr_raw else ()
    return EventAnnotation(
        caption=obj["caption"],
        category={k: v for k, v in obj["category"].items()},
        sed=sed,
        time_relation=tr,
        clip_id=obj.get("audio_id", ""),
    )


def dump_annotation(ann: EventAnnotation) -> str:
    return json.dumps(annotation_to_dict(ann), indent=2)


def load_annotation(text: str) -> EventAnnotation:
    return annotation_from_dict(json.loads(text))


# -- Benchmark prompts --------------------------------------------------------

PROMPT_TYPES = (
    "category-only",
    "category+count",
    "category+ordering",
    "category+timestamp",
)


@dataclass
class BenchPrompt:
    """One instruction-following prompt with its structured ground truth."""

    id: str
    type: str
    prompt: str
    category: list[str]
    count: dict[str, int] | None = None
    time_relation: list[str] | None = None
    timestamp: dict[str, dict[str, float]] | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "type": self.type, "prompt": self.prompt, "category": list(self.category)}
        if self.count is not None:
            out["count"] = dict(self.count)
        if self.time_relation is not None:
            out["time_relation"] = list(self.time_relation)
        if self.timestamp is not None:
            out["timestamp"] = {k: dict(v) for k, v in self.timestamp.items()}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "BenchPrompt":
        return cls(
            id=obj["id"],
            type=obj["type"],
            prompt=obj["prompt"],
            category=list(obj["category"]),
            count=obj.get("count"),
            time_relation=obj.get("time_relation"),
            timestamp=obj.get("timestamp"),
        )


def validate_prompt(p: BenchPrompt) -> ValidationReport:
    report = ValidationReport()
    if p.type not in PROMPT_TYPES:
        report.add("type", f"unknown prompt type {p.type!r}")
        return report
    extras = {
        "category-only": (),
        "category+count": ("count",),
        "category+ordering": ("time_relation",),
        "category+timestamp": ("timestamp",),
    }[p.type]
    for name in ("count", "time_relation", "timestamp"):
        value = getattr(p, name)
        if name in extras and value is None:
            report.add(name, f"required by type {p.type}")
        if name not in extras and value is not None:
            report.add(name, f"not allowed for type {p.type}")
    if p.count is not None:
        for cat, n in p.count.items():
            if not 1 <= n <= 5:
                report.add("count", f"count for '{cat}' outside 1..5")
    if p.timestamp is not None:
        for cat, span in p.timestamp.items():
            if not (0.0 <= span["start"] < span["end"] <= CLIP_SECONDS):
                report.add("timestamp", f"span for '{cat}' outside [0, 10] or empty")
    return report


def dump_prompts(prompts: list[BenchPrompt]) -> str:
    return json.dumps([p.to_dict() for p in prompts], indent=2)


def load_prompts(text: str) -> list[BenchPrompt]:
    return [BenchPrompt.from_dict(o) for o in json.loads(text)]


# -- Music-attribute passthrough ----------------------------------------------

@dataclass
class MusicAttributes:
    """Genre/mood/instrument/tempo record; validated and serialized only."""

    caption: str
    genre: str
    mood: str
    instrument: list[str]
    tempo: str

    def to_dict(self) -> dict:
        return {
            "caption": self.caption,
            "genre": self.genre,
            "mood": self.mood,
            "instrument": list(self.instrument),
            "tempo": self.tempo,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MusicAttributes":
        return cls(
            caption=obj["caption"],
            genre=obj["genre"],
            mood=obj["mood"],
            instrument=list(obj["instrument"]),
            tempo=obj["tempo"],
        )


def validate_music(rec: MusicAttributes) -> ValidationReport:
    report = ValidationReport()
    for name in ("caption", "genre", "mood", "tempo"):
        if not isinstance(getattr(rec, name), str) or not getattr(rec, name):
            report.add(name, "must be a non-empty string")
    if not rec.instrument or not all(isinstance(x, str) for x in rec.instrument):
        report.add("instrument", "must be a non-empty list of strings")
    return report
