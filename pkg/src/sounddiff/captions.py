"""Deterministic caption templates over structured annotations.

Three template views are derived from an annotation: one from category and
count, one from the timestamped SED list, and one from the time relation.
Counts one through ten render as number words, larger counts as digits.
"""

from __future__ import annotations

from .annotations import EventAnnotation, base_name

_NUMBER_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]


def number_word(n: int) -> str:
    if 0 <= n <= 10:
        return _NUMBER_WORDS[n]
    return str(n)


def _count_phrase(category: str, count: int) -> str:
    base = base_name(category)
    if count == 1:
        return f"one {base} sound"
    return f"{number_word(count)} sounds of a {base}"


def _join(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def category_count_caption(ann: EventAnnotation) -> str | None:
    """'The audio contains two sounds of a machine gun and one generic impact sound.'"""
    if not ann.category or any(v is None for v in ann.category.values()):
        return None
    parts = [_count_phrase(cat, n) for cat, n in ann.category.items()]
    return f"The audio contains {_join(parts)}."


def sed_caption(ann: EventAnnotation) -> str:
    """Render every SED entry with its 'from S to E seconds' span."""
    if not ann.sed:
        return "The audio is silent."
    parts = []
    for ev in ann.sed:
        desc = ev.description.rstrip(".")
        desc = desc[0].lower() + desc[1:] if desc else desc
        parts.append(f"{desc} from {ev.start:.1f} to {ev.end:.1f} seconds")
    body = _join(parts)
    return f"The audio contains {body}."


def time_relation_caption(ann: EventAnnotation) -> str | None:
    """'In this audio, the sound of a generic impact occurs first, followed by
    two distinct machine gun sounds.'"""
    tr = ann.time_relation
    if isinstance(tr, str) or len(tr) < 1:
        return None
    pieces = []
    for i, cat in enumerate(tr):
        count = ann.category.get(cat)
        base = base_name(cat)
        if count is None or count == 1:
            phrase = f"the sound of a {base}"
            plural = False
        else:
            word = number_word(count)
            phrase = f"{word} {base} sounds" if i == 0 else f"{word} distinct {base} sounds"
            plural = True
        if i == 0:
            pieces.append(f"{phrase} {'occur' if plural else 'occurs'} first")
        else:
            pieces.append(f"followed by {phrase}")
    return "In this audio, " + ", ".join(pieces) + "."


def augment_captions(ann: EventAnnotation) -> list[str]:
    """Template caption views of an annotation; the SED view is always present."""
    views = []
    cc = category_count_caption(ann)
    if cc is not None:
        views.append(cc)
    views.append(sed_caption(ann))
    tr = time_relation_caption(ann)
    if tr is not None:
        views.append(tr)
    return views


def interleave_caption(ann: EventAnnotation) -> str:
    """Holistic caption for clips with a continuous background category."""
    background = [cat for cat, n in ann.category.items() if n is None]
    foreground = [(cat, n) for cat, n in ann.category.items() if n is not None]
    if not background:
        return category_count_caption(ann) or sed_caption(ann)
    bg = _join([f"a continuous {base_name(cat)} sound" for cat in background])
    if not foreground:
        return f"The audio features {bg} throughout."
    fg = _join([_count_phrase(cat, n) for cat, n in foreground])
    return f"The audio features {bg} throughout, interleaved with {fg}."


# -- Benchmark prompt phrasings -------------------------------------------------

def category_only_prompt(categories: list[str]) -> str:
    bases = [f"a {base_name(c)}" for c in categories]
    noun = "sound" if len(bases) == 1 else "sounds"
    return f"An audio scene with the {noun} of {_join(bases)}."


def category_count_prompt(category: str, count: int) -> str:
    return f"The audio contains {_count_phrase(category, count)}."


def ordering_prompt(categories: list[str]) -> str:
    parts = [f"The sound of a {base_name(categories[0])}"]
    for i, cat in enumerate(categories[1:]):
        lead = "followed by" if i == 0 else "and then"
        parts.append(f"{lead} the sound of a {base_name(cat)}")
    return ", ".join(parts) + "."


def timestamp_prompt(category: str, start: float, end: float) -> str:
    return f"The sound of a {base_name(category)} is present from {start:.1f} seconds to {end:.1f} seconds."
