"""Forced-alignment word spans with a uniform-split fallback.

The aligner output directory holds one ``<audio stem>.json`` per
utterance: a list of ``{"word", "start", "end"}`` objects in seconds.
Words the aligner did not cover fall back to a uniform split of the
utterance, with a warning.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

log = logging.getLogger(__name__)


def load_alignment(aligner_dir, audio_path) -> list[dict] | None:
    if aligner_dir is None:
        return None
    path = Path(aligner_dir) / (Path(audio_path).stem + ".json")
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def word_spans(words: list[str], duration: float, aligned: list[dict] | None) -> list[tuple[float, float]]:
    """One (start, end) per word; aligner entries are matched in order."""
    uniform = [
        (duration * i / len(words), duration * (i + 1) / len(words)) for i in range(len(words))
    ]
    if not aligned:
        return uniform

    spans: list[tuple[float, float] | None] = []
    pointer = 0
    for word in words:
        found = None
        for j in range(pointer, len(aligned)):
            entry = aligned[j]
            if str(entry.get("word", "")).lower() == word.lower():
                start, end = entry.get("start"), entry.get("end")
                if start is not None and end is not None and end > start:
                    found = (float(start), float(end))
                pointer = j + 1
                break
        spans.append(found)

    missing = [w for w, s in zip(words, spans) if s is None]
    if missing:
        log.warning("aligner gap for %s; uniform spans substituted", missing)
    return [s if s is not None else uniform[i] for i, s in enumerate(spans)]
