"""Domain types: utterances, dialogue entries and embedding bundles.

All types are immutable after construction; array fields are stored as
read-only float32 copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BundleError, DimError
from .kernel import as_mat32, as_vec32, frozen


def tokenize(text: str) -> tuple[str, ...]:
    """Whitespace-normalized word tokenization (the engine-wide rule)."""
    return tuple(text.split())


@dataclass(frozen=True)
class Utterance:
    """One dialogue turn. ``words`` is always ``tokenize(text)``."""

    index: int
    speaker: str
    text: str
    words: tuple[str, ...]
    audio_ref: str | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"utterance index must be >= 0, got {self.index}")
        if self.words != tokenize(self.text):
            raise ValueError("words must be the whitespace tokenization of text")


def make_utterance(index: int, speaker: str, text: str, audio_ref: str | None = None) -> Utterance:
    return Utterance(index=index, speaker=speaker, text=text, words=tokenize(text), audio_ref=audio_ref)


@dataclass(frozen=True)
class DialogueMeta:
    """A dialogue without vectors: id plus ordered utterances."""

    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"dialogue {self.id!r} has no utterances")
        for pos, utt in enumerate(self.utterances):
            if utt.index != pos:
                raise ValueError(f"dialogue {self.id!r}: utterance index {utt.index} at position {pos}")

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(u.speaker for u in self.utterances)

    @property
    def word_counts(self) -> tuple[int, ...]:
        return tuple(len(u.words) for u in self.utterances)


@dataclass(frozen=True)
class DialogueEntry:
    """A stored dialogue: meta plus its dialogue-level semantic/style vectors."""

    id: str
    utterances: tuple[Utterance, ...]
    semantic_vec: np.ndarray
    style_vec: np.ndarray

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"entry {self.id!r} has no utterances")
        object.__setattr__(self, "semantic_vec", frozen(as_vec32(self.semantic_vec, name="semantic_vec")))
        object.__setattr__(self, "style_vec", frozen(as_vec32(self.style_vec, name="style_vec")))

    @property
    def meta(self) -> DialogueMeta:
        return DialogueMeta(id=self.id, utterances=self.utterances)


@dataclass(frozen=True)
class BundleDims:
    """Per-corpus embedding dimensions; 0 marks an absent track."""

    d_sem: int = 0
    d_sty: int = 0
    d_dt: int = 0   # dialogue-level text
    d_st: int = 0   # sentence-level text
    d_wt: int = 0   # word-level text
    d_da: int = 0   # dialogue-level audio
    d_sa: int = 0   # sentence-level audio
    d_wa: int = 0   # word-level audio

    _ORDER = ("d_sem", "d_sty", "d_dt", "d_st", "d_wt", "d_da", "d_sa", "d_wa")

    def __post_init__(self):
        for name in self._ORDER:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise DimError(f"dimension {name} must be a non-negative int, got {v!r}")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in self._ORDER)

    @classmethod
    def from_tuple(cls, values) -> "BundleDims":
        vals = tuple(int(v) for v in values)
        if len(vals) != len(cls._ORDER):
            raise DimError(f"dims block must have {len(cls._ORDER)} entries, got {len(vals)}")
        return cls(**dict(zip(cls._ORDER, vals)))

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self._ORDER}


@dataclass(frozen=True)
class EmbeddingBundle:
    """Per-dialogue node features at three granularities, text and audio.

    ``s_audio``/``w_audio`` cover the first ``n_audio`` turns only; for a
    current-dialogue bundle at inference the last turn's audio is absent
    (``n_audio == n_sent - 1``). Word-level fields are ragged: one
    ``(q_i, d)`` matrix per covered turn.
    """

    entry_id: str
    word_counts: tuple[int, ...]
    d_text: np.ndarray
    s_text: np.ndarray
    w_text: tuple[np.ndarray, ...]
    d_audio: np.ndarray
    s_audio: np.ndarray
    w_audio: tuple[np.ndarray, ...]

    def __post_init__(self):
        n = len(self.word_counts)
        if n == 0:
            raise BundleError(f"bundle {self.entry_id!r} has no sentences")
        if any(q < 1 for q in self.word_counts):
            raise BundleError(f"bundle {self.entry_id!r}: every sentence needs >= 1 word")
        object.__setattr__(self, "word_counts", tuple(int(q) for q in self.word_counts))

        d_text = frozen(as_vec32(self.d_text, name="d_text", allow_empty=True))
        s_text = frozen(as_mat32(self.s_text, name="s_text", allow_empty=True))
        d_audio = frozen(as_vec32(self.d_audio, name="d_audio", allow_empty=True))
        s_audio = frozen(as_mat32(self.s_audio, name="s_audio", allow_empty=True))
        w_text = tuple(frozen(as_mat32(w, name="w_text", allow_empty=True)) for w in self.w_text)
        w_audio = tuple(frozen(as_mat32(w, name="w_audio", allow_empty=True)) for w in self.w_audio)

        if s_text.shape[0] != n:
            raise DimError(f"bundle {self.entry_id!r}: s_text has {s_text.shape[0]} rows, expected {n}")
        n_audio = s_audio.shape[0]
        if n_audio not in (n, n - 1):
            raise BundleError(
                f"bundle {self.entry_id!r}: audio covers {n_audio} turns, expected {n} or {n - 1}"
            )
        if len(w_text) != n:
            raise DimError(f"bundle {self.entry_id!r}: w_text has {len(w_text)} groups, expected {n}")
        if len(w_audio) != n_audio:
            raise DimError(f"bundle {self.entry_id!r}: w_audio has {len(w_audio)} groups, expected {n_audio}")
        for i, (q, wt) in enumerate(zip(self.word_counts, w_text)):
            if wt.shape[0] != q:
                raise DimError(f"bundle {self.entry_id!r}: w_text[{i}] has {wt.shape[0]} rows, expected {q}")
        for i, (q, wa) in enumerate(zip(self.word_counts, w_audio)):
            if wa.shape[0] != q:
                raise DimError(f"bundle {self.entry_id!r}: w_audio[{i}] has {wa.shape[0]} rows, expected {q}")

        object.__setattr__(self, "d_text", d_text)
        object.__setattr__(self, "s_text", s_text)
        object.__setattr__(self, "w_text", w_text)
        object.__setattr__(self, "d_audio", d_audio)
        object.__setattr__(self, "s_audio", s_audio)
        object.__setattr__(self, "w_audio", w_audio)

    @property
    def n_sent(self) -> int:
        return len(self.word_counts)

    @property
    def n_audio(self) -> int:
        return self.s_audio.shape[0]

    @property
    def last_audio_absent(self) -> bool:
        return self.n_audio == self.n_sent - 1

    @property
    def dims(self) -> BundleDims:
        """Track dims carried by this bundle (d_sem/d_sty derived)."""
        d_wt = self.w_text[0].shape[1] if self.w_text else 0
        d_wa = self.w_audio[0].shape[1] if self.w_audio else 0
        return BundleDims(
            d_sem=self.d_text.shape[0],
            d_sty=self.s_audio.shape[1],
            d_dt=self.d_text.shape[0],
            d_st=self.s_text.shape[1],
            d_wt=d_wt,
            d_da=self.d_audio.shape[0],
            d_sa=self.s_audio.shape[1],
            d_wa=d_wa,
        )


def validate_bundle_dims(bundle: EmbeddingBundle, dims: BundleDims) -> None:
    """Check a bundle's track widths against a corpus dims block."""
    checks = [
        ("d_text", bundle.d_text.shape[0], dims.d_dt),
        ("s_text", bundle.s_text.shape[1], dims.d_st),
        ("d_audio", bundle.d_audio.shape[0], dims.d_da),
        ("s_audio", bundle.s_audio.shape[1], dims.d_sa),
    ]
    for wt in bundle.w_text:
        checks.append(("w_text", wt.shape[1], dims.d_wt))
    for wa in bundle.w_audio:
        checks.append(("w_audio", wa.shape[1], dims.d_wa))
    for name, got, want in checks:
        if got != want:
            raise DimError(f"bundle {bundle.entry_id!r}: {name} width {got} != manifest {want}")
