"""Turn dialogue corpora (texts + audio files) into embedding bundles and
speaker tables ready for the engine's database builder."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import load_alignment, word_spans
from .audio import load_wav, resolve_audio, slice_span
from .backends import Backend, hashed_backend, hf_backend
from .sdeb import RawBundle, SdebError

log = logging.getLogger(__name__)

HASHED_DIMS = {"d_dt": 32, "d_st": 32, "d_wt": 16, "d_da": 24, "d_sa": 24, "d_wa": 16, "d_spk": 16}


@dataclass(frozen=True)
class ExtractorConfig:
    """Model ids (paper defaults), aligner location and output dims.

    With the ``hashed`` backend the dims record drives the output widths;
    with ``hf`` the widths come from the models and are recorded back. The
    emotion embedder's internal pooling is selectable and recorded."""

    backend: str = "hashed"
    summarizer: str = "philschmid/bart-large-cnn-samsum"
    sentence_embedder: str = "sentence-transformers/distiluse-base-multilingual-cased-v1"
    emotion_embedder: str = "speechbrain/emotion-recognition-wav2vec2-IEMOCAP"
    frame_embedder: str = "facebook/wav2vec2-base-960h"
    speaker_embedder: str = "speechbrain/spkrec-xvect-voxceleb"
    word_text_embedder: str = "TODBERT/TOD-BERT-JNT-V1"
    aligner_dir: str | None = None
    device: str = "cpu"
    pooling: str = "default"
    dims: dict = field(default_factory=lambda: dict(HASHED_DIMS))

    @classmethod
    def from_json(cls, path) -> "ExtractorConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "dims" in doc:
            doc["dims"] = {**HASHED_DIMS, **{k: int(v) for k, v in doc["dims"].items()}}
        return cls(**doc)

    def make_backend(self) -> Backend:
        if self.backend == "hashed":
            return hashed_backend(self.dims, pooling=self.pooling)
        if self.backend == "hf":
            return hf_backend(self, pooling=self.pooling)
        raise ValueError(f"unknown backend {self.backend!r}")


def load_dialogues(path) -> list[dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    dialogues = doc["dialogues"] if isinstance(doc, dict) else doc
    for d in dialogues:
        if not d.get("utterances"):
            raise ValueError(f"dialogue {d.get('id')!r} has no utterances")
    return dialogues


def _paragraph(utterances: list[dict]) -> str:
    # Turns joined as "Speaker: text" lines before summarization.
    return "\n".join(f"{u['speaker']}: {u['text']}" for u in utterances)


def _checked(vec: np.ndarray, expect: int | None, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float32)
    if expect is not None and vec.shape[-1] != expect:
        raise SdebError(f"{what} emitted dim {vec.shape[-1]}, dims record says {expect}")
    return vec


def extract_dialogue_bundle(
    dialogue: dict,
    backend: Backend,
    cfg: ExtractorConfig,
    audio_root,
) -> RawBundle:
    """One dialogue to one bundle.

    Text: the summarization embedding at dialogue level, per-utterance
    sentence embeddings, per-word token embeddings. Audio: per-utterance
    style embeddings (dialogue level is their mean) and per-word span
    embeddings over aligner spans. A turn whose ``audio_ref`` is null must
    be the last one (the inference-time case) and is skipped on the audio
    track."""
    utts = dialogue["utterances"]
    words_per_turn = [u["text"].split() for u in utts]
    if any(not w for w in words_per_turn):
        raise SdebError(f"dialogue {dialogue['id']!r} has an utterance with no words")

    strict = cfg.backend == "hashed"
    dims = cfg.dims

    summary = backend.summarizer.summarize(_paragraph(utts))
    d_text = _checked(backend.sentence_embedder.embed(summary), dims["d_dt"] if strict else None, "summarizer embedding")
    s_text = np.stack([
        _checked(backend.sentence_embedder.embed(u["text"]), dims["d_st"] if strict else None, "sentence embedding")
        for u in utts
    ])
    w_text = [
        _checked(backend.word_text_embedder.embed_words(words), dims["d_wt"] if strict else None, "word embeddings")
        for words in words_per_turn
    ]

    audio_refs = [u.get("audio_ref") for u in utts]
    n_audio = len(utts)
    if audio_refs and audio_refs[-1] is None:
        n_audio -= 1
    for i, ref in enumerate(audio_refs[:n_audio]):
        if ref is None:
            raise SdebError(f"dialogue {dialogue['id']!r}: turn {i} lacks audio but is not last")

    s_audio_rows, w_audio = [], []
    for i in range(n_audio):
        path = resolve_audio(audio_root, audio_refs[i])
        samples, rate = load_wav(path)
        s_audio_rows.append(
            _checked(backend.emotion_embedder.embed(samples, rate), dims["d_sa"] if strict else None, "emotion embedding")
        )
        duration = len(samples) / rate
        spans = word_spans(words_per_turn[i], duration, load_alignment(cfg.aligner_dir, path))
        rows = [
            _checked(
                backend.frame_embedder.embed(slice_span(samples, rate, start, end), rate),
                dims["d_wa"] if strict else None,
                "frame embedding",
            )
            for start, end in spans
        ]
        w_audio.append(np.stack(rows))

    s_audio = np.stack(s_audio_rows) if s_audio_rows else np.zeros((0, dims["d_sa"]), dtype=np.float32)
    d_audio = (
        np.mean(s_audio.astype(np.float64), axis=0).astype(np.float32)
        if len(s_audio)
        else np.zeros(dims["d_da"], dtype=np.float32)
    )

    return RawBundle(
        entry_id=dialogue["id"],
        word_counts=[len(w) for w in words_per_turn],
        d_text=d_text,
        s_text=s_text,
        w_text=w_text,
        d_audio=d_audio,
        s_audio=s_audio,
        w_audio=w_audio,
    )


def corpus_dims(bundles: list[RawBundle]) -> dict[str, int]:
    dims = bundles[0].dims()
    for b in bundles[1:]:
        if b.dims() != dims:
            raise SdebError(f"bundle {b.entry_id!r} disagrees on dims: {b.dims()} vs {dims}")
    return dims


def extract_corpus(dialogues: list[dict], cfg: ExtractorConfig, audio_root) -> tuple[list[RawBundle], dict]:
    backend = cfg.make_backend()
    bundles = [extract_dialogue_bundle(d, backend, cfg, audio_root) for d in dialogues]
    dims = corpus_dims(bundles)
    # The hf backend discovers widths from the models; record what was emitted.
    if cfg.backend != "hashed":
        log.info("recorded model output dims: %s", dims)
    return bundles, dims


def extract_speaker_table(dialogues: list[dict], cfg: ExtractorConfig, audio_root) -> dict[str, np.ndarray]:
    """One mean vector per speaker plus the style-dim bridging projection
    (identity with zero padding), as a named-tensor dict."""
    backend = cfg.make_backend()
    per_speaker: dict[str, list[np.ndarray]] = {}
    style_dim = None
    for d in dialogues:
        for u in d["utterances"]:
            ref = u.get("audio_ref")
            if ref is None:
                continue
            samples, rate = load_wav(resolve_audio(audio_root, ref))
            vec = np.asarray(backend.speaker_embedder.embed(samples, rate), dtype=np.float32)
            per_speaker.setdefault(u["speaker"], []).append(vec)
            if style_dim is None:
                style_dim = np.asarray(backend.emotion_embedder.embed(samples, rate)).shape[-1]
    if not per_speaker:
        raise SdebError("no speaker has any audio")

    tensors: dict[str, np.ndarray] = {}
    d_spk = None
    for speaker, rows in sorted(per_speaker.items()):
        mean = np.mean(np.stack(rows).astype(np.float64), axis=0).astype(np.float32)
        tensors[f"speaker/{speaker}"] = mean
        d_spk = mean.shape[0]
    projection = np.zeros((int(style_dim), int(d_spk)), dtype=np.float32)
    m = min(int(style_dim), int(d_spk))
    projection[:m, :m] = np.eye(m, dtype=np.float32)
    tensors["projection"] = projection
    return tensors


def provenance(cfg: ExtractorConfig, dims: dict) -> dict:
    """Metadata sidecar: which models/backend/pooling produced the file."""
    return {
        "backend": cfg.backend,
        "pooling": cfg.pooling,
        "models": {
            "summarizer": cfg.summarizer,
            "sentence_embedder": cfg.sentence_embedder,
            "emotion_embedder": cfg.emotion_embedder,
            "frame_embedder": cfg.frame_embedder,
            "speaker_embedder": cfg.speaker_embedder,
            "word_text_embedder": cfg.word_text_embedder,
        },
        "aligner_dir": cfg.aligner_dir,
        "dims": dims,
    }
