"""Embedding backends.

``hashed`` is fully offline and deterministic: text features come from
seeded hashes of the tokens, audio features from a fixed random projection
of simple frame statistics, so the same corpus always produces a
byte-identical bundle file. ``hf`` wires the pretrained models named in
the configuration; it is only importable when the model stack (and its
weights) are actually available, and everything else degrades with a
clear error instead of a silent fallback.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .audio import frame_features

log = logging.getLogger(__name__)


class BackendUnavailable(Exception):
    """The requested backend cannot run in this environment."""


def _seed_from(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt(np.sum(vec * vec)))
    return (vec / norm if norm > 1e-12 else vec).astype(np.float32)


class HashedTextEmbedder:
    """Deterministic token-hash embeddings (mean over token vectors)."""

    def __init__(self, dim: int, tag: str):
        self.dim = dim
        self.tag = tag
        self._cache: dict[str, np.ndarray] = {}

    def _token_vec(self, token: str) -> np.ndarray:
        if token not in self._cache:
            rng = _seed_from("token", self.tag, token)
            self._cache[token] = rng.normal(size=self.dim)
        return self._cache[token]

    def embed(self, text: str) -> np.ndarray:
        tokens = text.split() or [""]
        acc = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            acc += self._token_vec(token.lower())
        return _unit(acc / len(tokens))

    def embed_words(self, words: list[str]) -> np.ndarray:
        return np.stack([_unit(self._token_vec(w.lower())) for w in words])


class HashedSummarizer:
    """Extractive stand-in: the first words of the speaker-tagged paragraph."""

    def __init__(self, max_words: int = 30):
        self.max_words = max_words

    def summarize(self, paragraph: str) -> str:
        return " ".join(paragraph.split()[: self.max_words])


class HashedAudioEmbedder:
    """Frame statistics through a fixed seeded projection, mean-pooled."""

    def __init__(self, dim: int, tag: str):
        self.dim = dim
        rng = _seed_from("projection", tag)
        self._proj = rng.normal(size=(4, dim))

    def embed(self, samples: np.ndarray, rate: int) -> np.ndarray:
        feats = frame_features(samples, rate)
        pooled = feats.mean(axis=0) @ self._proj
        return _unit(pooled)


@dataclass
class Backend:
    """Everything the extractor needs, one embedder per knowledge source."""

    name: str
    summarizer: object
    sentence_embedder: object      # summaries and per-utterance text
    word_text_embedder: object
    emotion_embedder: object       # sentence-level audio style
    frame_embedder: object         # word-span audio
    speaker_embedder: object
    pooling: str = "default"


def hashed_backend(dims: dict, pooling: str = "default") -> Backend:
    return Backend(
        name="hashed",
        summarizer=HashedSummarizer(),
        sentence_embedder=HashedTextEmbedder(dims["d_st"], "sentence"),
        word_text_embedder=HashedTextEmbedder(dims["d_wt"], "word"),
        emotion_embedder=HashedAudioEmbedder(dims["d_sa"], "emotion"),
        frame_embedder=HashedAudioEmbedder(dims["d_wa"], "frame"),
        speaker_embedder=HashedAudioEmbedder(dims["d_spk"], "speaker"),
        pooling=pooling,
    )


class HfSentenceEmbedder:
    def __init__(self, model_id: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendUnavailable(f"sentence-transformers not installed: {exc}") from exc
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {model_id}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self._model.encode(text), dtype=np.float32)


class HfSummarizer:
    def __init__(self, model_id: str):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendUnavailable(f"transformers not installed: {exc}") from exc
        try:
            self._pipe = pipeline("summarization", model=model_id)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {model_id}: {exc}") from exc

    def summarize(self, paragraph: str) -> str:
        return self._pipe(paragraph, truncation=True)[0]["summary_text"]


class HfWordEmbedder:
    """Word vectors from a token encoder: mean of each word's subword states."""

    def __init__(self, model_id: str):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailable(f"transformers/torch not installed: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {model_id}: {exc}") from exc
        self.dim = int(self._model.config.hidden_size)

    def embed_words(self, words: list[str]) -> np.ndarray:
        import torch

        enc = self._tokenizer(words, is_split_into_words=True, return_tensors="pt")
        with torch.no_grad():
            states = self._model(**enc).last_hidden_state[0]
        rows = []
        word_ids = enc.word_ids(0)
        for w in range(len(words)):
            idx = [i for i, wid in enumerate(word_ids) if wid == w]
            rows.append(states[idx].mean(dim=0).numpy() if idx else np.zeros(self.dim))
        return np.asarray(rows, dtype=np.float32)


class HfFrameEmbedder:
    """Frame-level speech features mean-pooled over a span."""

    def __init__(self, model_id: str):
        try:
            import torch  # noqa: F401
            from transformers import AutoFeatureExtractor, AutoModel
        except ImportError as exc:
            raise BackendUnavailable(f"transformers/torch not installed: {exc}") from exc
        try:
            self._fe = AutoFeatureExtractor.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {model_id}: {exc}") from exc
        self.dim = int(self._model.config.hidden_size)

    def embed(self, samples: np.ndarray, rate: int) -> np.ndarray:
        import torch

        inputs = self._fe(samples, sampling_rate=rate, return_tensors="pt")
        with torch.no_grad():
            states = self._model(**inputs).last_hidden_state[0]
        return states.mean(dim=0).numpy().astype(np.float32)


class HfSpeechBrainEmbedder:
    """SpeechBrain classifier embeddings (emotion or speaker models)."""

    def __init__(self, model_id: str, pooling: str = "default"):
        try:
            from speechbrain.inference import EncoderClassifier
        except ImportError as exc:
            raise BackendUnavailable(f"speechbrain not installed: {exc}") from exc
        try:
            self._model = EncoderClassifier.from_hparams(source=model_id)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load {model_id}: {exc}") from exc
        self.pooling = pooling
        self.dim = None  # discovered on first call

    def embed(self, samples: np.ndarray, rate: int) -> np.ndarray:
        import torch

        wav = torch.from_numpy(np.asarray(samples, dtype=np.float32)).unsqueeze(0)
        emb = self._model.encode_batch(wav).squeeze().numpy().astype(np.float32)
        self.dim = int(emb.shape[-1])
        return emb


def hf_backend(cfg, pooling: str = "default") -> Backend:
    return Backend(
        name="hf",
        summarizer=HfSummarizer(cfg.summarizer),
        sentence_embedder=HfSentenceEmbedder(cfg.sentence_embedder),
        word_text_embedder=HfWordEmbedder(cfg.word_text_embedder),
        emotion_embedder=HfSpeechBrainEmbedder(cfg.emotion_embedder, pooling),
        frame_embedder=HfFrameEmbedder(cfg.frame_embedder),
        speaker_embedder=HfSpeechBrainEmbedder(cfg.speaker_embedder),
        pooling=pooling,
    )
