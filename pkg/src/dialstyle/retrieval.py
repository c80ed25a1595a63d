"""Multi-attribute retrieval: the missing-turn style predictor, the seven
retrieval schemes over the store, and recall evaluation.

Ranking keys per scheme (ties always broken by ascending entry id):

==== ==========================================================
rs1  semantic + style similarity, summed
rs2  stage 1: top pool by semantic; stage 2: top-k by style
rs3  stage 1: top pool by style;    stage 2: top-k by semantic
rs4  semantic similarity only
rs5  style similarity only
rs6  seeded uniform random selection
rs7  caller-supplied ground-truth id list, echoed verbatim
==== ==========================================================
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BundleError, ConfigError, DimError, EvalError
from .kernel import as_mat32, matvec
from .recurrent import Bidirectional, RecurrentDirection, bigru_pool, weights_mat, weights_vec
from .sdssd import ScanResult, SdssdStore, SpeakerTable, dialogue_style_vec
from .types import EmbeddingBundle

log = logging.getLogger(__name__)


class Scheme(enum.Enum):
    RS1 = "rs1"
    RS2 = "rs2"
    RS3 = "rs3"
    RS4 = "rs4"
    RS5 = "rs5"
    RS6 = "rs6"
    RS7 = "rs7"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown retrieval scheme {name!r}") from None


@dataclass(frozen=True)
class RetrievalConfig:
    """Scheme plus counts: k for training-style evaluation, z at inference."""

    scheme: Scheme = Scheme.RS1
    k: int = 5
    z: int = 25
    stage1_pool: int | None = None  # default 4*k for the two-stage schemes
    exclude_ids: frozenset[str] = field(default_factory=frozenset)
    seed: int = 0
    fold_an_into_query: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.z < 1:
            raise ConfigError(f"z must be positive, got {self.z}")
        if self.stage1_pool is not None and self.stage1_pool < self.k:
            raise ConfigError(f"stage1_pool {self.stage1_pool} < k {self.k}")
        object.__setattr__(self, "exclude_ids", frozenset(self.exclude_ids))

    def pool_size(self, n: int) -> int:
        return self.stage1_pool if self.stage1_pool is not None else 4 * n


@dataclass(frozen=True)
class RetrievalHit:
    entry_id: str
    sem_sim: float
    sty_sim: float
    combined: float
    rank: int

    @property
    def display_similarity(self) -> float:
        """Mean of the two similarities, the human-facing score."""
        return (self.sem_sim + self.sty_sim) / 2.0


@dataclass(frozen=True)
class SequenceEncoderWeights:
    """One bidirectional gated recurrent layer plus two affine layers."""

    gru: Bidirectional
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fc1_w", weights_mat(self.fc1_w, name="fc1_w"))
        object.__setattr__(self, "fc1_b", weights_vec(self.fc1_b, name="fc1_b"))
        object.__setattr__(self, "fc2_w", weights_mat(self.fc2_w, name="fc2_w"))
        object.__setattr__(self, "fc2_b", weights_vec(self.fc2_b, name="fc2_b"))

    def check(self, d_in: int) -> int:
        hidden = self.gru.check(3, d_in)
        if self.fc1_w.shape[1] != 2 * hidden:
            raise DimError(f"fc1 expects {self.fc1_w.shape[1]} inputs, encoder emits {2 * hidden}")
        if self.fc1_b.shape[0] != self.fc1_w.shape[0]:
            raise DimError("fc1 bias does not match fc1 weight")
        if self.fc2_w.shape[1] != self.fc1_w.shape[0]:
            raise DimError("fc2 weight does not chain after fc1")
        if self.fc2_b.shape[0] != self.fc2_w.shape[0]:
            raise DimError("fc2 bias does not match fc2 weight")
        return self.fc2_w.shape[0]

    def out_dim(self) -> int:
        return self.fc2_w.shape[0]

    def apply(self, seq: np.ndarray, pooling: str = "mean") -> np.ndarray:
        pooled = bigru_pool(seq, self.gru, pooling=pooling)
        h = matvec(self.fc1_w, pooled) + self.fc1_b
        return matvec(self.fc2_w, h) + self.fc2_b


@dataclass(frozen=True)
class AnPredictorWeights:
    """Parameters of the missing-turn style predictor: a text sequence
    encoder, an audio sequence encoder, and the combining affine layer."""

    text: SequenceEncoderWeights
    audio: SequenceEncoderWeights
    combine_w: np.ndarray
    combine_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "combine_w", weights_mat(self.combine_w, name="combine_w"))
        object.__setattr__(self, "combine_b", weights_vec(self.combine_b, name="combine_b"))
        if self.text.out_dim() != self.audio.out_dim():
            raise DimError(
                f"text encoder emits {self.text.out_dim()}, audio encoder {self.audio.out_dim()}"
            )
        if self.combine_w.shape[1] != self.text.out_dim():
            raise DimError("combiner does not chain after the encoders")
        if self.combine_b.shape[0] != self.combine_w.shape[0]:
            raise DimError("combiner bias does not match combiner weight")

    @property
    def out_dim(self) -> int:
        return self.combine_w.shape[0]

    def to_tensors(self, prefix: str = "an_predictor.") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for track, enc in (("text", self.text), ("audio", self.audio)):
            for direction, d in (("fwd", enc.gru.fwd), ("bwd", enc.gru.bwd)):
                base = f"{prefix}{track}.gru.{direction}."
                out[base + "w_ih"] = np.asarray(d.w_ih)
                out[base + "w_hh"] = np.asarray(d.w_hh)
                out[base + "b_ih"] = np.asarray(d.b_ih)
                out[base + "b_hh"] = np.asarray(d.b_hh)
            out[f"{prefix}{track}.fc1.w"] = np.asarray(enc.fc1_w)
            out[f"{prefix}{track}.fc1.b"] = np.asarray(enc.fc1_b)
            out[f"{prefix}{track}.fc2.w"] = np.asarray(enc.fc2_w)
            out[f"{prefix}{track}.fc2.b"] = np.asarray(enc.fc2_b)
        out[prefix + "combine.w"] = np.asarray(self.combine_w)
        out[prefix + "combine.b"] = np.asarray(self.combine_b)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str = "an_predictor.") -> "AnPredictorWeights":
        def get(name: str) -> np.ndarray:
            full = prefix + name
            if full not in tensors:
                raise DimError(f"weights file lacks tensor {full!r}")
            return tensors[full]

        def encoder(track: str) -> SequenceEncoderWeights:
            dirs = {}
            for direction in ("fwd", "bwd"):
                base = f"{track}.gru.{direction}."
                dirs[direction] = RecurrentDirection(
                    w_ih=get(base + "w_ih"), w_hh=get(base + "w_hh"),
                    b_ih=get(base + "b_ih"), b_hh=get(base + "b_hh"),
                )
            return SequenceEncoderWeights(
                gru=Bidirectional(fwd=dirs["fwd"], bwd=dirs["bwd"]),
                fc1_w=get(f"{track}.fc1.w"), fc1_b=get(f"{track}.fc1.b"),
                fc2_w=get(f"{track}.fc2.w"), fc2_b=get(f"{track}.fc2.b"),
            )

        return cls(
            text=encoder("text"),
            audio=encoder("audio"),
            combine_w=get("combine.w"),
            combine_b=get("combine.b"),
        )


def predict_an_style(text_sents, audio_sents, w: AnPredictorWeights) -> np.ndarray:
    """Predict the style vector of the unavailable last turn.

    Each track's sequence runs through its bidirectional recurrent layer,
    the per-direction temporal means go through two affine layers, and the
    combiner maps the sum of the two track outputs (the audio term is zero
    for an empty history) to the sentence-style dimension.
    """
    text = as_mat32(text_sents, name="text_sents")
    audio = as_mat32(audio_sents, name="audio_sents", allow_empty=True)
    w.text.check(text.shape[1])
    if audio.shape[0] > 0:
        w.audio.check(audio.shape[1])

    text_out = w.text.apply(text)
    if audio.shape[0] > 0:
        audio_out = w.audio.apply(audio)
    else:
        audio_out = np.zeros(w.audio.out_dim(), dtype=np.float32)
    merged = (text_out.astype(np.float64) + audio_out.astype(np.float64)).astype(np.float32)
    return matvec(w.combine_w, merged) + w.combine_b


def query_cd_vectors(
    cd_bundle: EmbeddingBundle,
    speakers: Sequence[str],
    table: SpeakerTable,
    predictor: AnPredictorWeights | None = None,
    *,
    fold_an_into_query: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Derive the current dialogue's query vectors (and predicted style).

    The semantic query is the bundle's dialogue-level text embedding. The
    style query aggregates the audio rows of turns 1..N-1 with speaker
    information; the predicted last-turn style is returned separately and
    only folded into the style query when explicitly requested.
    """
    n = cd_bundle.n_sent
    if cd_bundle.d_text.shape[0] == 0 or cd_bundle.s_text.shape[1] == 0:
        raise BundleError(f"bundle {cd_bundle.entry_id!r} has no text track")
    if len(speakers) != n:
        raise DimError(f"{len(speakers)} speaker ids for {n} turns")
    if cd_bundle.n_audio < n - 1:
        raise BundleError(f"bundle {cd_bundle.entry_id!r} lacks audio for turns 1..N-1")

    query_sem = cd_bundle.d_text

    v_an = None
    if predictor is not None:
        v_an = predict_an_style(cd_bundle.s_text, cd_bundle.s_audio[: n - 1], predictor)

    history = cd_bundle.s_audio[: n - 1]
    d_sty = cd_bundle.s_audio.shape[1]
    if fold_an_into_query:
        if v_an is None:
            raise ConfigError("fold_an_into_query needs a predictor")
        rows = np.concatenate([history, v_an.reshape(1, -1)], axis=0)
        query_sty = dialogue_style_vec(rows, list(speakers[: n - 1]) + [speakers[n - 1]], table)
    elif n == 1:
        log.warning("single-turn dialogue %r: style query is the zero vector", cd_bundle.entry_id)
        query_sty = np.zeros(d_sty, dtype=np.float32)
    else:
        query_sty = dialogue_style_vec(history, speakers[: n - 1], table)
    return query_sem, query_sty, v_an


def _top_by(results: list[ScanResult], key_fn, n: int) -> list[ScanResult]:
    return sorted(results, key=lambda r: (-key_fn(r), r.entry_id))[:n]


def retrieve(
    store: SdssdStore,
    query_sem,
    query_sty,
    cfg: RetrievalConfig,
    *,
    n: int | None = None,
    gt_ids: Sequence[str] | None = None,
) -> list[RetrievalHit]:
    """Run one retrieval scheme; returns ranked hits (rank 1 = best)."""
    results = [r for r in store.scan(query_sem, query_sty) if r.entry_id not in cfg.exclude_ids]
    by_id = {r.entry_id: r for r in results}
    count = cfg.k if n is None else n

    if cfg.scheme is Scheme.RS7:
        if gt_ids is None:
            raise ConfigError("scheme rs7 needs a ground-truth id list")
        ordered = [
            by_id.get(gid, ScanResult(gid, 0.0, 0.0))
            for gid in gt_ids
        ]
        return [
            RetrievalHit(r.entry_id, r.sem_sim, r.sty_sim, combined=0.0, rank=i + 1)
            for i, r in enumerate(ordered)
        ]

    if count > len(results):
        raise ConfigError(f"requested {count} hits but only {len(results)} entries are eligible")

    pool_n = min(max(cfg.pool_size(count), count), len(results))
    if cfg.scheme is Scheme.RS1:
        chosen = _top_by(results, lambda r: r.sem_sim + r.sty_sim, count)
        keyed = [(r, r.sem_sim + r.sty_sim) for r in chosen]
    elif cfg.scheme is Scheme.RS2:
        pool = _top_by(results, lambda r: r.sem_sim, pool_n)
        chosen = _top_by(pool, lambda r: r.sty_sim, count)
        keyed = [(r, r.sty_sim) for r in chosen]
    elif cfg.scheme is Scheme.RS3:
        pool = _top_by(results, lambda r: r.sty_sim, pool_n)
        chosen = _top_by(pool, lambda r: r.sem_sim, count)
        keyed = [(r, r.sem_sim) for r in chosen]
    elif cfg.scheme is Scheme.RS4:
        chosen = _top_by(results, lambda r: r.sem_sim, count)
        keyed = [(r, r.sem_sim) for r in chosen]
    elif cfg.scheme is Scheme.RS5:
        chosen = _top_by(results, lambda r: r.sty_sim, count)
        keyed = [(r, r.sty_sim) for r in chosen]
    elif cfg.scheme is Scheme.RS6:
        rng = np.random.default_rng(cfg.seed)
        ids_sorted = sorted(by_id)
        picked = rng.choice(len(ids_sorted), size=count, replace=False)
        keyed = [(by_id[ids_sorted[i]], 0.0) for i in picked]
    else:  # pragma: no cover
        raise ConfigError(f"unhandled scheme {cfg.scheme}")

    return [
        RetrievalHit(r.entry_id, r.sem_sim, r.sty_sim, combined=key, rank=i + 1)
        for i, (r, key) in enumerate(keyed)
    ]


def recall_at(
    results: Mapping[str, Sequence[str]],
    gt: Mapping[str, Sequence[str]],
    ks: Sequence[int],
    mode: str = "hit",
) -> dict[int, float]:
    """Recall over ranked retrievals.

    ``hit`` mode: the fraction of queries whose top ground-truth id appears
    in the retrieved top-k. ``overlap`` mode: mean per-query overlap between
    the ground-truth top-k and the retrieved top-k, divided by k.
    """
    if mode not in ("hit", "overlap"):
        raise EvalError(f"unknown recall mode {mode!r}")
    if not gt:
        raise EvalError("no queries in the ground-truth set")
    if any(k < 1 for k in ks):
        raise EvalError(f"every k must be positive, got {list(ks)}")
    for qid, gt_list in gt.items():
        if not gt_list:
            raise EvalError(f"query {qid!r} has an empty ground-truth list")
        if qid not in results:
            raise EvalError(f"query {qid!r} has no retrieved list")

    out: dict[int, float] = {}
    queries = sorted(gt)
    for k in ks:
        if mode == "hit":
            hits = sum(1 for q in queries if gt[q][0] in set(results[q][:k]))
            out[k] = hits / len(queries)
        else:
            total = 0.0
            for q in queries:
                total += len(set(gt[q][:k]) & set(results[q][:k])) / k
            out[k] = total / len(queries)
    return out
