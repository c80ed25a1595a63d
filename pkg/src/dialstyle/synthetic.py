"""Seeded synthetic corpora and reference weights for tests and demos.

Entries are drawn around per-cluster semantic/style centroids so retrieval
fixtures have a known ground truth; everything is a pure function of the
seed, so regenerating with the same configuration is bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .formats import write_bundle_file
from .mghg import DIRECTED_RELATIONS, MghgEncoderWeights, RelationWeights
from .recurrent import Bidirectional, RecurrentDirection
from .retrieval import AnPredictorWeights, SequenceEncoderWeights
from .sdssd import SpeakerTable
from .styleagg import PipelineWeights
from .types import BundleDims, DialogueMeta, EmbeddingBundle, make_utterance

_VOCAB = (
    "book", "call", "check", "day", "good", "help", "hotel", "like", "morning",
    "need", "okay", "please", "price", "right", "room", "see", "sure", "table",
    "thanks", "time", "today", "want", "week", "yes",
)

DEFAULT_DIMS = BundleDims(d_sem=16, d_sty=16, d_dt=16, d_st=12, d_wt=8, d_da=16, d_sa=16, d_wa=8)


@dataclass(frozen=True)
class SyntheticConfig:
    entries: int = 50
    turns: tuple[int, int] = (2, 6)
    words: tuple[int, int] = (1, 8)
    clusters: int = 5
    noise: float = 0.1
    dims: BundleDims = DEFAULT_DIMS
    seed: int = 0
    speakers: tuple[str, ...] = ("spk_a", "spk_b")


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.normal(size=(n, d))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)


def _noisy(rng: np.random.Generator, centroid: np.ndarray, noise: float) -> np.ndarray:
    return (centroid.astype(np.float64) + noise * rng.normal(size=centroid.shape)).astype(np.float32)


def _dialogue_text(rng: np.random.Generator, cfg: SyntheticConfig, entry_id: str):
    n = int(rng.integers(cfg.turns[0], cfg.turns[1] + 1))
    utts = []
    for i in range(n):
        q = int(rng.integers(cfg.words[0], cfg.words[1] + 1))
        words = [str(_VOCAB[int(w)]) for w in rng.integers(0, len(_VOCAB), size=q)]
        utts.append(
            make_utterance(i, cfg.speakers[i % len(cfg.speakers)], " ".join(words),
                           audio_ref=f"{entry_id}/turn{i}.wav")
        )
    return DialogueMeta(id=entry_id, utterances=tuple(utts))


def _bundle_for(
    rng: np.random.Generator,
    cfg: SyntheticConfig,
    meta: DialogueMeta,
    sem_centroid: np.ndarray,
    sty_centroid: np.ndarray,
    *,
    last_audio_absent: bool = False,
) -> EmbeddingBundle:
    dims = cfg.dims
    n = len(meta.utterances)
    counts = meta.word_counts
    n_audio = n - 1 if last_audio_absent else n

    s_audio = np.stack([_noisy(rng, sty_centroid, cfg.noise) for _ in range(n_audio)]) \
        if n_audio else np.zeros((0, dims.d_sa), dtype=np.float32)
    d_audio = (
        np.mean(s_audio.astype(np.float64), axis=0).astype(np.float32)
        if n_audio else np.zeros(dims.d_da, dtype=np.float32)
    )
    return EmbeddingBundle(
        entry_id=meta.id,
        word_counts=counts,
        d_text=_noisy(rng, sem_centroid, cfg.noise),
        s_text=rng.normal(size=(n, dims.d_st)).astype(np.float32),
        w_text=tuple(rng.normal(size=(q, dims.d_wt)).astype(np.float32) for q in counts),
        d_audio=d_audio,
        s_audio=s_audio,
        w_audio=tuple(rng.normal(size=(counts[i], dims.d_wa)).astype(np.float32) for i in range(n_audio)),
    )


def gen_corpus(cfg: SyntheticConfig):
    """Returns (metas, bundles, speaker table, cluster assignment per id)."""
    if cfg.dims.d_sem != cfg.dims.d_dt or cfg.dims.d_sty != cfg.dims.d_sa:
        raise ValueError("synthetic dims require d_sem == d_dt and d_sty == d_sa")
    rng = np.random.default_rng(cfg.seed)
    sem_centroids = _unit_rows(rng, cfg.clusters, cfg.dims.d_dt)
    sty_centroids = _unit_rows(rng, cfg.clusters, cfg.dims.d_sa)

    metas, bundles, clusters = [], [], {}
    for i in range(cfg.entries):
        entry_id = f"dlg{i:04d}"
        cluster = int(rng.integers(0, cfg.clusters))
        meta = _dialogue_text(rng, cfg, entry_id)
        metas.append(meta)
        bundles.append(_bundle_for(rng, cfg, meta, sem_centroids[cluster], sty_centroids[cluster]))
        clusters[entry_id] = cluster

    table = SpeakerTable.zeros(cfg.speakers, d_sty=cfg.dims.d_sa)
    return metas, bundles, table, clusters


def gen_query(cfg: SyntheticConfig, cluster: int, query_seed: int, query_id: str = "query"):
    """A current-dialogue fixture in the given cluster, last audio row absent."""
    if cfg.turns[1] < 2:
        raise ValueError("query fixtures need dialogues of at least 2 turns")
    rng = np.random.default_rng(query_seed)
    centroid_rng = np.random.default_rng(cfg.seed)
    sem_centroids = _unit_rows(centroid_rng, cfg.clusters, cfg.dims.d_dt)
    sty_centroids = _unit_rows(centroid_rng, cfg.clusters, cfg.dims.d_sa)
    meta = _dialogue_text(rng, cfg, query_id)
    # Single-turn dialogues have no audio history; query fixtures need >= 2 turns.
    while len(meta.utterances) < 2:
        meta = _dialogue_text(rng, cfg, query_id)
    bundle = _bundle_for(
        rng, cfg, meta, sem_centroids[cluster], sty_centroids[cluster], last_audio_absent=True
    )
    return meta, bundle


def meta_to_json(metas, *, dims: BundleDims, clusters=None) -> dict:
    return {
        "dims": dims.as_dict(),
        "dialogues": [
            {
                "id": m.id,
                **({"cluster": clusters[m.id]} if clusters and m.id in clusters else {}),
                "utterances": [
                    {"index": u.index, "speaker": u.speaker, "text": u.text, "audio_ref": u.audio_ref}
                    for u in m.utterances
                ],
            }
            for m in metas
        ],
    }


def load_meta_file(path):
    """Parse a corpus meta JSON into (dims or None, metas)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        dims = BundleDims(**{k: int(v) for k, v in doc["dims"].items()}) if "dims" in doc else None
        metas = [
            DialogueMeta(
                id=d["id"],
                utterances=tuple(
                    make_utterance(u["index"], u["speaker"], u["text"], u.get("audio_ref"))
                    for u in d["utterances"]
                ),
            )
            for d in doc["dialogues"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed meta file {path}: {exc}") from exc
    return dims, metas


def write_corpus(outdir, cfg: SyntheticConfig, *, queries: int = 0) -> dict:
    """Write bundles.sdeb / meta.json / speakers.sdwt (and query fixtures).

    Query fixtures are one SDEB + meta pair per query plus a gt.jsonl whose
    ranked ids are the query's cluster mates ordered by a straight-line
    combined-cosine computation over the stored vectors."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    metas, bundles, table, clusters = gen_corpus(cfg)
    write_bundle_file(out / "bundles.sdeb", bundles, cfg.dims)
    (out / "meta.json").write_text(
        json.dumps(meta_to_json(metas, dims=cfg.dims, clusters=clusters), indent=2, sort_keys=True),
        encoding="utf-8",
    )
    table.save(out / "speakers.sdwt")

    written = {
        "bundles": str(out / "bundles.sdeb"),
        "meta": str(out / "meta.json"),
        "speakers": str(out / "speakers.sdwt"),
        "entries": len(metas),
    }
    if queries:
        sems = {b.entry_id: b.d_text.astype(np.float64) for b in bundles}
        stys = {b.entry_id: np.mean(b.s_audio.astype(np.float64), axis=0) for b in bundles}
        gt_lines = []
        for qi in range(queries):
            qid = f"query{qi:03d}"
            cluster = qi % cfg.clusters
            qmeta, qbundle = gen_query(cfg, cluster, query_seed=cfg.seed + 1000 + qi, query_id=qid)
            write_bundle_file(out / f"{qid}.sdeb", [qbundle], cfg.dims)
            (out / f"{qid}.meta.json").write_text(
                json.dumps(meta_to_json([qmeta], dims=cfg.dims), indent=2, sort_keys=True),
                encoding="utf-8",
            )
            q_sem = qbundle.d_text.astype(np.float64)
            q_sty = np.mean(qbundle.s_audio.astype(np.float64), axis=0)

            def combined(eid: str) -> float:
                s = sems[eid] @ q_sem / (np.linalg.norm(sems[eid]) * np.linalg.norm(q_sem))
                t = stys[eid] @ q_sty / (np.linalg.norm(stys[eid]) * np.linalg.norm(q_sty))
                return float(s + t)

            mates = sorted(
                (eid for eid, c in clusters.items() if c == cluster),
                key=lambda eid: (-combined(eid), eid),
            )
            gt_lines.append(json.dumps({"query_id": qid, "gt": mates}, sort_keys=True))
        (out / "gt.jsonl").write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
        written["queries"] = queries
        written["gt"] = str(out / "gt.jsonl")
    return written


# ---------------------------------------------------------------------------
# Seeded weight builders. scale=0 yields all-zero parameters.


def _direction(rng, gates: int, d_in: int, hidden: int, scale: float) -> RecurrentDirection:
    u = lambda *shape: rng.uniform(-scale, scale, size=shape).astype(np.float32)
    return RecurrentDirection(
        w_ih=u(gates * hidden, d_in), w_hh=u(gates * hidden, hidden),
        b_ih=u(gates * hidden), b_hh=u(gates * hidden),
    )


def _bidirectional(rng, gates: int, d_in: int, hidden: int, scale: float) -> Bidirectional:
    return Bidirectional(
        fwd=_direction(rng, gates, d_in, hidden, scale),
        bwd=_direction(rng, gates, d_in, hidden, scale),
    )


def random_encoder_weights(
    d_dial: int, d_sent: int, d_word: int, hidden: int = 256, *, seed: int = 0, scale: float = 0.1
) -> MghgEncoderWeights:
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-scale, scale, size=shape).astype(np.float32)
    relations = {
        (rel, direction): RelationWeights(w_self=u(hidden, hidden), w_neigh=u(hidden, hidden), bias=u(hidden))
        for rel, direction, _, _ in DIRECTED_RELATIONS
    }
    return MghgEncoderWeights(
        proj_dial_w=u(hidden, d_dial), proj_dial_b=u(hidden),
        proj_sent_w=u(hidden, d_sent), proj_sent_b=u(hidden),
        proj_word_w=u(hidden, d_word), proj_word_b=u(hidden),
        relations=relations,
        sent_fuser=_bidirectional(rng, 4, hidden, hidden // 2, scale),
        word_fuser=_bidirectional(rng, 4, hidden, hidden // 2, scale),
        fusion_w=u(hidden, 3 * hidden), fusion_b=u(hidden),
    )


def random_predictor_weights(
    d_text: int,
    d_audio: int,
    *,
    hidden: int = 64,
    mid: int = 64,
    out: int | None = None,
    seed: int = 0,
    scale: float = 0.1,
) -> AnPredictorWeights:
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-scale, scale, size=shape).astype(np.float32)
    out = d_audio if out is None else out

    def encoder(d_in: int) -> SequenceEncoderWeights:
        return SequenceEncoderWeights(
            gru=_bidirectional(rng, 3, d_in, hidden, scale),
            fc1_w=u(mid, 2 * hidden), fc1_b=u(mid),
            fc2_w=u(mid, mid), fc2_b=u(mid),
        )

    return AnPredictorWeights(
        text=encoder(d_text),
        audio=encoder(d_audio),
        combine_w=u(out, mid),
        combine_b=u(out),
    )


def random_pipeline_weights(
    dims: BundleDims,
    hidden: int = 256,
    *,
    seed: int = 0,
    scale: float = 0.1,
    with_predictor: bool = True,
    predictor_hidden: int = 64,
) -> PipelineWeights:
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-scale, scale, size=shape).astype(np.float32)
    predictor = (
        random_predictor_weights(
            dims.d_st, dims.d_sa, hidden=predictor_hidden, mid=predictor_hidden, seed=seed + 2, scale=scale
        )
        if with_predictor
        else None
    )
    return PipelineWeights(
        text_encoder=random_encoder_weights(dims.d_dt, dims.d_st, dims.d_wt, hidden, seed=seed, scale=scale),
        audio_encoder=random_encoder_weights(dims.d_da, dims.d_sa, dims.d_wa, hidden, seed=seed + 1, scale=scale),
        an_predictor=predictor,
        an_proj_w=u(hidden, dims.d_sa),
        an_proj_b=u(hidden),
    )
