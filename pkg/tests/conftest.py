"""Shared fixtures: tiny bundles, hand-built stores, and identity-style
encoder weights that make a dialogue's encoding equal its dialogue-level
feature (used to construct retrieval/sweep scenarios with known answers)."""

from __future__ import annotations

import numpy as np
import pytest

from dialstyle.mghg import DIRECTED_RELATIONS, MghgEncoderWeights, RelationWeights
from dialstyle.recurrent import Bidirectional, RecurrentDirection
from dialstyle.sdssd import SdssdStore, SpeakerTable, StoreManifest
from dialstyle.types import BundleDims, DialogueEntry, DialogueMeta, EmbeddingBundle, make_utterance


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def make_meta(entry_id: str, word_counts, speakers=("spk_a", "spk_b")) -> DialogueMeta:
    utts = tuple(
        make_utterance(i, speakers[i % len(speakers)], " ".join(f"w{i}{j}" for j in range(q)))
        for i, q in enumerate(word_counts)
    )
    return DialogueMeta(id=entry_id, utterances=utts)


def make_bundle(
    entry_id: str,
    word_counts,
    dims: BundleDims,
    rng: np.random.Generator,
    *,
    last_audio_absent: bool = False,
    d_text=None,
    s_audio=None,
) -> EmbeddingBundle:
    n = len(word_counts)
    n_audio = n - 1 if last_audio_absent else n
    if s_audio is None:
        s_audio = rng.normal(size=(n_audio, dims.d_sa)).astype(np.float32)
    else:
        s_audio = np.asarray(s_audio, dtype=np.float32)
    if d_text is None:
        d_text = rng.normal(size=dims.d_dt).astype(np.float32)
    d_audio = (
        np.mean(np.asarray(s_audio, dtype=np.float64), axis=0).astype(np.float32)
        if len(s_audio)
        else np.zeros(dims.d_da, dtype=np.float32)
    )
    return EmbeddingBundle(
        entry_id=entry_id,
        word_counts=tuple(word_counts),
        d_text=np.asarray(d_text, dtype=np.float32),
        s_text=rng.normal(size=(n, dims.d_st)).astype(np.float32),
        w_text=tuple(rng.normal(size=(q, dims.d_wt)).astype(np.float32) for q in word_counts),
        d_audio=d_audio,
        s_audio=s_audio,
        w_audio=tuple(
            rng.normal(size=(word_counts[i], dims.d_wa)).astype(np.float32) for i in range(n_audio)
        ),
    )


SMALL_DIMS = BundleDims(d_sem=6, d_sty=6, d_dt=6, d_st=5, d_wt=4, d_da=6, d_sa=6, d_wa=4)


def store_from_vectors(ids, sems, stys, *, normalized=False) -> SdssdStore:
    """Build a sealed store directly from per-entry vectors."""
    sems = np.asarray(sems, dtype=np.float32)
    stys = np.asarray(stys, dtype=np.float32)
    entries = [
        DialogueEntry(
            id=eid,
            utterances=make_meta(eid, (2, 1)).utterances,
            semantic_vec=sems[i],
            style_vec=stys[i],
        )
        for i, eid in enumerate(ids)
    ]
    manifest = StoreManifest(
        dims=BundleDims(d_sem=sems.shape[1], d_sty=stys.shape[1]),
        entry_count=len(entries),
        normalized=normalized,
    )
    return SdssdStore(manifest, entries)


def random_store(rng: np.random.Generator, n: int, d_sem: int = 8, d_sty: int = 8) -> SdssdStore:
    ids = [f"e{i:04d}" for i in range(n)]
    sems = rng.normal(size=(n, d_sem)).astype(np.float32)
    stys = rng.normal(size=(n, d_sty)).astype(np.float32)
    return store_from_vectors(ids, sems, stys)


def zero_direction(gates: int, d_in: int, hidden: int) -> RecurrentDirection:
    return RecurrentDirection(
        w_ih=np.zeros((gates * hidden, d_in), dtype=np.float32),
        w_hh=np.zeros((gates * hidden, hidden), dtype=np.float32),
        b_ih=np.zeros(gates * hidden, dtype=np.float32),
        b_hh=np.zeros(gates * hidden, dtype=np.float32),
    )


def zero_bidirectional(gates: int, d_in: int, hidden: int) -> Bidirectional:
    return Bidirectional(
        fwd=zero_direction(gates, d_in, hidden), bwd=zero_direction(gates, d_in, hidden)
    )


def zero_encoder_weights(d_dial: int, d_sent: int, d_word: int, hidden: int) -> MghgEncoderWeights:
    z = lambda *shape: np.zeros(shape, dtype=np.float32)
    relations = {
        (rel, direction): RelationWeights(
            w_self=z(hidden, hidden), w_neigh=z(hidden, hidden), bias=z(hidden)
        )
        for rel, direction, _, _ in DIRECTED_RELATIONS
    }
    return MghgEncoderWeights(
        proj_dial_w=z(hidden, d_dial), proj_dial_b=z(hidden),
        proj_sent_w=z(hidden, d_sent), proj_sent_b=z(hidden),
        proj_word_w=z(hidden, d_word), proj_word_b=z(hidden),
        relations=relations,
        sent_fuser=zero_bidirectional(4, hidden, hidden // 2),
        word_fuser=zero_bidirectional(4, hidden, hidden // 2),
        fusion_w=z(hidden, 3 * hidden), fusion_b=z(hidden),
    )


def passthrough_encoder_weights(d_dial: int) -> MghgEncoderWeights:
    """Weights that make encode_dialogue(g) == g's dialogue-level feature.

    The dialogue projection is the identity, the dialogue node keeps itself
    through the sentence-in-dialogue relation, everything else is zero, and
    the fusion head selects the dialogue slot of the concatenation.
    """
    h = d_dial
    w = zero_encoder_weights(d_dial, d_dial, d_dial, h)
    relations = dict(w.relations)
    relations[("sent_in_dial", "fwd")] = RelationWeights(
        w_self=np.eye(h, dtype=np.float32),
        w_neigh=np.zeros((h, h), dtype=np.float32),
        bias=np.zeros(h, dtype=np.float32),
    )
    fusion_w = np.zeros((h, 3 * h), dtype=np.float32)
    fusion_w[:, :h] = np.eye(h, dtype=np.float32)
    return MghgEncoderWeights(
        proj_dial_w=np.eye(h, dtype=np.float32), proj_dial_b=w.proj_dial_b,
        proj_sent_w=w.proj_sent_w, proj_sent_b=w.proj_sent_b,
        proj_word_w=w.proj_word_w, proj_word_b=w.proj_word_b,
        relations=relations,
        sent_fuser=w.sent_fuser,
        word_fuser=w.word_fuser,
        fusion_w=fusion_w, fusion_b=w.fusion_b,
    )


@pytest.fixture
def zero_table() -> SpeakerTable:
    return SpeakerTable.zeros(["spk_a", "spk_b"], d_sty=SMALL_DIMS.d_sa)


def shared_direction_scenario(n_shared: int = 10, n_other: int = 40, width: int = 16, seed: int = 0):
    """A store where exactly ``n_shared`` entries share the current
    dialogue's style direction (their per-entry offsets cancel in the mean)
    and the rest live in orthogonal subspaces.

    With passthrough encoders every dialogue encodes to its dialogue-level
    feature, so the similarity-vs-z curve is fully constructed: it peaks
    when all shared entries (and only they) are retrieved.
    """
    from dialstyle.sdssd import build_store
    from dialstyle.styleagg import PipelineWeights
    from dialstyle.types import BundleDims

    rng = np.random.default_rng(seed)
    dims = BundleDims(
        d_sem=width, d_sty=width, d_dt=width, d_st=width, d_wt=width,
        d_da=width, d_sa=width, d_wa=width,
    )
    gt_dir = np.zeros(width, dtype=np.float32)
    gt_dir[0] = 1.0
    q_dir = np.zeros(width, dtype=np.float32)
    q_dir[8] = 1.0

    pairs = []
    bundles = {}
    for i in range(n_shared):
        # Offsets around a ring sum to zero over the full shared set; a
        # single shared entry gets no offset at all.
        theta = 2.0 * np.pi * i / n_shared
        pert = np.zeros(width, dtype=np.float64)
        if n_shared > 1:
            pert[1] = 0.3 * np.cos(theta)
            pert[2] = 0.3 * np.sin(theta)
        audio_row = (gt_dir.astype(np.float64) + pert).astype(np.float32)
        counts = (2, 1)
        meta = make_meta(f"shared{i:02d}", counts)
        bundle = make_bundle(
            meta.id, counts, dims, rng, d_text=q_dir, s_audio=np.stack([audio_row] * len(counts))
        )
        pairs.append((meta, bundle))
        bundles[meta.id] = bundle
    for j in range(n_other):
        direction = np.zeros(width, dtype=np.float32)
        direction[3 + int(rng.integers(0, 5))] = 1.0
        sem_dir = np.zeros(width, dtype=np.float32)
        sem_dir[9 + int(rng.integers(0, 5))] = 1.0
        counts = (1, 2)
        meta = make_meta(f"other{j:02d}", counts)
        bundle = make_bundle(
            meta.id, counts, dims, rng, d_text=sem_dir, s_audio=np.stack([direction] * len(counts))
        )
        pairs.append((meta, bundle))
        bundles[meta.id] = bundle

    table = SpeakerTable.zeros(["spk_a", "spk_b", "?"], d_sty=width)
    store = build_store(pairs, table, normalize=True)

    cd_meta = make_meta("cd", (1, 1))
    cd_bundle = make_bundle(
        "cd", (1, 1), dims, rng, last_audio_absent=True, d_text=q_dir, s_audio=gt_dir.reshape(1, -1)
    )
    weights = PipelineWeights(
        text_encoder=passthrough_encoder_weights(width),
        audio_encoder=passthrough_encoder_weights(width),
        an_predictor=None,
        an_proj_w=np.zeros((width, width), dtype=np.float32),
        an_proj_b=np.zeros(width, dtype=np.float32),
    )
    return store, bundles, cd_bundle, list(cd_meta.speakers), table, weights, gt_dir
