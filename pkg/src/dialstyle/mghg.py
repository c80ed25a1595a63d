"""Multi-granularity heterogeneous dialogue graphs and their encoder.

One graph covers one dialogue track (text or audio): a dialogue node, one
node per sentence in turn order, one node per word in reading order, and
four relation types — containment (word-in-sentence, sentence-in-dialogue)
and adjacency (word-word, sentence-sentence). Every relation passes
messages in both directions, so the encoder carries eight directed
relation weight sets. Neighbor aggregation is the mean, computed over
canonically sorted edges so edge storage order never changes any bit.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import BundleError, DimError, GraphError
from .kernel import as_mat32, as_vec32, frozen, matvec
from .recurrent import Bidirectional, RecurrentDirection, bilstm_pool, weights_mat, weights_vec
from .types import EmbeddingBundle

log = logging.getLogger(__name__)

# (relation, direction) -> (source table, destination table); canonical order.
DIRECTED_RELATIONS: tuple[tuple[str, str, str, str], ...] = (
    ("word_in_sent", "fwd", "word", "sent"),
    ("word_in_sent", "rev", "sent", "word"),
    ("sent_in_dial", "fwd", "sent", "dial"),
    ("sent_in_dial", "rev", "dial", "sent"),
    ("word_adj", "fwd", "word", "word"),
    ("word_adj", "rev", "word", "word"),
    ("sent_adj", "fwd", "sent", "sent"),
    ("sent_adj", "rev", "sent", "sent"),
)


@dataclass(frozen=True)
class Mghg:
    """Graph for one dialogue track. Edge lists hold (src, dst) pairs in the
    relation's forward direction using per-type node indices."""

    word_counts: tuple[int, ...]
    dial_feat: np.ndarray   # (D_d,)
    sent_feats: np.ndarray  # (N, D_s)
    word_feats: np.ndarray  # (sum q_i, D_w)
    word_in_sent: tuple[tuple[int, int], ...]
    sent_in_dial: tuple[tuple[int, int], ...]
    word_adj: tuple[tuple[int, int], ...]
    sent_adj: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.word_counts)
        total_words = sum(self.word_counts)
        object.__setattr__(self, "dial_feat", frozen(as_vec32(self.dial_feat, name="dial_feat")))
        object.__setattr__(self, "sent_feats", frozen(as_mat32(self.sent_feats, name="sent_feats")))
        object.__setattr__(self, "word_feats", frozen(as_mat32(self.word_feats, name="word_feats")))
        if self.sent_feats.shape[0] != n:
            raise GraphError(f"{self.sent_feats.shape[0]} sentence rows for {n} word counts")
        if self.word_feats.shape[0] != total_words:
            raise GraphError(f"{self.word_feats.shape[0]} word rows, expected {total_words}")
        if len(self.word_in_sent) != total_words:
            raise GraphError("word_in_sent must have one edge per word")
        if len(self.sent_in_dial) != n:
            raise GraphError("sent_in_dial must have one edge per sentence")
        if len(self.word_adj) != sum(q - 1 for q in self.word_counts):
            raise GraphError("word_adj must link adjacent words within each sentence")
        if len(self.sent_adj) != n - 1:
            raise GraphError("sent_adj must link adjacent sentences")

    @property
    def n_sent(self) -> int:
        return len(self.word_counts)

    @property
    def n_word(self) -> int:
        return self.word_feats.shape[0]

    def edges(self, relation: str) -> tuple[tuple[int, int], ...]:
        return getattr(self, relation)


def build_mghg(dial_feat, sent_feats, word_feats_per_sentence: Sequence) -> Mghg:
    """Assemble a graph from one track's features.

    Nodes are ordered deterministically: the dialogue node, sentences in
    turn order, then words in reading order.
    """
    sent = as_mat32(sent_feats, name="sent_feats", allow_empty=True)
    n = sent.shape[0]
    if n == 0:
        raise GraphError("a dialogue graph needs at least one sentence")
    groups = [
        as_mat32(w, name=f"word_feats[{i}]", allow_empty=True)
        for i, w in enumerate(word_feats_per_sentence)
    ]
    if len(groups) != n:
        raise GraphError(f"{len(groups)} word groups for {n} sentences")
    if any(g.shape[0] < 1 or g.shape[1] < 1 for g in groups):
        raise GraphError("every sentence needs at least one word feature row")
    counts = tuple(g.shape[0] for g in groups)

    word_in_sent = []
    word_adj = []
    base = 0
    for i, q in enumerate(counts):
        for j in range(q):
            word_in_sent.append((base + j, i))
        for j in range(q - 1):
            word_adj.append((base + j, base + j + 1))
        base += q

    return Mghg(
        word_counts=counts,
        dial_feat=dial_feat,
        sent_feats=sent,
        word_feats=np.concatenate(groups, axis=0),
        word_in_sent=tuple(word_in_sent),
        sent_in_dial=tuple((i, 0) for i in range(n)),
        word_adj=tuple(word_adj),
        sent_adj=tuple((i, i + 1) for i in range(n - 1)),
    )


def bundle_track(bundle: EmbeddingBundle, track: str) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, ...]]:
    """Pull one track's (dialogue, sentence, word) features out of a bundle."""
    if track == "text":
        d, s, w = bundle.d_text, bundle.s_text, bundle.w_text
    elif track == "audio":
        d, s, w = bundle.d_audio, bundle.s_audio, bundle.w_audio
    else:
        raise ValueError(f"unknown track {track!r}")
    if d.shape[0] == 0 or s.shape[1] == 0 or any(g.shape[1] == 0 for g in w):
        raise BundleError(f"bundle {bundle.entry_id!r} has an incomplete {track} track")
    return d, s, w


@dataclass(frozen=True)
class RelationWeights:
    w_self: np.ndarray
    w_neigh: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_self", weights_mat(self.w_self, name="w_self"))
        object.__setattr__(self, "w_neigh", weights_mat(self.w_neigh, name="w_neigh"))
        object.__setattr__(self, "bias", weights_vec(self.bias, name="bias"))


@dataclass(frozen=True)
class MghgEncoderWeights:
    """All parameters of one graph encoder.

    ``hidden`` (256 in the reference configuration) is the shared message
    width; each fuser is a bidirectional LSTM with hidden/2 per direction
    so its per-step output is ``hidden`` wide, and the fusion head maps the
    3*hidden concatenation back to ``hidden``.
    """

    proj_dial_w: np.ndarray
    proj_dial_b: np.ndarray
    proj_sent_w: np.ndarray
    proj_sent_b: np.ndarray
    proj_word_w: np.ndarray
    proj_word_b: np.ndarray
    relations: Mapping[tuple[str, str], RelationWeights]
    sent_fuser: Bidirectional
    word_fuser: Bidirectional
    fusion_w: np.ndarray
    fusion_b: np.ndarray

    def __post_init__(self):
        for name in ("proj_dial_w", "proj_sent_w", "proj_word_w", "fusion_w"):
            object.__setattr__(self, name, weights_mat(getattr(self, name), name=name))
        for name in ("proj_dial_b", "proj_sent_b", "proj_word_b", "fusion_b"):
            object.__setattr__(self, name, weights_vec(getattr(self, name), name=name))
        object.__setattr__(self, "relations", dict(self.relations))

        h = self.proj_dial_w.shape[0]
        if h % 2 != 0:
            raise DimError(f"hidden width must be even, got {h}")
        for name in ("proj_sent_w", "proj_word_w"):
            if getattr(self, name).shape[0] != h:
                raise DimError(f"{name} emits {getattr(self, name).shape[0]}, expected {h}")
        for name in ("proj_dial_b", "proj_sent_b", "proj_word_b", "fusion_b"):
            if getattr(self, name).shape[0] != h:
                raise DimError(f"{name} has dim {getattr(self, name).shape[0]}, expected {h}")
        for rel, direction, _, _ in DIRECTED_RELATIONS:
            if (rel, direction) not in self.relations:
                raise DimError(f"missing relation weights for ({rel}, {direction})")
            rw = self.relations[(rel, direction)]
            if rw.w_self.shape != (h, h) or rw.w_neigh.shape != (h, h) or rw.bias.shape != (h,):
                raise DimError(f"relation ({rel}, {direction}) weights are not {h}x{h}")
        for fuser_name, fuser in (("sent_fuser", self.sent_fuser), ("word_fuser", self.word_fuser)):
            fh = fuser.check(4, h)
            if fh != h // 2:
                raise DimError(f"{fuser_name} hidden is {fh} per direction, expected {h // 2}")
        if self.fusion_w.shape != (h, 3 * h):
            raise DimError(f"fusion head is {self.fusion_w.shape}, expected ({h}, {3 * h})")

    @property
    def hidden(self) -> int:
        return self.proj_dial_w.shape[0]

    def to_tensors(self, prefix: str = "encoder.") -> dict[str, np.ndarray]:
        out = {
            prefix + "proj.dial.w": np.asarray(self.proj_dial_w),
            prefix + "proj.dial.b": np.asarray(self.proj_dial_b),
            prefix + "proj.sent.w": np.asarray(self.proj_sent_w),
            prefix + "proj.sent.b": np.asarray(self.proj_sent_b),
            prefix + "proj.word.w": np.asarray(self.proj_word_w),
            prefix + "proj.word.b": np.asarray(self.proj_word_b),
            prefix + "fusion.w": np.asarray(self.fusion_w),
            prefix + "fusion.b": np.asarray(self.fusion_b),
        }
        for (rel, direction), rw in sorted(self.relations.items()):
            base = f"{prefix}rel.{rel}.{direction}."
            out[base + "self"] = np.asarray(rw.w_self)
            out[base + "neigh"] = np.asarray(rw.w_neigh)
            out[base + "bias"] = np.asarray(rw.bias)
        for fuser_name, fuser in (("sent", self.sent_fuser), ("word", self.word_fuser)):
            for direction, d in (("fwd", fuser.fwd), ("bwd", fuser.bwd)):
                base = f"{prefix}fuser.{fuser_name}.{direction}."
                out[base + "w_ih"] = np.asarray(d.w_ih)
                out[base + "w_hh"] = np.asarray(d.w_hh)
                out[base + "b_ih"] = np.asarray(d.b_ih)
                out[base + "b_hh"] = np.asarray(d.b_hh)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str = "encoder.") -> "MghgEncoderWeights":
        def get(name: str) -> np.ndarray:
            full = prefix + name
            if full not in tensors:
                raise DimError(f"weights file lacks tensor {full!r}")
            return tensors[full]

        relations = {}
        for rel, direction, _, _ in DIRECTED_RELATIONS:
            base = f"rel.{rel}.{direction}."
            relations[(rel, direction)] = RelationWeights(
                w_self=get(base + "self"), w_neigh=get(base + "neigh"), bias=get(base + "bias")
            )

        def fuser(name: str) -> Bidirectional:
            dirs = {}
            for direction in ("fwd", "bwd"):
                base = f"fuser.{name}.{direction}."
                dirs[direction] = RecurrentDirection(
                    w_ih=get(base + "w_ih"), w_hh=get(base + "w_hh"),
                    b_ih=get(base + "b_ih"), b_hh=get(base + "b_hh"),
                )
            return Bidirectional(fwd=dirs["fwd"], bwd=dirs["bwd"])

        return cls(
            proj_dial_w=get("proj.dial.w"), proj_dial_b=get("proj.dial.b"),
            proj_sent_w=get("proj.sent.w"), proj_sent_b=get("proj.sent.b"),
            proj_word_w=get("proj.word.w"), proj_word_b=get("proj.word.b"),
            relations=relations,
            sent_fuser=fuser("sent"),
            word_fuser=fuser("word"),
            fusion_w=get("fusion.w"), fusion_b=get("fusion.b"),
        )


_ACTIVATIONS = {
    "none": lambda x: x,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


def _mean_by_dst(edges: np.ndarray, src_feats: np.ndarray, n_dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of source features per destination, over edges sorted by
    (dst, src) so storage order cannot affect a single bit."""
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    src_sorted = edges[order, 0]
    dst_sorted = edges[order, 1]
    sums = np.zeros((n_dst, src_feats.shape[1]), dtype=np.float64)
    counts = np.zeros(n_dst, dtype=np.int64)
    np.add.at(sums, dst_sorted, src_feats[src_sorted])
    np.add.at(counts, dst_sorted, 1)
    has = counts > 0
    sums[has] /= counts[has, None]
    return sums, has


def hetero_message_pass(
    g: Mghg,
    w: MghgEncoderWeights,
    *,
    layers: int = 1,
    post_activation: str = "none",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project each granularity to the message width, then run message
    passing: every node sums, over its incident directed relations,
    self-transform + transformed neighbor mean + bias. Relations with no
    neighbors contribute nothing.
    """
    if post_activation not in _ACTIVATIONS:
        raise ValueError(f"unknown post_activation {post_activation!r}")
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    act = _ACTIVATIONS[post_activation]

    feats = {
        "dial": (matvec(w.proj_dial_w, g.dial_feat) + w.proj_dial_b).reshape(1, -1).astype(np.float64),
        "sent": (
            np.einsum("ij,kj->ki", w.proj_sent_w.astype(np.float64), g.sent_feats.astype(np.float64))
            + w.proj_sent_b.astype(np.float64)
        ),
        "word": (
            np.einsum("ij,kj->ki", w.proj_word_w.astype(np.float64), g.word_feats.astype(np.float64))
            + w.proj_word_b.astype(np.float64)
        ),
    }

    for _ in range(layers):
        out = {name: np.zeros_like(arr) for name, arr in feats.items()}
        for rel, direction, src_type, dst_type in DIRECTED_RELATIONS:
            pairs = g.edges(rel)
            if not pairs:
                continue
            edges = np.asarray(pairs, dtype=np.int64)
            if direction == "rev":
                # Stored pairs are in forward orientation; the type table
                # already names the reversed src/dst.
                edges = edges[:, ::-1]
            rw = w.relations[(rel, direction)]
            means, has = _mean_by_dst(edges, feats[src_type], feats[dst_type].shape[0])
            if not np.any(has):
                continue
            w_self = rw.w_self.astype(np.float64)
            w_neigh = rw.w_neigh.astype(np.float64)
            contribution = (
                np.einsum("ij,kj->ki", w_self, feats[dst_type][has])
                + np.einsum("ij,kj->ki", w_neigh, means[has])
                + rw.bias.astype(np.float64)
            )
            out[dst_type][has] += contribution
        feats = {name: act(arr) for name, arr in out.items()}

    return (
        feats["dial"][0].astype(np.float32),
        feats["sent"].astype(np.float32),
        feats["word"].astype(np.float32),
    )


def encode_dialogue(
    g: Mghg,
    w: MghgEncoderWeights,
    *,
    layers: int = 1,
    post_activation: str = "none",
    pooling: str = "mean",
) -> np.ndarray:
    """Full encoder forward pass: message passing, sequence fusers over the
    updated sentence/word features, then the fusion head over the
    (dialogue, sentence-agg, word-agg) concatenation."""
    dial, sents, words = hetero_message_pass(g, w, layers=layers, post_activation=post_activation)
    s_agg = bilstm_pool(sents, w.sent_fuser, pooling=pooling)
    w_agg = bilstm_pool(words, w.word_fuser, pooling=pooling)
    stacked = np.concatenate([dial, s_agg, w_agg])
    return matvec(w.fusion_w, stacked) + w.fusion_b


def encode_current_dialogue(
    cd_bundle: EmbeddingBundle,
    w_text: MghgEncoderWeights,
    w_audio: MghgEncoderWeights,
    **encode_opts,
) -> tuple[np.ndarray, np.ndarray]:
    """Encode the current dialogue with the same (shared) weights used for
    stored entries. The text graph covers all turns; the audio graph covers
    the turns with audio. A single-turn dialogue at inference has no audio
    graph at all: its audio encoding is the zero vector by policy."""
    d_t, s_t, w_t = bundle_track(cd_bundle, "text")
    h_text = encode_dialogue(build_mghg(d_t, s_t, w_t), w_text, **encode_opts)

    if cd_bundle.n_audio == 0:
        log.warning(
            "bundle %r has no audio turns; audio encoding is the zero vector", cd_bundle.entry_id
        )
        return h_text, np.zeros(w_audio.hidden, dtype=np.float32)

    d_a, s_a, w_a = bundle_track(cd_bundle, "audio")
    h_audio = encode_dialogue(build_mghg(d_a, s_a, w_a), w_audio, **encode_opts)
    return h_text, h_audio


def dump_graph(g: Mghg) -> dict:
    """Debug summary: node counts, edge lists and feature checksums."""
    return {
        "nodes": {"dial": 1, "sent": g.n_sent, "word": g.n_word},
        "word_counts": list(g.word_counts),
        "edges": {
            "word_in_sent": [list(e) for e in g.word_in_sent],
            "sent_in_dial": [list(e) for e in g.sent_in_dial],
            "word_adj": [list(e) for e in g.word_adj],
            "sent_adj": [list(e) for e in g.sent_adj],
        },
        "checksums": {
            "dial": zlib.crc32(np.ascontiguousarray(g.dial_feat).tobytes()),
            "sent": zlib.crc32(np.ascontiguousarray(g.sent_feats).tobytes()),
            "word": zlib.crc32(np.ascontiguousarray(g.word_feats).tobytes()),
        },
    }
