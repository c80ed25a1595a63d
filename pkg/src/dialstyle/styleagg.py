"""Style-knowledge aggregation, contrastive losses, the z-sweep analysis
and the final-embedding export boundary.

The aggregation weights the retrieved audio encodings by a softmax over
text-encoding dot products against the current dialogue's text encoding,
then concatenates (retrieved mix, current text, current audio, projected
predicted style) into the final style embedding handed to a downstream
synthesizer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignError, ConfigError, DimError, LossError
from .formats import read_weights_file, write_vector_file, write_weights_file
from .kernel import as_mat32, as_vec32, cosine, frozen, matvec, softmax
from .mghg import MghgEncoderWeights, build_mghg, bundle_track, encode_current_dialogue, encode_dialogue
from .recurrent import weights_mat, weights_vec
from .retrieval import AnPredictorWeights, RetrievalConfig, Scheme, query_cd_vectors, retrieve
from .sdssd import SdssdStore, SpeakerTable
from .types import EmbeddingBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AggregationInput:
    """Aligned retrieved encodings plus the current dialogue's encodings.

    Row i of ``h_pt`` and ``h_pa`` must come from the same retrieved
    dialogue. ``v_an_proj`` is the predicted last-turn style vector already
    projected to the encoding width.
    """

    h_pt: np.ndarray
    h_pa: np.ndarray
    h_t_cur: np.ndarray
    h_a_cur: np.ndarray
    v_an: np.ndarray
    v_an_proj: np.ndarray

    def __post_init__(self):
        h_pt = frozen(as_mat32(self.h_pt, name="h_pt"))
        h_pa = frozen(as_mat32(self.h_pa, name="h_pa"))
        if h_pt.shape[0] != h_pa.shape[0]:
            raise AlignError(f"h_pt has {h_pt.shape[0]} rows, h_pa has {h_pa.shape[0]}")
        object.__setattr__(self, "h_pt", h_pt)
        object.__setattr__(self, "h_pa", h_pa)
        object.__setattr__(self, "h_t_cur", frozen(as_vec32(self.h_t_cur, name="h_t_cur")))
        object.__setattr__(self, "h_a_cur", frozen(as_vec32(self.h_a_cur, name="h_a_cur")))
        object.__setattr__(self, "v_an", frozen(as_vec32(self.v_an, name="v_an", allow_empty=True)))
        object.__setattr__(self, "v_an_proj", frozen(as_vec32(self.v_an_proj, name="v_an_proj")))
        width = h_pt.shape[1]
        for name in ("h_t_cur", "h_a_cur", "v_an_proj"):
            got = getattr(self, name).shape[0]
            if got != width:
                raise DimError(f"{name} has dim {got}, encodings are {width} wide")
        if h_pa.shape[1] != width:
            raise DimError(f"h_pa is {h_pa.shape[1]} wide, h_pt is {width}")


def aggregate(inp: AggregationInput, *, normalize_logits: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (weights, retrieved-style mix, final style embedding).

    Weights are a softmax over per-row dot products (raw by default;
    cosine behind the flag). The final embedding concatenates, in order:
    retrieved mix, current text encoding, current audio encoding,
    projected predicted style.
    """
    if normalize_logits:
        logits = np.array([cosine(row, inp.h_t_cur) for row in inp.h_pt], dtype=np.float32)
    else:
        logits = np.einsum(
            "kj,j->k", inp.h_pt.astype(np.float64), inp.h_t_cur.astype(np.float64)
        ).astype(np.float32)
    weights = softmax(logits)
    rs_emb = np.einsum("k,kj->j", weights.astype(np.float64), inp.h_pa.astype(np.float64)).astype(np.float32)
    fs_emb = np.concatenate([rs_emb, inp.h_t_cur, inp.h_a_cur, inp.v_an_proj])
    return weights, rs_emb, fs_emb


def project_an(v_an, proj_w, proj_b) -> np.ndarray:
    """Affine projection of the predicted style vector to the encoding width."""
    return matvec(proj_w, v_an) + as_vec32(proj_b, name="proj_b")


@dataclass(frozen=True)
class ContrastiveConfig:
    positives: np.ndarray
    negatives: np.ndarray
    tau: float = 0.07
    exclude_self: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise LossError(f"temperature must be positive, got {self.tau}")
        object.__setattr__(self, "positives", frozen(as_mat32(self.positives, name="positives")))
        object.__setattr__(
            self, "negatives", frozen(as_mat32(self.negatives, name="negatives", allow_empty=True))
        )
        if self.positives.shape[0] == 0:
            raise LossError("positives must be nonempty")
        if self.negatives.shape[0] and self.positives.shape[1] != self.negatives.shape[1]:
            raise DimError(
                f"positives are {self.positives.shape[1]} wide, negatives {self.negatives.shape[1]}"
            )


def _logsumexp(values: np.ndarray) -> float:
    m = float(values.max())
    return m + float(np.log(np.einsum("i->", np.exp(values - m))))


def _loss_terms(anchor: np.ndarray, cfg: ContrastiveConfig, anchor_index: int | None) -> float:
    pos_sims = [cosine(anchor, row) for row in cfg.positives]
    if cfg.exclude_self:
        if anchor_index is None:
            matches = [i for i, row in enumerate(cfg.positives) if np.array_equal(row, anchor)]
            if not matches:
                raise LossError("exclude_self requires the anchor to be one of the positives")
            anchor_index = matches[0]
        pos_sims = [s for i, s in enumerate(pos_sims) if i != anchor_index]
        if not pos_sims:
            raise LossError("no positives remain after self-exclusion")
    neg_sims = [cosine(anchor, row) for row in cfg.negatives]

    num = np.asarray(pos_sims, dtype=np.float64) / cfg.tau
    den = np.asarray(pos_sims + neg_sims, dtype=np.float64) / cfg.tau
    loss = _logsumexp(den) - _logsumexp(num)
    return max(loss, 0.0)


def contrastive_loss(anchor, cfg: ContrastiveConfig) -> float:
    """Temperature-scaled loss: -log(positive partition mass / total mass)
    over cosine similarities, stabilized by max-subtraction in both sums.

    With ``exclude_self`` the anchor's own row (the first positives row
    that is bit-identical to it) is dropped from both sums.
    """
    return _loss_terms(as_vec32(anchor, name="anchor"), cfg, None)


def batch_contrastive(positives, negatives, tau: float = 0.07, *, exclude_self: bool = True) -> float:
    """Mean of the per-anchor loss over every positive row as anchor."""
    cfg = ContrastiveConfig(positives=positives, negatives=negatives, tau=tau, exclude_self=exclude_self)
    losses = [
        _loss_terms(cfg.positives[i], cfg, i if exclude_self else None)
        for i in range(cfg.positives.shape[0])
    ]
    return float(np.mean(losses))


def sample_contrastive_ids(
    store: SdssdStore,
    query_sem,
    query_sty,
    k: int,
    *,
    exclude_ids: frozenset[str] = frozenset(),
) -> tuple[list[str], list[str]]:
    """Default positive/negative sampler: the k most similar entries by
    combined similarity are positives, the k least similar are negatives.
    Callers with their own id lists can skip this entirely."""
    results = [r for r in store.scan(query_sem, query_sty) if r.entry_id not in exclude_ids]
    if len(results) < 2 * k:
        raise ConfigError(f"need at least {2 * k} eligible entries, have {len(results)}")
    ranked = sorted(results, key=lambda r: (-(r.sem_sim + r.sty_sim), r.entry_id))
    return [r.entry_id for r in ranked[:k]], [r.entry_id for r in ranked[-k:]]


@dataclass(frozen=True)
class PipelineWeights:
    """Everything loadable from one weights file: the two graph encoders,
    the optional last-turn style predictor, and the projection that brings
    the predicted style vector to the encoding width."""

    text_encoder: MghgEncoderWeights
    audio_encoder: MghgEncoderWeights
    an_predictor: AnPredictorWeights | None
    an_proj_w: np.ndarray
    an_proj_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "an_proj_w", weights_mat(self.an_proj_w, name="an_proj_w"))
        object.__setattr__(self, "an_proj_b", weights_vec(self.an_proj_b, name="an_proj_b"))
        h = self.text_encoder.hidden
        if self.audio_encoder.hidden != h:
            raise DimError("text and audio encoders disagree on the hidden width")
        if self.an_proj_w.shape[0] != h or self.an_proj_b.shape[0] != h:
            raise DimError(f"style projection must emit {h}-wide vectors")
        if self.an_predictor is not None and self.an_proj_w.shape[1] != self.an_predictor.out_dim:
            raise DimError("style projection does not accept the predictor's output")

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = self.text_encoder.to_tensors("encoder.text.")
        out.update(self.audio_encoder.to_tensors("encoder.audio."))
        if self.an_predictor is not None:
            out.update(self.an_predictor.to_tensors("an_predictor."))
        out["an_proj.w"] = np.asarray(self.an_proj_w)
        out["an_proj.b"] = np.asarray(self.an_proj_b)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "PipelineWeights":
        predictor = None
        if any(name.startswith("an_predictor.") for name in tensors):
            predictor = AnPredictorWeights.from_tensors(tensors)
        if "an_proj.w" not in tensors:
            raise DimError("weights file lacks tensor 'an_proj.w'")
        return cls(
            text_encoder=MghgEncoderWeights.from_tensors(tensors, "encoder.text."),
            audio_encoder=MghgEncoderWeights.from_tensors(tensors, "encoder.audio."),
            an_predictor=predictor,
            an_proj_w=tensors["an_proj.w"],
            an_proj_b=tensors.get("an_proj.b", np.zeros(tensors["an_proj.w"].shape[0], dtype=np.float32)),
        )

    def save(self, path) -> None:
        write_weights_file(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "PipelineWeights":
        return cls.from_tensors(read_weights_file(path))


def encode_store_entries(
    bundles: Mapping[str, EmbeddingBundle],
    entry_ids: Sequence[str],
    weights: PipelineWeights,
    cache: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
    **encode_opts,
) -> tuple[np.ndarray, np.ndarray]:
    """Encode both tracks of the given entries; returns stacked (h_pt, h_pa)."""
    cache = {} if cache is None else cache
    rows_t, rows_a = [], []
    for entry_id in entry_ids:
        if entry_id not in cache:
            if entry_id not in bundles:
                raise ConfigError(f"no bundle available for retrieved entry {entry_id!r}")
            bundle = bundles[entry_id]
            d_t, s_t, w_t = bundle_track(bundle, "text")
            d_a, s_a, w_a = bundle_track(bundle, "audio")
            cache[entry_id] = (
                encode_dialogue(build_mghg(d_t, s_t, w_t), weights.text_encoder, **encode_opts),
                encode_dialogue(build_mghg(d_a, s_a, w_a), weights.audio_encoder, **encode_opts),
            )
        h_t, h_a = cache[entry_id]
        rows_t.append(h_t)
        rows_a.append(h_a)
    return np.stack(rows_t), np.stack(rows_a)


def aggregate_for_query(
    store: SdssdStore,
    bundles: Mapping[str, EmbeddingBundle],
    cd_bundle: EmbeddingBundle,
    cd_speakers: Sequence[str],
    table: SpeakerTable,
    weights: PipelineWeights,
    cfg: RetrievalConfig,
    *,
    n: int | None = None,
    normalize_logits: bool = False,
    cache: dict | None = None,
    **encode_opts,
) -> tuple[list, AggregationInput, np.ndarray, np.ndarray, np.ndarray]:
    """Retrieve, encode and aggregate for one current dialogue.

    Returns (hits, aggregation input, weights vector, retrieved mix, final
    embedding)."""
    query_sem, query_sty, v_an = query_cd_vectors(
        cd_bundle, cd_speakers, table, weights.an_predictor,
        fold_an_into_query=cfg.fold_an_into_query,
    )
    hits = retrieve(store, query_sem, query_sty, cfg, n=n)
    h_pt, h_pa = encode_store_entries(bundles, [h.entry_id for h in hits], weights, cache, **encode_opts)
    h_t_cur, h_a_cur = encode_current_dialogue(
        cd_bundle, weights.text_encoder, weights.audio_encoder, **encode_opts
    )
    if v_an is None:
        v_an = np.zeros(weights.an_proj_w.shape[1], dtype=np.float32)
    inp = AggregationInput(
        h_pt=h_pt,
        h_pa=h_pa,
        h_t_cur=h_t_cur,
        h_a_cur=h_a_cur,
        v_an=v_an,
        v_an_proj=project_an(v_an, weights.an_proj_w, weights.an_proj_b),
    )
    w_vec, rs_emb, fs_emb = aggregate(inp, normalize_logits=normalize_logits)
    return hits, inp, w_vec, rs_emb, fs_emb


def z_sweep(
    store: SdssdStore,
    bundles: Mapping[str, EmbeddingBundle],
    cd_bundle: EmbeddingBundle,
    cd_speakers: Sequence[str],
    table: SpeakerTable,
    weights: PipelineWeights,
    z_values: Sequence[int],
    gt_style,
    *,
    full_fs_emb: bool = False,
    exclude_ids: frozenset[str] = frozenset(),
    normalize_logits: bool = False,
    **encode_opts,
) -> list[tuple[int, float]]:
    """For each retrieval count z: retrieve (combined-similarity scheme),
    encode, aggregate, and report the cosine between the retrieved-mix
    component (or, behind the flag, the full final embedding) and the
    ground-truth style embedding. Rows are sorted by z."""
    gt_vec = as_vec32(gt_style, name="gt_style")
    available = len(store) - len(set(exclude_ids) & set(store.ids()))
    rows: list[tuple[int, float]] = []
    cache: dict = {}
    for z in sorted(set(int(z) for z in z_values)):
        if z < 1:
            raise ConfigError(f"z must be positive, got {z}")
        if z > available:
            raise ConfigError(f"z={z} exceeds the {available} available entries")
        cfg = RetrievalConfig(scheme=Scheme.RS1, k=z, exclude_ids=exclude_ids)
        _, _, _, rs_emb, fs_emb = aggregate_for_query(
            store, bundles, cd_bundle, cd_speakers, table, weights, cfg,
            normalize_logits=normalize_logits, cache=cache, **encode_opts,
        )
        target = fs_emb if full_fs_emb else rs_emb
        rows.append((z, cosine(target, gt_vec)))
        log.debug("z-sweep: z=%d similarity=%.6f", z, rows[-1][1])
    return rows


def z_sweep_csv(rows: Sequence[tuple[int, float]]) -> str:
    lines = ["z,similarity"]
    for z, sim in sorted(rows):
        lines.append(f"{z},{sim:.6f}")
    return "\n".join(lines) + "\n"


def export_fs_emb(fs_emb, path) -> None:
    """Write the final style embedding as a single-vector file."""
    write_vector_file(path, as_vec32(fs_emb, name="fs_emb"))
