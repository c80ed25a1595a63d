"""The stored-dialogue semantic-style database: build, persist, scan.

Each entry keeps one dialogue-level semantic vector (the summarization
embedding supplied with the bundle) and one dialogue-level style vector
(mean over sentence style rows after adding projected speaker vectors).
The store is exact-scan only and immutable once built.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BuildError, DimError, FormatError, SpeakerError
from .formats import read_store_file, read_weights_file, write_store_file, write_weights_file
from .kernel import as_mat32, as_vec32, cosine, frozen, l2_normalize
from .types import (
    BundleDims,
    DialogueEntry,
    DialogueMeta,
    EmbeddingBundle,
    make_utterance,
    validate_bundle_dims,
)

log = logging.getLogger(__name__)

SIDE_CAR_SUFFIX = ".meta.json"


@dataclass(frozen=True)
class SpeakerTable:
    """Speaker id -> speaker vector, plus the projection bridging speaker
    dim to style dim (applied as an elementwise add after projection)."""

    vectors: Mapping[str, np.ndarray]
    projection: np.ndarray

    def __post_init__(self):
        proj = frozen(as_mat32(self.projection, name="projection"))
        d_spk = proj.shape[1]
        vecs = {}
        for sid, vec in self.vectors.items():
            v = frozen(as_vec32(vec, name=f"speaker {sid!r}"))
            if v.shape[0] != d_spk:
                raise DimError(f"speaker {sid!r} has dim {v.shape[0]}, projection expects {d_spk}")
            vecs[str(sid)] = v
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "projection", proj)

    @property
    def d_sty(self) -> int:
        return self.projection.shape[0]

    @property
    def d_spk(self) -> int:
        return self.projection.shape[1]

    def speaker_vec(self, speaker_id: str) -> np.ndarray:
        try:
            return self.vectors[speaker_id]
        except KeyError:
            raise SpeakerError(f"unknown speaker id {speaker_id!r}") from None

    def style_offset(self, speaker_id: str) -> np.ndarray:
        """Projected speaker vector at style dim, as float64."""
        vec = self.speaker_vec(speaker_id)
        return np.einsum("ij,j->i", self.projection.astype(np.float64), vec.astype(np.float64))

    @staticmethod
    def identity_projection(d_sty: int, d_spk: int) -> np.ndarray:
        """Identity with zero padding, the default when dims differ."""
        proj = np.zeros((d_sty, d_spk), dtype=np.float32)
        m = min(d_sty, d_spk)
        proj[:m, :m] = np.eye(m, dtype=np.float32)
        return proj

    @classmethod
    def zeros(cls, speakers: Iterable[str], d_sty: int, d_spk: int | None = None) -> "SpeakerTable":
        """All-zero speaker vectors: style vectors pass through unchanged."""
        d_spk = d_sty if d_spk is None else d_spk
        vecs = {sid: np.zeros(d_spk, dtype=np.float32) for sid in speakers}
        return cls(vectors=vecs, projection=cls.identity_projection(d_sty, d_spk))

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {"projection": np.asarray(self.projection)}
        for sid, vec in self.vectors.items():
            out[f"speaker/{sid}"] = np.asarray(vec)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "SpeakerTable":
        if "projection" not in tensors:
            raise FormatError("speaker table file lacks a 'projection' tensor")
        vecs = {
            name[len("speaker/"):]: arr
            for name, arr in tensors.items()
            if name.startswith("speaker/")
        }
        return cls(vectors=vecs, projection=tensors["projection"])

    def save(self, path) -> None:
        write_weights_file(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "SpeakerTable":
        return cls.from_tensors(read_weights_file(path))


def dialogue_style_vec(sentence_styles, speakers: Sequence[str], table: SpeakerTable) -> np.ndarray:
    """Mean over rows of (sentence style + projected speaker vector).

    This single aggregation is reused for the store's per-entry style
    vector and for the dialogue-level audio node feature.
    """
    styles = as_mat32(sentence_styles, name="sentence_styles")
    if len(speakers) != styles.shape[0]:
        raise DimError(f"{styles.shape[0]} style rows but {len(speakers)} speaker ids")
    if styles.shape[1] != table.d_sty:
        raise DimError(f"style rows have dim {styles.shape[1]}, speaker table expects {table.d_sty}")
    acc = np.zeros(styles.shape[1], dtype=np.float64)
    for row, sid in zip(styles, speakers):
        acc += row.astype(np.float64) + table.style_offset(sid)
    return (acc / styles.shape[0]).astype(np.float32)


@dataclass(frozen=True)
class StoreManifest:
    dims: BundleDims
    entry_count: int
    normalized: bool
    speaker_projection_seed: int | None = None

    def as_dict(self) -> dict:
        return {
            "dims": self.dims.as_dict(),
            "entry_count": self.entry_count,
            "normalized": self.normalized,
            "speaker_projection_seed": self.speaker_projection_seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StoreManifest":
        return cls(
            dims=BundleDims(**{k: int(v) for k, v in d["dims"].items()}),
            entry_count=int(d["entry_count"]),
            normalized=bool(d["normalized"]),
            speaker_projection_seed=d.get("speaker_projection_seed"),
        )


class ScanResult(NamedTuple):
    entry_id: str
    sem_sim: float
    sty_sim: float


class SdssdStore:
    """Sealed dialogue database; exact full scan, insertion order preserved."""

    def __init__(self, manifest: StoreManifest, entries: Sequence[DialogueEntry]):
        if manifest.entry_count != len(entries):
            raise BuildError(f"manifest says {manifest.entry_count} entries, got {len(entries)}")
        by_id: dict[str, int] = {}
        for i, e in enumerate(entries):
            if e.id in by_id:
                raise BuildError(f"duplicate entry id {e.id!r}")
            if e.semantic_vec.shape[0] != manifest.dims.d_sem:
                raise DimError(f"entry {e.id!r}: semantic dim {e.semantic_vec.shape[0]} != {manifest.dims.d_sem}")
            if e.style_vec.shape[0] != manifest.dims.d_sty:
                raise DimError(f"entry {e.id!r}: style dim {e.style_vec.shape[0]} != {manifest.dims.d_sty}")
            by_id[e.id] = i
        self._manifest = manifest
        self._entries = tuple(entries)
        self._by_id = by_id

    @property
    def manifest(self) -> StoreManifest:
        return self._manifest

    @property
    def entries(self) -> tuple[DialogueEntry, ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._by_id

    def get(self, entry_id: str) -> DialogueEntry:
        try:
            return self._entries[self._by_id[entry_id]]
        except KeyError:
            raise KeyError(f"no entry with id {entry_id!r}") from None

    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self._entries)

    def scan(self, query_sem, query_sty) -> list[ScanResult]:
        """Exact full scan; one (sem, sty) cosine pair per entry, insertion order."""
        qs = as_vec32(query_sem, name="query_sem", allow_empty=True)
        qt = as_vec32(query_sty, name="query_sty", allow_empty=True)
        if qs.shape[0] != self._manifest.dims.d_sem:
            raise DimError(f"query_sem dim {qs.shape[0]} != manifest {self._manifest.dims.d_sem}")
        if qt.shape[0] != self._manifest.dims.d_sty:
            raise DimError(f"query_sty dim {qt.shape[0]} != manifest {self._manifest.dims.d_sty}")
        return [
            ScanResult(e.id, cosine(qs, e.semantic_vec), cosine(qt, e.style_vec))
            for e in self._entries
        ]


def build_store(
    dialogues_with_bundles: Sequence[tuple[DialogueMeta, EmbeddingBundle]],
    table: SpeakerTable,
    *,
    normalize: bool = True,
    dims: BundleDims | None = None,
    speaker_projection_seed: int | None = None,
) -> SdssdStore:
    """Build and seal a store from dialogues and their complete bundles.

    The bundle supplies the semantic vector directly (its dialogue-level
    text embedding); the style vector is aggregated from sentence audio
    rows plus speaker information. With ``normalize`` both vectors are
    stored L2-normalized so cosine reduces to a dot product.
    """
    entries: list[DialogueEntry] = []
    for meta, bundle in dialogues_with_bundles:
        if bundle is None:
            raise BuildError(f"entry {meta.id!r} has no bundle")
        if bundle.entry_id != meta.id:
            raise BuildError(f"bundle id {bundle.entry_id!r} does not match dialogue {meta.id!r}")
        if bundle.n_sent != len(meta.utterances):
            raise BuildError(
                f"entry {meta.id!r}: bundle covers {bundle.n_sent} turns, dialogue has {len(meta.utterances)}"
            )
        if bundle.last_audio_absent:
            raise BuildError(f"entry {meta.id!r}: bundle is missing the last audio row")
        if bundle.word_counts != meta.word_counts:
            raise BuildError(f"entry {meta.id!r}: bundle word counts do not match the texts")
        if dims is None:
            dims = bundle.dims
        else:
            validate_bundle_dims(bundle, dims)
        if bundle.d_text.shape[0] == 0:
            raise BuildError(f"entry {meta.id!r}: bundle lacks a dialogue-level text vector")
        if bundle.s_audio.shape[1] == 0:
            raise BuildError(f"entry {meta.id!r}: bundle lacks sentence-level audio rows")

        sem = bundle.d_text
        sty = dialogue_style_vec(bundle.s_audio, meta.speakers, table)
        if normalize:
            sem = l2_normalize(sem)
            sty = l2_normalize(sty)
        entries.append(
            DialogueEntry(id=meta.id, utterances=meta.utterances, semantic_vec=sem, style_vec=sty)
        )

    if dims is None:
        dims = BundleDims()
    if entries:
        # The stored vectors ARE the dialogue-level text embedding and the
        # aggregated sentence-audio style, so the query dims follow from them.
        dims = replace(dims, d_sem=dims.d_dt, d_sty=dims.d_sa)
    manifest = StoreManifest(
        dims=dims,
        entry_count=len(entries),
        normalized=normalize,
        speaker_projection_seed=speaker_projection_seed,
    )
    log.info("built store: %d entries, normalized=%s", len(entries), normalize)
    return SdssdStore(manifest, entries)


def _sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + SIDE_CAR_SUFFIX)


def save_store(store: SdssdStore, path) -> None:
    """Write the SDSS vector file and its JSON sidecar next to it."""
    ids = store.ids()
    n = len(ids)
    dims = store.manifest.dims
    sem = np.zeros((n, dims.d_sem), dtype=np.float32)
    sty = np.zeros((n, dims.d_sty), dtype=np.float32)
    for i, e in enumerate(store.entries):
        sem[i] = e.semantic_vec
        sty[i] = e.style_vec
    write_store_file(path, dims, ids, sem, sty)

    sidecar = {
        "manifest": store.manifest.as_dict(),
        "entries": [
            {
                "id": e.id,
                "utterances": [
                    {"index": u.index, "speaker": u.speaker, "text": u.text, "audio_ref": u.audio_ref}
                    for u in e.utterances
                ],
            }
            for e in store.entries
        ],
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")


def load_store(path) -> SdssdStore:
    dims, ids, sem, sty = read_store_file(path)
    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise FormatError(f"missing sidecar {sidecar_file}")
    try:
        sidecar = json.loads(sidecar_file.read_text(encoding="utf-8"))
        manifest = StoreManifest.from_dict(sidecar["manifest"])
        texts = {d["id"]: d["utterances"] for d in sidecar["entries"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed sidecar {sidecar_file}: {exc}") from exc
    if manifest.dims != dims:
        raise FormatError(f"sidecar dims {manifest.dims} disagree with {path}")
    if manifest.entry_count != len(ids):
        raise FormatError(f"sidecar entry count {manifest.entry_count} disagrees with {path}")
    if set(texts) != set(ids):
        raise FormatError(f"sidecar entry ids disagree with {path}")

    entries = []
    for i, entry_id in enumerate(ids):
        utts = tuple(
            make_utterance(u["index"], u["speaker"], u["text"], u.get("audio_ref"))
            for u in texts[entry_id]
        )
        entries.append(
            DialogueEntry(id=entry_id, utterances=utts, semantic_vec=sem[i], style_vec=sty[i])
        )
    return SdssdStore(manifest, entries)
