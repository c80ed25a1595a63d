"""Byte-level writers/validator for the engine's file formats.

This toolkit talks to the engine only through files, so the layouts are
implemented here against the published byte contract (little-endian, raw
IEEE-754 binary32 payloads):

* ``SDEB``: magic, u32 version=1, 8 x u32 dims
  (d_sem, d_sty, d_dt, d_st, d_wt, d_da, d_sa, d_wa), u32 count; per bundle
  the id (u32 length + UTF-8), u32 N, N x u32 word counts, an N-bit audio
  presence bitmap (LSB-first, padded to bytes), then d_text, s_text,
  w_text, d_audio, s_audio, w_audio payloads (audio rows only for turns
  whose presence bit is set; only the last turn may be absent).
* ``SDWT``: magic, u32 version=1, u32 tensor count; per tensor the name,
  u32 rank, rank x u32 dims, payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DIM_KEYS = ("d_sem", "d_sty", "d_dt", "d_st", "d_wt", "d_da", "d_sa", "d_wa")
_U32 = struct.Struct("<I")


class SdebError(Exception):
    """Raised when assembling or validating a file fails."""


def _f32(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(out)):
        raise SdebError("payload contains non-finite values")
    return out


@dataclass
class RawBundle:
    """One dialogue's features, ready for serialization."""

    entry_id: str
    word_counts: list[int]
    d_text: np.ndarray
    s_text: np.ndarray
    w_text: list[np.ndarray] = field(default_factory=list)
    d_audio: np.ndarray = None
    s_audio: np.ndarray = None
    w_audio: list[np.ndarray] = field(default_factory=list)

    @property
    def n_sent(self) -> int:
        return len(self.word_counts)

    @property
    def n_audio(self) -> int:
        return 0 if self.s_audio is None else int(np.asarray(self.s_audio).shape[0])

    def dims(self) -> dict[str, int]:
        d_dt = int(np.asarray(self.d_text).shape[0])
        d_sa = int(np.asarray(self.s_audio).shape[1])
        return {
            "d_sem": d_dt,
            "d_sty": d_sa,
            "d_dt": d_dt,
            "d_st": int(np.asarray(self.s_text).shape[1]),
            "d_wt": int(np.asarray(self.w_text[0]).shape[1]),
            "d_da": int(np.asarray(self.d_audio).shape[0]),
            "d_sa": d_sa,
            "d_wa": int(np.asarray(self.w_audio[0]).shape[1]) if self.w_audio else 0,
        }

    def check(self, dims: dict[str, int]) -> None:
        n = self.n_sent
        if n < 1:
            raise SdebError(f"bundle {self.entry_id!r} has no sentences")
        if any(q < 1 for q in self.word_counts):
            raise SdebError(f"bundle {self.entry_id!r} has an empty sentence")
        if self.n_audio not in (n, n - 1):
            raise SdebError(f"bundle {self.entry_id!r}: audio must cover N or N-1 turns")
        shapes = {
            "d_text": (np.asarray(self.d_text).shape, (dims["d_dt"],)),
            "s_text": (np.asarray(self.s_text).shape, (n, dims["d_st"])),
            "d_audio": (np.asarray(self.d_audio).shape, (dims["d_da"],)),
            "s_audio": (np.asarray(self.s_audio).shape, (self.n_audio, dims["d_sa"])),
        }
        for name, (got, want) in shapes.items():
            if tuple(got) != want:
                raise SdebError(f"bundle {self.entry_id!r}: {name} is {got}, expected {want}")
        if len(self.w_text) != n or len(self.w_audio) != self.n_audio:
            raise SdebError(f"bundle {self.entry_id!r}: ragged word groups do not match turn counts")
        for i, q in enumerate(self.word_counts):
            if tuple(np.asarray(self.w_text[i]).shape) != (q, dims["d_wt"]):
                raise SdebError(f"bundle {self.entry_id!r}: w_text[{i}] shape mismatch")
            if i < self.n_audio and tuple(np.asarray(self.w_audio[i]).shape) != (q, dims["d_wa"]):
                raise SdebError(f"bundle {self.entry_id!r}: w_audio[{i}] shape mismatch")


def write_bundles(path, bundles: list[RawBundle], dims: dict[str, int]) -> None:
    missing = [k for k in DIM_KEYS if k not in dims]
    if missing:
        raise SdebError(f"dims record lacks {missing}")
    parts = [b"SDEB", _U32.pack(1)]
    parts += [_U32.pack(int(dims[k])) for k in DIM_KEYS]
    parts.append(_U32.pack(len(bundles)))
    for b in bundles:
        b.check(dims)
        raw_id = b.entry_id.encode("utf-8")
        parts.append(_U32.pack(len(raw_id)))
        parts.append(raw_id)
        n = b.n_sent
        parts.append(_U32.pack(n))
        parts += [_U32.pack(int(q)) for q in b.word_counts]
        bitmap = bytearray((n + 7) // 8)
        for i in range(b.n_audio):
            bitmap[i // 8] |= 1 << (i % 8)
        parts.append(bytes(bitmap))
        parts.append(_f32(b.d_text).tobytes())
        parts.append(_f32(b.s_text).tobytes())
        for w in b.w_text:
            parts.append(_f32(w).tobytes())
        parts.append(_f32(b.d_audio).tobytes())
        parts.append(_f32(b.s_audio).tobytes())
        for w in b.w_audio:
            parts.append(_f32(w).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [b"SDWT", _U32.pack(1), _U32.pack(len(tensors))]
    for name in sorted(tensors):
        arr = _f32(tensors[name])
        raw_name = name.encode("utf-8")
        parts.append(_U32.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U32.pack(arr.ndim))
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise SdebError(f"truncated file while reading {what} at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def floats(self, count: int, what: str) -> np.ndarray:
        arr = np.frombuffer(self.take(4 * count, what), dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise SdebError(f"non-finite floats in {what}")
        return arr


def validate_bundles(path) -> dict:
    """Re-read an SDEB file and check every structural invariant.

    Returns a summary dict (entry count, dims, absent-audio count)."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    if cur.take(4, "magic") != b"SDEB":
        raise SdebError(f"{path}: bad magic")
    if cur.u32("version") != 1:
        raise SdebError(f"{path}: unsupported version")
    dims = {k: cur.u32(k) for k in DIM_KEYS}
    count = cur.u32("bundle count")
    absent = 0
    ids = set()
    for _ in range(count):
        raw_id = cur.take(cur.u32("id length"), "entry id").decode("utf-8")
        if raw_id in ids:
            raise SdebError(f"{path}: duplicate entry id {raw_id!r}")
        ids.add(raw_id)
        n = cur.u32("sentence count")
        if n < 1:
            raise SdebError(f"{path}: bundle {raw_id!r} has no sentences")
        counts = [cur.u32("word count") for _ in range(n)]
        if any(q < 1 for q in counts):
            raise SdebError(f"{path}: bundle {raw_id!r} has a zero word count")
        bitmap = cur.take((n + 7) // 8, "presence bitmap")
        present = [(bitmap[i // 8] >> (i % 8)) & 1 for i in range(n)]
        if not all(present[: n - 1]):
            raise SdebError(f"{path}: bundle {raw_id!r} has a non-trailing absent audio row")
        n_audio = sum(present)
        absent += int(n_audio == n - 1)
        cur.floats(dims["d_dt"], "d_text")
        cur.floats(n * dims["d_st"], "s_text")
        for q in counts:
            cur.floats(q * dims["d_wt"], "w_text")
        cur.floats(dims["d_da"], "d_audio")
        cur.floats(n_audio * dims["d_sa"], "s_audio")
        for i in range(n_audio):
            cur.floats(counts[i] * dims["d_wa"], "w_audio")
    if cur.pos != len(cur.data):
        raise SdebError(f"{path}: {len(cur.data) - cur.pos} trailing bytes")
    return {"entries": count, "dims": dims, "last_audio_absent": absent}
