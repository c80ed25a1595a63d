"""Binary file formats: SDEB bundles, SDWT named tensors, SDFV vectors, SDSS stores.

All formats are little-endian throughout; float payloads are raw IEEE-754
binary32, row-major, uncompressed. Round trips are bit-exact on the float
payload. Layouts:

``SDEB`` (embedding bundles)
    magic ``SDEB`` | u32 version=1 | 8 x u32 dims
    (d_sem, d_sty, d_dt, d_st, d_wt, d_da, d_sa, d_wa; 0 = track absent)
    | u32 bundle count, then per bundle:
    u32 id length | id UTF-8 | u32 N | N x u32 word counts
    | audio presence bitmap (N bits, LSB-first, padded to whole bytes)
    | d_text | s_text | w_text | d_audio | s_audio | w_audio
    where the audio payloads carry rows for present turns only.

``SDWT`` (named tensors)
    magic ``SDWT`` | u32 version=1 | u32 tensor count, then per tensor:
    u32 name length | name UTF-8 | u32 rank | rank x u32 dims | payload.

``SDFV`` (single vector)
    magic ``SDFV`` | u32 version=1 | u32 dim | payload.

``SDSS`` (store vectors; texts/speakers live in the JSON sidecar)
    magic ``SDSS`` | u32 version=1 | 8 x u32 dims | u32 entry count,
    then per entry: u32 id length | id UTF-8 | semantic vec | style vec.
"""

from __future__ import annotations

import struct
from typing import Mapping, Sequence

import numpy as np

from .errors import DimError, FormatError
from .types import BundleDims, EmbeddingBundle, validate_bundle_dims

MAGIC_BUNDLE = b"SDEB"
MAGIC_WEIGHTS = b"SDWT"
MAGIC_VECTOR = b"SDFV"
MAGIC_STORE = b"SDSS"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u32(self, value: int) -> None:
        if value < 0 or value > 0xFFFFFFFF:
            raise FormatError(f"u32 out of range: {value}")
        self.parts.append(_U32.pack(value))

    def raw(self, data: bytes) -> None:
        self.parts.append(data)

    def string(self, s: str) -> None:
        data = s.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def f32(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(f"truncated payload reading {what}", self.offset)
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        start = self.offset
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", start) from None

    def f32(self, count: int, what: str) -> np.ndarray:
        start = self.offset
        raw = self.take(4 * count, what)
        arr = np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{what} contains non-finite floats", start)
        return arr

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)

    def expect_version(self) -> None:
        start = self.offset
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}", start)

    def done(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(f"{len(self.data) - self.offset} trailing bytes", self.offset)


def _presence_bitmap(n: int, n_present: int) -> bytes:
    bits = bytearray((n + 7) // 8)
    for i in range(n_present):
        bits[i // 8] |= 1 << (i % 8)
    return bytes(bits)


def _encode_bundle(w: _Writer, bundle: EmbeddingBundle) -> None:
    n = bundle.n_sent
    w.string(bundle.entry_id)
    w.u32(n)
    for q in bundle.word_counts:
        w.u32(q)
    w.raw(_presence_bitmap(n, bundle.n_audio))
    w.f32(bundle.d_text)
    w.f32(bundle.s_text)
    for wt in bundle.w_text:
        w.f32(wt)
    w.f32(bundle.d_audio)
    w.f32(bundle.s_audio)
    for wa in bundle.w_audio:
        w.f32(wa)


def _decode_bundle(r: _Reader, dims: BundleDims) -> EmbeddingBundle:
    entry_id = r.string("entry id")
    n_offset = r.offset
    n = r.u32("sentence count")
    if n == 0:
        raise FormatError(f"bundle {entry_id!r} has zero sentences", n_offset)
    counts = []
    for i in range(n):
        q_offset = r.offset
        q = r.u32(f"word count {i}")
        if q == 0:
            raise FormatError(f"bundle {entry_id!r}: zero word count for sentence {i}", q_offset)
        counts.append(q)
    bm_offset = r.offset
    bitmap = r.take((n + 7) // 8, "audio presence bitmap")
    present = [(bitmap[i // 8] >> (i % 8)) & 1 == 1 for i in range(n)]
    if not all(present[: n - 1]):
        raise FormatError(f"bundle {entry_id!r}: only the last audio row may be absent", bm_offset)
    n_audio = sum(present)

    d_text = r.f32(dims.d_dt, "d_text")
    s_text = r.f32(n * dims.d_st, "s_text").reshape(n, dims.d_st)
    w_text = tuple(r.f32(q * dims.d_wt, f"w_text {i}").reshape(q, dims.d_wt) for i, q in enumerate(counts))
    d_audio = r.f32(dims.d_da, "d_audio")
    s_audio = r.f32(n_audio * dims.d_sa, "s_audio").reshape(n_audio, dims.d_sa)
    w_audio = tuple(
        r.f32(counts[i] * dims.d_wa, f"w_audio {i}").reshape(counts[i], dims.d_wa) for i in range(n_audio)
    )
    return EmbeddingBundle(
        entry_id=entry_id,
        word_counts=tuple(counts),
        d_text=d_text,
        s_text=s_text,
        w_text=w_text,
        d_audio=d_audio,
        s_audio=s_audio,
        w_audio=w_audio,
    )


def write_bundle_file(path, bundles: Sequence[EmbeddingBundle], dims: BundleDims) -> None:
    """Write an SDEB file; every bundle must match the dims block."""
    for b in bundles:
        validate_bundle_dims(b, dims)
    w = _Writer()
    w.raw(MAGIC_BUNDLE)
    w.u32(FORMAT_VERSION)
    for d in dims.as_tuple():
        w.u32(d)
    w.u32(len(bundles))
    for b in bundles:
        _encode_bundle(w, b)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def read_bundle_file(path) -> tuple[BundleDims, list[EmbeddingBundle]]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    r.expect_magic(MAGIC_BUNDLE)
    r.expect_version()
    dims = BundleDims.from_tuple([r.u32(f"dim {i}") for i in range(8)])
    count = r.u32("bundle count")
    bundles = [_decode_bundle(r, dims) for _ in range(count)]
    r.done()
    return dims, bundles


def write_weights_file(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write an SDWT named-tensor file (names sorted for reproducibility)."""
    w = _Writer()
    w.raw(MAGIC_WEIGHTS)
    w.u32(FORMAT_VERSION)
    w.u32(len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} contains non-finite values")
        w.string(name)
        w.u32(arr.ndim)
        for d in arr.shape:
            w.u32(d)
        w.f32(arr)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def read_weights_file(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    r.expect_magic(MAGIC_WEIGHTS)
    r.expect_version()
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string("tensor name")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", r.offset)
        rank = r.u32("rank")
        shape = tuple(r.u32(f"{name} dim {i}") for i in range(rank))
        size = 1
        for d in shape:
            size *= d
        tensors[name] = r.f32(size, f"tensor {name}").reshape(shape)
    r.done()
    return tensors


def write_vector_file(path, vec: np.ndarray) -> None:
    """Write an SDFV single-vector file."""
    arr = np.asarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise DimError(f"SDFV payload must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("SDFV payload contains non-finite values")
    w = _Writer()
    w.raw(MAGIC_VECTOR)
    w.u32(FORMAT_VERSION)
    w.u32(arr.shape[0])
    w.f32(arr)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def read_vector_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    r.expect_magic(MAGIC_VECTOR)
    r.expect_version()
    dim = r.u32("dim")
    vec = r.f32(dim, "vector payload")
    r.done()
    return vec


def write_store_file(path, dims: BundleDims, ids: Sequence[str], sem: np.ndarray, sty: np.ndarray) -> None:
    """Write an SDSS vector file (texts/speakers go in the JSON sidecar)."""
    sem = np.asarray(sem, dtype=np.float32)
    sty = np.asarray(sty, dtype=np.float32)
    if sem.shape != (len(ids), dims.d_sem) or sty.shape != (len(ids), dims.d_sty):
        raise DimError(
            f"store vectors shaped {sem.shape}/{sty.shape}, expected "
            f"({len(ids)}, {dims.d_sem})/({len(ids)}, {dims.d_sty})"
        )
    w = _Writer()
    w.raw(MAGIC_STORE)
    w.u32(FORMAT_VERSION)
    for d in dims.as_tuple():
        w.u32(d)
    w.u32(len(ids))
    for i, entry_id in enumerate(ids):
        w.string(entry_id)
        w.f32(sem[i])
        w.f32(sty[i])
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def read_store_file(path) -> tuple[BundleDims, list[str], np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    r.expect_magic(MAGIC_STORE)
    r.expect_version()
    dims = BundleDims.from_tuple([r.u32(f"dim {i}") for i in range(8)])
    count = r.u32("entry count")
    ids: list[str] = []
    seen: set[str] = set()
    sem = np.zeros((count, dims.d_sem), dtype=np.float32)
    sty = np.zeros((count, dims.d_sty), dtype=np.float32)
    for i in range(count):
        entry_id = r.string("entry id")
        if entry_id in seen:
            raise FormatError(f"duplicate entry id {entry_id!r}", r.offset)
        seen.add(entry_id)
        ids.append(entry_id)
        sem[i] = r.f32(dims.d_sem, f"semantic vec {entry_id}")
        sty[i] = r.f32(dims.d_sty, f"style vec {entry_id}")
    r.done()
    return dims, ids, sem, sty
