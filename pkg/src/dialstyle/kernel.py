"""Deterministic float32 vector/matrix kernel.

All public operations take and return float32 arrays ("Vec32"/"Mat32"),
accumulate in float64, and use a fixed row-major, left-to-right summation
order (``np.einsum`` without BLAS dispatch) so results are bit-identical
across runs and thread counts. Every operation is pure.
"""

from __future__ import annotations

import numpy as np

from .errors import DimError

# Norms below this are treated as zero vectors (degenerate-input policy).
ZERO_NORM_EPS = 1e-12


def as_vec32(values, *, name: str = "vector", allow_empty: bool = False) -> np.ndarray:
    """Coerce to a 1-D float32 array and validate finiteness."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise DimError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] == 0 and not allow_empty:
        raise DimError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise DimError(f"{name} contains non-finite values")
    return arr


def as_mat32(values, *, name: str = "matrix", allow_empty: bool = False) -> np.ndarray:
    """Coerce to a 2-D row-major float32 array and validate finiteness."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DimError(f"{name} must be 2-D, got shape {arr.shape}")
    if (arr.shape[0] == 0 or arr.shape[1] == 0) and not allow_empty:
        raise DimError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimError(f"{name} contains non-finite values")
    return arr


def dot64(a: np.ndarray, b: np.ndarray) -> float:
    """Ordered float64 dot product (no BLAS, fixed summation order)."""
    return float(np.einsum("i,i->", a.astype(np.float64), b.astype(np.float64)))


def norm64(a: np.ndarray) -> float:
    return float(np.sqrt(np.einsum("i,i->", a.astype(np.float64), a.astype(np.float64))))


def cosine(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0.0 when either input is (near-)zero."""
    av = as_vec32(a, name="a")
    bv = as_vec32(b, name="b")
    if av.shape[0] != bv.shape[0]:
        raise DimError(f"cosine dims differ: {av.shape[0]} vs {bv.shape[0]}")
    na = norm64(av)
    nb = norm64(bv)
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        return 0.0
    c = dot64(av, bv) / (na * nb)
    return float(min(1.0, max(-1.0, c)))


def softmax(logits) -> np.ndarray:
    """Stable softmax (max-subtraction); entries positive, summing to 1."""
    v = as_vec32(logits, name="logits")
    x = v.astype(np.float64)
    x -= x.max()
    e = np.exp(x)
    return (e / np.einsum("i->", e)).astype(np.float32)


def matvec(m, v) -> np.ndarray:
    """Dense matrix-vector product with float64 accumulation."""
    mm = as_mat32(m, name="m")
    vv = as_vec32(v, name="v")
    if mm.shape[1] != vv.shape[0]:
        raise DimError(f"matvec inner dims differ: {mm.shape[1]} vs {vv.shape[0]}")
    out = np.einsum("ij,j->i", mm.astype(np.float64), vv.astype(np.float64))
    return out.astype(np.float32)


def matmul(a, b) -> np.ndarray:
    """Dense matrix product with float64 accumulation."""
    am = as_mat32(a, name="a")
    bm = as_mat32(b, name="b")
    if am.shape[1] != bm.shape[0]:
        raise DimError(f"matmul inner dims differ: {am.shape[1]} vs {bm.shape[0]}")
    out = np.einsum("ij,jk->ik", am.astype(np.float64), bm.astype(np.float64))
    return out.astype(np.float32)


def mean_rows(m) -> np.ndarray:
    """Mean over rows, accumulated in float64."""
    mm = as_mat32(m, name="m")
    return np.mean(mm.astype(np.float64), axis=0).astype(np.float32)


def l2_normalize(v) -> np.ndarray:
    """Unit-normalize; near-zero vectors are returned unchanged."""
    vv = as_vec32(v, name="v")
    n = norm64(vv)
    if n < ZERO_NORM_EPS:
        return vv
    return (vv.astype(np.float64) / n).astype(np.float32)


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return a read-only contiguous copy (immutability after construction)."""
    out = np.ascontiguousarray(arr)
    if out is arr or out.base is arr:
        out = out.copy()
    out.setflags(write=False)
    return out
