"""Bidirectional recurrent forward passes (gated update/reset and LSTM forms).

Weight layouts follow the stacked-gate convention: for a hidden size H the
input-to-hidden matrix stacks the gates along the first axis — (r, z, n)
for the gated update/reset cell, (i, f, g, o) for the LSTM cell. All
recurrences run in float64 internally and return float32.

Each direction of a bidirectional run is pooled in its own compute order;
this keeps the forward/backward halves exactly symmetric under input
reversal when the two directions share weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimError, WeightsError
from .kernel import as_mat32, as_vec32, frozen


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def weights_mat(values, *, name: str) -> np.ndarray:
    """Like ``as_mat32`` but flags non-finite parameters as WeightsError."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise WeightsError(f"{name} contains non-finite values")
    return frozen(as_mat32(arr, name=name))


def weights_vec(values, *, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise WeightsError(f"{name} contains non-finite values")
    return frozen(as_vec32(arr, name=name))


@dataclass(frozen=True)
class RecurrentDirection:
    """One direction's parameters: stacked-gate input/hidden weights and biases."""

    w_ih: np.ndarray
    w_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_ih", weights_mat(self.w_ih, name="w_ih"))
        object.__setattr__(self, "w_hh", weights_mat(self.w_hh, name="w_hh"))
        object.__setattr__(self, "b_ih", weights_vec(self.b_ih, name="b_ih"))
        object.__setattr__(self, "b_hh", weights_vec(self.b_hh, name="b_hh"))

    def check(self, gates: int, d_in: int) -> int:
        """Validate shapes for a cell with ``gates`` stacked gates; returns H."""
        rows = self.w_ih.shape[0]
        if rows % gates != 0:
            raise DimError(f"w_ih rows {rows} not a multiple of gate count {gates}")
        hidden = rows // gates
        if self.w_ih.shape != (gates * hidden, d_in):
            raise DimError(f"w_ih shape {self.w_ih.shape}, expected ({gates * hidden}, {d_in})")
        if self.w_hh.shape != (gates * hidden, hidden):
            raise DimError(f"w_hh shape {self.w_hh.shape}, expected ({gates * hidden}, {hidden})")
        if self.b_ih.shape != (gates * hidden,) or self.b_hh.shape != (gates * hidden,):
            raise DimError("bias shapes do not match stacked gate layout")
        return hidden


@dataclass(frozen=True)
class Bidirectional:
    """Forward/backward direction pair with identical shapes."""

    fwd: RecurrentDirection
    bwd: RecurrentDirection

    def check(self, gates: int, d_in: int) -> int:
        h_f = self.fwd.check(gates, d_in)
        h_b = self.bwd.check(gates, d_in)
        if h_f != h_b:
            raise DimError(f"direction hidden sizes differ: {h_f} vs {h_b}")
        return h_f


def gru_direction(seq: np.ndarray, w: RecurrentDirection) -> np.ndarray:
    """Run a gated update/reset cell over ``seq`` (T, D); returns (T, H) states.

    r_t = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z_t = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n_t = tanh(W_in x + b_in + r_t * (W_hn h + b_hn))
    h_t = (1 - z_t) * n_t + z_t * h_{t-1}
    """
    hidden = w.check(3, seq.shape[1])
    w_ih = w.w_ih.astype(np.float64)
    w_hh = w.w_hh.astype(np.float64)
    b_ih = w.b_ih.astype(np.float64)
    b_hh = w.b_hh.astype(np.float64)
    h = np.zeros(hidden, dtype=np.float64)
    states = np.empty((seq.shape[0], hidden), dtype=np.float64)
    for t in range(seq.shape[0]):
        x = seq[t].astype(np.float64)
        gi = np.einsum("ij,j->i", w_ih, x) + b_ih
        gh = np.einsum("ij,j->i", w_hh, h) + b_hh
        r = _sigmoid(gi[:hidden] + gh[:hidden])
        z = _sigmoid(gi[hidden : 2 * hidden] + gh[hidden : 2 * hidden])
        n = np.tanh(gi[2 * hidden :] + r * gh[2 * hidden :])
        h = (1.0 - z) * n + z * h
        states[t] = h
    return states.astype(np.float32)


def lstm_direction(seq: np.ndarray, w: RecurrentDirection) -> np.ndarray:
    """Run an LSTM cell over ``seq`` (T, D); returns (T, H) hidden states.

    i, f, o = sigmoid gates; g = tanh candidate;
    c_t = f * c_{t-1} + i * g;  h_t = o * tanh(c_t)
    """
    hidden = w.check(4, seq.shape[1])
    w_ih = w.w_ih.astype(np.float64)
    w_hh = w.w_hh.astype(np.float64)
    b_ih = w.b_ih.astype(np.float64)
    b_hh = w.b_hh.astype(np.float64)
    h = np.zeros(hidden, dtype=np.float64)
    c = np.zeros(hidden, dtype=np.float64)
    states = np.empty((seq.shape[0], hidden), dtype=np.float64)
    for t in range(seq.shape[0]):
        x = seq[t].astype(np.float64)
        g = np.einsum("ij,j->i", w_ih, x) + b_ih + np.einsum("ij,j->i", w_hh, h) + b_hh
        i = _sigmoid(g[:hidden])
        f = _sigmoid(g[hidden : 2 * hidden])
        cand = np.tanh(g[2 * hidden : 3 * hidden])
        o = _sigmoid(g[3 * hidden :])
        c = f * c + i * cand
        h = o * np.tanh(c)
        states[t] = h
    return states.astype(np.float32)


def _bidi_run(seq: np.ndarray, w: Bidirectional, direction_fn) -> tuple[np.ndarray, np.ndarray]:
    """Returns (fwd states in fwd order, bwd states in bwd compute order)."""
    fwd = direction_fn(seq, w.fwd)
    bwd = direction_fn(seq[::-1], w.bwd)
    return fwd, bwd


def _steps(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    # Per-step output at position t concatenates fwd[t] with the backward
    # state computed for position t (stored reversed).
    return np.concatenate([fwd, bwd[::-1]], axis=1)


def _mean_pool(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    # Pool each direction in its own compute order (bit-stable symmetry).
    return np.concatenate([
        np.mean(fwd.astype(np.float64), axis=0),
        np.mean(bwd.astype(np.float64), axis=0),
    ]).astype(np.float32)


def _final_pool(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    return np.concatenate([fwd[-1], bwd[-1]]).astype(np.float32)


def bigru_steps(seq, w: Bidirectional) -> np.ndarray:
    seq = as_mat32(seq, name="sequence")
    fwd, bwd = _bidi_run(seq, w, gru_direction)
    return _steps(fwd, bwd)


def bigru_pool(seq, w: Bidirectional, pooling: str = "mean") -> np.ndarray:
    """Sequence to (2H,) vector: temporal mean (default) or final states."""
    seq = as_mat32(seq, name="sequence")
    fwd, bwd = _bidi_run(seq, w, gru_direction)
    return _mean_pool(fwd, bwd) if pooling == "mean" else _final_pool(fwd, bwd)


def bilstm_steps(seq, w: Bidirectional) -> np.ndarray:
    seq = as_mat32(seq, name="sequence")
    fwd, bwd = _bidi_run(seq, w, lstm_direction)
    return _steps(fwd, bwd)


def bilstm_pool(seq, w: Bidirectional, pooling: str = "mean") -> np.ndarray:
    seq = as_mat32(seq, name="sequence")
    fwd, bwd = _bidi_run(seq, w, lstm_direction)
    return _mean_pool(fwd, bwd) if pooling == "mean" else _final_pool(fwd, bwd)
