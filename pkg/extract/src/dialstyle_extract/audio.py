"""WAV loading and light-weight frame features for the offline backend."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as mono float64 samples in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        n_channels = fh.getnchannels()
        sample_width = fh.getsampwidth()
        rate = fh.getframerate()
        frames = fh.readframes(fh.getnframes())
    if sample_width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    elif sample_width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif sample_width == 4:
        samples = np.frombuffer(frames, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample width {sample_width}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def slice_span(samples: np.ndarray, rate: int, start: float, end: float) -> np.ndarray:
    """At least one sample is returned even for out-of-range spans."""
    if len(samples) == 0:
        return samples
    lo = min(max(0, int(round(start * rate))), len(samples) - 1)
    hi = min(len(samples), max(lo + 1, int(round(end * rate))))
    return samples[lo:hi]


def frame_features(samples: np.ndarray, rate: int, win: float = 0.025, hop: float = 0.010) -> np.ndarray:
    """(n_frames, 4) matrix of [mean, std, abs-max, zero-crossing rate]."""
    if len(samples) == 0:
        samples = np.zeros(1, dtype=np.float64)
    size = max(1, int(round(win * rate)))
    step = max(1, int(round(hop * rate)))
    rows = []
    for lo in range(0, len(samples), step):
        frame = samples[lo : lo + size]
        if len(frame) == 0:
            break
        crossings = float(np.count_nonzero(np.diff(np.signbit(frame)))) / max(1, len(frame) - 1)
        rows.append([float(frame.mean()), float(frame.std()), float(np.abs(frame).max()), crossings])
        if lo + size >= len(samples):
            break
    return np.asarray(rows, dtype=np.float64)


def audio_duration(path) -> float:
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def resolve_audio(audio_root, ref: str) -> Path:
    path = Path(ref)
    if not path.is_absolute():
        path = Path(audio_root) / path
    return path
