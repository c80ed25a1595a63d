"""Seeded reference weights in the engine's named-tensor layout.

Training is out of scope everywhere, so the engine loads deterministic
uniform(-scale, scale) parameters generated here. Tensor names follow the
engine's weights-file contract: ``encoder.text.*`` / ``encoder.audio.*``
for the two graph encoders, ``an_predictor.*`` for the missing-turn style
predictor and ``an_proj.*`` for the style projection. A zero scale gives
all-zero files (handy for the engine's bias-only examples).
"""

from __future__ import annotations

import numpy as np

RELATIONS = ("word_in_sent", "sent_in_dial", "word_adj", "sent_adj")


def _spec(dims: dict, hidden: int, predictor_hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic (name, shape) list; generation order is this order."""
    names: list[tuple[str, tuple[int, ...]]] = []

    def encoder(prefix: str, d_dial: int, d_sent: int, d_word: int):
        names.append((f"{prefix}proj.dial.w", (hidden, d_dial)))
        names.append((f"{prefix}proj.dial.b", (hidden,)))
        names.append((f"{prefix}proj.sent.w", (hidden, d_sent)))
        names.append((f"{prefix}proj.sent.b", (hidden,)))
        names.append((f"{prefix}proj.word.w", (hidden, d_word)))
        names.append((f"{prefix}proj.word.b", (hidden,)))
        for rel in RELATIONS:
            for direction in ("fwd", "rev"):
                base = f"{prefix}rel.{rel}.{direction}."
                names.append((base + "self", (hidden, hidden)))
                names.append((base + "neigh", (hidden, hidden)))
                names.append((base + "bias", (hidden,)))
        half = hidden // 2
        for fuser in ("sent", "word"):
            for direction in ("fwd", "bwd"):
                base = f"{prefix}fuser.{fuser}.{direction}."
                names.append((base + "w_ih", (4 * half, hidden)))
                names.append((base + "w_hh", (4 * half, half)))
                names.append((base + "b_ih", (4 * half,)))
                names.append((base + "b_hh", (4 * half,)))
        names.append((f"{prefix}fusion.w", (hidden, 3 * hidden)))
        names.append((f"{prefix}fusion.b", (hidden,)))

    encoder("encoder.text.", dims["d_dt"], dims["d_st"], dims["d_wt"])
    encoder("encoder.audio.", dims["d_da"], dims["d_sa"], dims["d_wa"])

    h = predictor_hidden
    for track, d_in in (("text", dims["d_st"]), ("audio", dims["d_sa"])):
        for direction in ("fwd", "bwd"):
            base = f"an_predictor.{track}.gru.{direction}."
            names.append((base + "w_ih", (3 * h, d_in)))
            names.append((base + "w_hh", (3 * h, h)))
            names.append((base + "b_ih", (3 * h,)))
            names.append((base + "b_hh", (3 * h,)))
        names.append((f"an_predictor.{track}.fc1.w", (h, 2 * h)))
        names.append((f"an_predictor.{track}.fc1.b", (h,)))
        names.append((f"an_predictor.{track}.fc2.w", (h, h)))
        names.append((f"an_predictor.{track}.fc2.b", (h,)))
    names.append(("an_predictor.combine.w", (dims["d_sa"], h)))
    names.append(("an_predictor.combine.b", (dims["d_sa"],)))

    names.append(("an_proj.w", (hidden, dims["d_sa"])))
    names.append(("an_proj.b", (hidden,)))
    return names


def gen_reference_weights(
    dims: dict,
    seed: int = 0,
    *,
    scale: float = 0.1,
    hidden: int = 256,
    predictor_hidden: int = 64,
) -> dict[str, np.ndarray]:
    if hidden % 2 != 0:
        raise ValueError(f"hidden width must be even, got {hidden}")
    rng = np.random.default_rng(seed)
    return {
        name: rng.uniform(-scale, scale, size=shape).astype(np.float32)
        for name, shape in _spec(dims, hidden, predictor_hidden)
    }
