"""Graph construction, message passing vs a dense oracle, and encoding."""

import numpy as np
import pytest

from dialstyle.errors import GraphError
from dialstyle.formats import read_weights_file, write_weights_file
from dialstyle.mghg import (
    DIRECTED_RELATIONS,
    Mghg,
    MghgEncoderWeights,
    RelationWeights,
    build_mghg,
    dump_graph,
    encode_current_dialogue,
    encode_dialogue,
    hetero_message_pass,
)
from dialstyle.recurrent import Bidirectional, bilstm_pool, bilstm_steps
from dialstyle.synthetic import random_encoder_weights
from dialstyle.types import BundleDims

from conftest import (
    SMALL_DIMS,
    make_bundle,
    passthrough_encoder_weights,
    rng_for,
    zero_bidirectional,
    zero_encoder_weights,
)


def graph_for_counts(rng, counts, d=3):
    return build_mghg(
        rng.normal(size=d).astype(np.float32),
        rng.normal(size=(len(counts), d)).astype(np.float32),
        [rng.normal(size=(q, d)).astype(np.float32) for q in counts],
    )


class TestBuildMghg:
    @pytest.mark.parametrize(
        "counts, expected",
        [
            ((3, 3), dict(words=6, wis=6, sid=2, wadj=4, sadj=1)),
            ((1,), dict(words=1, wis=1, sid=1, wadj=0, sadj=0)),
            ((2, 1, 4), dict(words=7, wis=7, sid=3, wadj=4, sadj=2)),
        ],
    )
    def test_structural_counts(self, counts, expected):
        g = graph_for_counts(rng_for(201), counts)
        assert g.n_word == expected["words"]
        assert len(g.word_in_sent) == expected["wis"]
        assert len(g.sent_in_dial) == expected["sid"]
        assert len(g.word_adj) == expected["wadj"]
        assert len(g.sent_adj) == expected["sadj"]

    def test_counts_fuzz(self):
        rng = rng_for(202)
        for _ in range(500):
            n = int(rng.integers(1, 6))
            counts = [int(q) for q in rng.integers(1, 5, size=n)]
            g = graph_for_counts(rng, counts)
            assert len(g.word_in_sent) == sum(counts)
            assert len(g.sent_in_dial) == n
            assert len(g.word_adj) == sum(q - 1 for q in counts)
            assert len(g.sent_adj) == n - 1

    def test_word_parents_and_order(self):
        g = graph_for_counts(rng_for(203), (2, 3))
        assert g.word_in_sent == ((0, 0), (1, 0), (2, 1), (3, 1), (4, 1))
        assert g.word_adj == ((0, 1), (2, 3), (3, 4))
        assert g.sent_adj == ((0, 1),)

    def test_empty_dialogue_rejected(self):
        with pytest.raises(GraphError):
            build_mghg(np.ones(3, dtype=np.float32), np.zeros((0, 3), dtype=np.float32), [])

    def test_empty_sentence_rejected(self):
        rng = rng_for(204)
        with pytest.raises(GraphError):
            build_mghg(
                rng.normal(size=3).astype(np.float32),
                rng.normal(size=(1, 3)).astype(np.float32),
                [np.zeros((0, 3), dtype=np.float32)],
            )

    def test_dump_graph_shape(self):
        g = graph_for_counts(rng_for(205), (2, 1))
        dump = dump_graph(g)
        assert dump["nodes"] == {"dial": 1, "sent": 2, "word": 3}
        assert set(dump["checksums"]) == {"dial", "sent", "word"}


def dense_oracle(counts, feats_dial, feats_sent, feats_word, w: MghgEncoderWeights):
    """Message passing via dense per-relation adjacency matrices, built
    independently from the word counts."""
    n = len(counts)
    total = sum(counts)
    h = w.hidden

    proj = {
        "dial": (w.proj_dial_w.astype(np.float64) @ feats_dial.astype(np.float64)
                 + w.proj_dial_b.astype(np.float64)).reshape(1, h),
        "sent": feats_sent.astype(np.float64) @ w.proj_sent_w.astype(np.float64).T
                + w.proj_sent_b.astype(np.float64),
        "word": feats_word.astype(np.float64) @ w.proj_word_w.astype(np.float64).T
                + w.proj_word_b.astype(np.float64),
    }
    sizes = {"dial": 1, "sent": n, "word": total}

    # Forward-orientation adjacency: A[dst, src] = 1.
    adj = {}
    a = np.zeros((n, total))
    base = 0
    for i, q in enumerate(counts):
        a[i, base : base + q] = 1.0
        base += q
    adj[("word_in_sent", "fwd")] = ("word", "sent", a)
    adj[("word_in_sent", "rev")] = ("sent", "word", a.T.copy())
    a = np.zeros((1, n))
    a[0, :] = 1.0
    adj[("sent_in_dial", "fwd")] = ("sent", "dial", a)
    adj[("sent_in_dial", "rev")] = ("dial", "sent", a.T.copy())
    a = np.zeros((total, total))
    base = 0
    for q in counts:
        for j in range(q - 1):
            a[base + j + 1, base + j] = 1.0  # forward: w_j -> w_{j+1}
        base += q
    adj[("word_adj", "fwd")] = ("word", "word", a)
    adj[("word_adj", "rev")] = ("word", "word", a.T.copy())
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i + 1, i] = 1.0
    adj[("sent_adj", "fwd")] = ("sent", "sent", a)
    adj[("sent_adj", "rev")] = ("sent", "sent", a.T.copy())

    out = {t: np.zeros((sizes[t], h)) for t in sizes}
    for key, (src_t, dst_t, a) in adj.items():
        rw = w.relations[key]
        deg = a.sum(axis=1)
        has = deg > 0
        if not has.any():
            continue
        means = np.zeros((sizes[dst_t], h))
        means[has] = (a[has] @ proj[src_t]) / deg[has, None]
        contrib = (
            proj[dst_t][has] @ rw.w_self.astype(np.float64).T
            + means[has] @ rw.w_neigh.astype(np.float64).T
            + rw.bias.astype(np.float64)
        )
        out[dst_t][has] += contrib
    return out["dial"][0], out["sent"], out["word"]


class TestMessagePassing:
    def test_zero_weights_give_zeros(self):
        rng = rng_for(211)
        g = graph_for_counts(rng, (2, 3), d=4)
        w = zero_encoder_weights(4, 4, 4, hidden=6)
        dial, sents, words = hetero_message_pass(g, w)
        assert not dial.any() and not sents.any() and not words.any()

    def test_word_to_sentence_identity(self):
        # Single sentence, single word; only word->sentence carries I as the
        # neighbor transform, so the sentence feature becomes the word's.
        x = np.array([1.5, -2.0, 0.25, 3.0], dtype=np.float32)
        g = build_mghg(
            np.zeros(4, dtype=np.float32),
            np.zeros((1, 4), dtype=np.float32),
            [x.reshape(1, 4)],
        )
        w = zero_encoder_weights(4, 4, 4, hidden=4)
        relations = dict(w.relations)
        relations[("word_in_sent", "fwd")] = RelationWeights(
            w_self=np.zeros((4, 4), dtype=np.float32),
            w_neigh=np.eye(4, dtype=np.float32),
            bias=np.zeros(4, dtype=np.float32),
        )
        w = MghgEncoderWeights(
            proj_dial_w=np.eye(4, dtype=np.float32), proj_dial_b=w.proj_dial_b,
            proj_sent_w=np.eye(4, dtype=np.float32), proj_sent_b=w.proj_sent_b,
            proj_word_w=np.eye(4, dtype=np.float32), proj_word_b=w.proj_word_b,
            relations=relations,
            sent_fuser=w.sent_fuser, word_fuser=w.word_fuser,
            fusion_w=w.fusion_w, fusion_b=w.fusion_b,
        )
        _, sents, _ = hetero_message_pass(g, w)
        np.testing.assert_allclose(sents[0], x, atol=1e-6)

    def test_matches_dense_oracle(self):
        rng = rng_for(212)
        for _ in range(200):
            n = int(rng.integers(1, 4))
            remaining = 12 - 1 - n
            counts = []
            for i in range(n):
                hi = max(1, remaining - (n - i - 1))
                q = int(rng.integers(1, min(4, hi) + 1))
                counts.append(q)
                remaining -= q
            d = int(rng.integers(2, 5))
            h = 2 * int(rng.integers(1, 4))
            g = graph_for_counts(rng, counts, d=d)
            w = random_encoder_weights(d, d, d, hidden=h, seed=int(rng.integers(0, 2**31)))
            dial, sents, words = hetero_message_pass(g, w)
            o_dial, o_sent, o_word = dense_oracle(counts, g.dial_feat, g.sent_feats, g.word_feats, w)
            np.testing.assert_allclose(dial, o_dial, atol=1e-5)
            np.testing.assert_allclose(sents, o_sent, atol=1e-5)
            np.testing.assert_allclose(words, o_word, atol=1e-5)

    def test_edge_storage_order_irrelevant(self):
        rng = rng_for(213)
        g = graph_for_counts(rng, (3, 2, 4), d=4)
        w = random_encoder_weights(4, 4, 4, hidden=6, seed=99)
        base = encode_dialogue(g, w)
        perm = rng_for(214)
        shuffled = Mghg(
            word_counts=g.word_counts,
            dial_feat=g.dial_feat,
            sent_feats=g.sent_feats,
            word_feats=g.word_feats,
            word_in_sent=tuple(g.word_in_sent[i] for i in perm.permutation(len(g.word_in_sent))),
            sent_in_dial=tuple(g.sent_in_dial[i] for i in perm.permutation(len(g.sent_in_dial))),
            word_adj=tuple(g.word_adj[i] for i in perm.permutation(len(g.word_adj))),
            sent_adj=tuple(g.sent_adj[i] for i in perm.permutation(len(g.sent_adj))),
        )
        np.testing.assert_array_equal(base, encode_dialogue(shuffled, w))

    def test_post_activation_flag(self):
        rng = rng_for(215)
        g = graph_for_counts(rng, (2, 2), d=4)
        w = random_encoder_weights(4, 4, 4, hidden=4, seed=3)
        linear = hetero_message_pass(g, w)[1]
        tanh = hetero_message_pass(g, w, post_activation="tanh")[1]
        np.testing.assert_allclose(tanh, np.tanh(linear.astype(np.float64)).astype(np.float32), atol=1e-6)

    def test_multi_layer_runs(self):
        rng = rng_for(216)
        g = graph_for_counts(rng, (2,), d=4)
        w = random_encoder_weights(4, 4, 4, hidden=4, seed=5)
        two = hetero_message_pass(g, w, layers=2)
        assert all(np.all(np.isfinite(part)) for part in two)


class TestFusers:
    def test_reversal_swaps_halves_exactly(self):
        # Tie the two directions' weights; reversing the input must swap the
        # pooled halves bit-for-bit.
        rng = rng_for(221)
        from dialstyle.synthetic import _direction

        shared = _direction(rng, 4, 6, 3, 0.4)
        fuser = Bidirectional(fwd=shared, bwd=shared)
        seq = rng.normal(size=(5, 6)).astype(np.float32)
        pooled = bilstm_pool(seq, fuser)
        pooled_rev = bilstm_pool(seq[::-1].copy(), fuser)
        np.testing.assert_array_equal(pooled_rev[:3], pooled[3:])
        np.testing.assert_array_equal(pooled_rev[3:], pooled[:3])

        steps = bilstm_steps(seq, fuser)
        steps_rev = bilstm_steps(seq[::-1].copy(), fuser)
        np.testing.assert_array_equal(steps_rev[:, :3], steps[::-1, 3:])
        np.testing.assert_array_equal(steps_rev[:, 3:], steps[::-1, :3])

    def test_zero_weights_zero_states(self):
        fuser = zero_bidirectional(4, 4, 2)
        seq = rng_for(222).normal(size=(3, 4)).astype(np.float32)
        np.testing.assert_array_equal(bilstm_pool(seq, fuser), np.zeros(4, dtype=np.float32))

    def test_final_state_pooling(self):
        rng = rng_for(223)
        from dialstyle.synthetic import _bidirectional

        fuser = _bidirectional(rng, 4, 4, 2, 0.3)
        seq = rng.normal(size=(4, 4)).astype(np.float32)
        steps = bilstm_steps(seq, fuser)
        final = bilstm_pool(seq, fuser, pooling="final")
        np.testing.assert_array_equal(final[:2], steps[-1, :2])
        np.testing.assert_array_equal(final[2:], steps[0, 2:])


class TestEncodeDialogue:
    def test_zero_weights_yield_fusion_bias(self):
        rng = rng_for(231)
        g = graph_for_counts(rng, (2, 1), d=4)
        w = zero_encoder_weights(4, 4, 4, hidden=4)
        bias = np.array([0.5, -1.0, 2.0, 0.25], dtype=np.float32)
        w = MghgEncoderWeights(
            proj_dial_w=w.proj_dial_w, proj_dial_b=w.proj_dial_b,
            proj_sent_w=w.proj_sent_w, proj_sent_b=w.proj_sent_b,
            proj_word_w=w.proj_word_w, proj_word_b=w.proj_word_b,
            relations=w.relations, sent_fuser=w.sent_fuser, word_fuser=w.word_fuser,
            fusion_w=w.fusion_w, fusion_b=bias,
        )
        np.testing.assert_array_equal(encode_dialogue(g, w), bias)

    def test_passthrough_weights_return_dialogue_feature(self):
        g = graph_for_counts(rng_for(232), (2, 2), d=6)
        w = passthrough_encoder_weights(6)
        np.testing.assert_array_equal(encode_dialogue(g, w), g.dial_feat)

    def test_two_sentence_straight_line_oracle(self):
        # End-to-end check against the dense oracle + direct numpy fusers.
        rng = rng_for(233)
        counts = (2, 1)
        d, h = 3, 4
        g = graph_for_counts(rng, counts, d=d)
        w = random_encoder_weights(d, d, d, hidden=h, seed=17)
        dial, sents, words = dense_oracle(counts, g.dial_feat, g.sent_feats, g.word_feats, w)
        s_agg = bilstm_pool(sents.astype(np.float32), w.sent_fuser)
        w_agg = bilstm_pool(words.astype(np.float32), w.word_fuser)
        stacked = np.concatenate([dial.astype(np.float32), s_agg, w_agg]).astype(np.float64)
        expected = (w.fusion_w.astype(np.float64) @ stacked + w.fusion_b.astype(np.float64)).astype(
            np.float32
        )
        np.testing.assert_allclose(encode_dialogue(g, w), expected, atol=1e-5)

    def test_lipschitz_sane(self):
        rng = rng_for(234)
        d, h = 4, 6
        base_feats = rng.normal(size=d).astype(np.float32)
        sent = rng.normal(size=(2, d)).astype(np.float32)
        word_groups = [rng.normal(size=(2, d)).astype(np.float32), rng.normal(size=(1, d)).astype(np.float32)]
        w = random_encoder_weights(d, d, d, hidden=h, seed=23)
        base = encode_dialogue(build_mghg(base_feats, sent, word_groups), w).astype(np.float64)
        eps = 1e-4
        perturbed_feats = base_feats.copy()
        perturbed_feats[0] += eps
        out = encode_dialogue(build_mghg(perturbed_feats, sent, word_groups), w).astype(np.float64)
        delta = float(np.max(np.abs(out - base)))
        assert np.all(np.isfinite(out))
        assert delta <= 1e3 * eps


class TestEncodeCurrentDialogue:
    def test_single_turn_inference_audio_is_zero(self, caplog):
        rng = rng_for(241)
        bundle = make_bundle("cd", [2], SMALL_DIMS, rng, last_audio_absent=True)
        w_t = random_encoder_weights(SMALL_DIMS.d_dt, SMALL_DIMS.d_st, SMALL_DIMS.d_wt, hidden=4, seed=1)
        w_a = random_encoder_weights(SMALL_DIMS.d_da, SMALL_DIMS.d_sa, SMALL_DIMS.d_wa, hidden=4, seed=2)
        with caplog.at_level("WARNING"):
            h_t, h_a = encode_current_dialogue(bundle, w_t, w_a)
        np.testing.assert_array_equal(h_a, np.zeros(4, dtype=np.float32))
        assert np.any(h_t != 0)
        assert any("zero vector" in r.message for r in caplog.records)

    def test_full_bundle_matches_per_track_encoding(self):
        rng = rng_for(242)
        bundle = make_bundle("cd", [1, 2], SMALL_DIMS, rng)
        w_t = random_encoder_weights(SMALL_DIMS.d_dt, SMALL_DIMS.d_st, SMALL_DIMS.d_wt, hidden=4, seed=3)
        w_a = random_encoder_weights(SMALL_DIMS.d_da, SMALL_DIMS.d_sa, SMALL_DIMS.d_wa, hidden=4, seed=4)
        h_t, h_a = encode_current_dialogue(bundle, w_t, w_a)
        g_t = build_mghg(bundle.d_text, bundle.s_text, bundle.w_text)
        g_a = build_mghg(bundle.d_audio, bundle.s_audio, bundle.w_audio)
        np.testing.assert_array_equal(h_t, encode_dialogue(g_t, w_t))
        np.testing.assert_array_equal(h_a, encode_dialogue(g_a, w_a))

    def test_shared_parameters_bit_identical(self):
        # Encoding the same track as a stored entry and as the current
        # dialogue goes through the same weights and code path.
        rng = rng_for(243)
        bundle = make_bundle("x", [2, 2], SMALL_DIMS, rng)
        w_t = random_encoder_weights(SMALL_DIMS.d_dt, SMALL_DIMS.d_st, SMALL_DIMS.d_wt, hidden=4, seed=5)
        w_a = random_encoder_weights(SMALL_DIMS.d_da, SMALL_DIMS.d_sa, SMALL_DIMS.d_wa, hidden=4, seed=6)
        as_sd = encode_dialogue(build_mghg(bundle.d_text, bundle.s_text, bundle.w_text), w_t)
        as_cd, _ = encode_current_dialogue(bundle, w_t, w_a)
        np.testing.assert_array_equal(as_sd, as_cd)

    def test_inference_bundle_uses_history_turns(self):
        rng = rng_for(244)
        bundle = make_bundle("cd", [1, 1, 2], SMALL_DIMS, rng, last_audio_absent=True)
        w_t = random_encoder_weights(SMALL_DIMS.d_dt, SMALL_DIMS.d_st, SMALL_DIMS.d_wt, hidden=4, seed=7)
        w_a = random_encoder_weights(SMALL_DIMS.d_da, SMALL_DIMS.d_sa, SMALL_DIMS.d_wa, hidden=4, seed=8)
        _, h_a = encode_current_dialogue(bundle, w_t, w_a)
        g_a = build_mghg(bundle.d_audio, bundle.s_audio, bundle.w_audio)
        np.testing.assert_array_equal(h_a, encode_dialogue(g_a, w_a))
        assert g_a.n_sent == 2


class TestEncoderWeightsIO:
    def test_round_trip(self, tmp_path):
        w = random_encoder_weights(5, 4, 3, hidden=4, seed=31)
        path = tmp_path / "enc.sdwt"
        write_weights_file(path, w.to_tensors("encoder.text."))
        loaded = MghgEncoderWeights.from_tensors(read_weights_file(path), "encoder.text.")
        g = graph_for_counts(rng_for(251), (2, 1), d=5)
        g2 = build_mghg(
            g.dial_feat,
            rng_for(252).normal(size=(2, 4)).astype(np.float32),
            [rng_for(253).normal(size=(q, 3)).astype(np.float32) for q in (2, 1)],
        )
        np.testing.assert_array_equal(encode_dialogue(g2, w), encode_dialogue(g2, loaded))

    def test_missing_tensor_reported(self, tmp_path):
        from dialstyle.errors import DimError

        w = random_encoder_weights(3, 3, 3, hidden=4, seed=32)
        tensors = w.to_tensors("encoder.text.")
        del tensors["encoder.text.fusion.w"]
        with pytest.raises(DimError, match="fusion.w"):
            MghgEncoderWeights.from_tensors(tensors, "encoder.text.")
