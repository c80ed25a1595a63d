"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every tolerance is pinned here; nothing is deferred to calibration.
"""

import json
import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from dialstyle.formats import (
    read_bundle_file,
    read_store_file,
    read_vector_file,
    read_weights_file,
    write_bundle_file,
    write_store_file,
    write_vector_file,
    write_weights_file,
)
from dialstyle.errors import FormatError
from dialstyle.kernel import cosine
from dialstyle.mghg import build_mghg, encode_dialogue, hetero_message_pass
from dialstyle.recurrent import bilstm_pool
from dialstyle.retrieval import (
    AnPredictorWeights,
    RetrievalConfig,
    Scheme,
    SequenceEncoderWeights,
    predict_an_style,
    recall_at,
    retrieve,
)
from dialstyle.styleagg import AggregationInput, ContrastiveConfig, aggregate, contrastive_loss, z_sweep
from dialstyle.synthetic import random_encoder_weights
from dialstyle.types import BundleDims

from conftest import (
    make_bundle,
    random_store,
    rng_for,
    shared_direction_scenario,
    zero_bidirectional,
    zero_encoder_weights,
)
from test_mghg import dense_oracle, graph_for_counts
from test_retrieval import oracle_retrieve, zero_predictor
from test_styleagg import oracle_contrastive


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}")
        raise
    print(f"[PASS] criterion {number}: {description}")


def test_c01_retrieval_oracle_equivalence():
    with criterion(1, "schemes rs1-rs6 match the brute-force oracle on 50 stores (exact)"):
        start = time.monotonic()
        for trial in range(50):
            rng = rng_for(1000 + trial)
            store = random_store(rng, 200 + int(rng.integers(0, 40)))
            q_sem = rng.normal(size=8).astype(np.float32)
            q_sty = rng.normal(size=8).astype(np.float32)
            k = int(rng.integers(1, 20))
            for scheme in ("rs1", "rs2", "rs3", "rs4", "rs5", "rs6"):
                cfg = RetrievalConfig(scheme=Scheme.parse(scheme), k=k, seed=trial)
                got = [h.entry_id for h in retrieve(store, q_sem, q_sty, cfg)]
                want = oracle_retrieve(store, q_sem, q_sty, scheme, k, seed=trial)
                assert got == want, (trial, scheme)
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s"


def test_c02_scheme_degeneracy_identities():
    # With the stage-1 pool spanning the whole store only the second-stage
    # key remains, so each two-stage scheme collapses to the single-attribute
    # scheme of its final stage (see the decisions ledger on the labeling).
    with criterion(2, "full-pool two-stage schemes collapse to their final-stage scheme (exact)"):
        for trial in range(20):
            rng = rng_for(2000 + trial)
            store = random_store(rng, 40 + int(rng.integers(0, 40)))
            q_sem = rng.normal(size=8).astype(np.float32)
            q_sty = rng.normal(size=8).astype(np.float32)
            k = int(rng.integers(1, 10))
            full = len(store)
            ids = lambda scheme, **kw: [
                h.entry_id
                for h in retrieve(store, q_sem, q_sty, RetrievalConfig(scheme=scheme, k=k, **kw))
            ]
            assert ids(Scheme.RS2, stage1_pool=full) == ids(Scheme.RS5)
            assert ids(Scheme.RS3, stage1_pool=full) == ids(Scheme.RS4)


def test_c03_recall_harness():
    with criterion(3, "hit-mode recall fixture (1/3, 2/3, 2/3) and monotonicity on 1000 cases"):
        results = {
            "q1": ["a", "x", "y"],
            "q2": ["x", "y", "b"],
            "q3": ["x", "y", "z"],
        }
        gt = {"q1": ["a"], "q2": ["b"], "q3": ["c"]}
        values = recall_at(results, gt, [1, 3, 10], mode="hit")
        assert abs(values[1] - 1 / 3) < 1e-12
        assert abs(values[3] - 2 / 3) < 1e-12
        assert abs(values[10] - 2 / 3) < 1e-12

        rng = rng_for(3000)
        universe = [f"i{j}" for j in range(40)]
        for _ in range(1000):
            retrieved = list(rng.permutation(universe)[: rng.integers(1, 25)])
            gt_list = list(rng.permutation(universe)[: rng.integers(1, 6)])
            vals = recall_at({"q": retrieved}, {"q": gt_list}, list(range(1, 26)), mode="hit")
            series = [vals[k] for k in range(1, 26)]
            assert all(a <= b for a, b in zip(series, series[1:]))


def test_c04_message_passing_dense_oracle():
    with criterion(4, "message passing equals the dense-adjacency oracle (1000 graphs, 1e-5)"):
        start = time.monotonic()
        rng = rng_for(4000)
        for _ in range(1000):
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
            assert np.max(np.abs(dial - o_dial)) <= 1e-5
            assert np.max(np.abs(sents - o_sent)) <= 1e-5
            assert np.max(np.abs(words - o_word)) <= 1e-5
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"criterion 4 took {elapsed:.1f}s"


def test_c05_graph_structure_counts():
    with criterion(5, "graph node/edge counts match closed forms on 10000 fuzzed shapes (exact)"):
        rng = rng_for(5000)
        for _ in range(10000):
            n = int(rng.integers(1, 7))
            counts = [int(q) for q in rng.integers(1, 6, size=n)]
            g = build_mghg(
                rng.normal(size=1).astype(np.float32),
                rng.normal(size=(n, 1)).astype(np.float32),
                [rng.normal(size=(q, 1)).astype(np.float32) for q in counts],
            )
            assert g.n_word == sum(counts)
            assert len(g.word_in_sent) == sum(counts)
            assert len(g.sent_in_dial) == n
            assert len(g.word_adj) == sum(q - 1 for q in counts)
            assert len(g.sent_adj) == n - 1


def test_c06_aggregation_checks():
    with criterion(6, "aggregation: weight simplex, k=1 bit-exactness, permutation, loop oracle"):
        rng = rng_for(6000)
        for _ in range(1000):
            k = int(rng.integers(1, 9))
            d = int(rng.integers(2, 10))
            inp = AggregationInput(
                h_pt=rng.normal(size=(k, d)).astype(np.float32),
                h_pa=rng.normal(size=(k, d)).astype(np.float32),
                h_t_cur=rng.normal(size=d).astype(np.float32),
                h_a_cur=rng.normal(size=d).astype(np.float32),
                v_an=rng.normal(size=d).astype(np.float32),
                v_an_proj=rng.normal(size=d).astype(np.float32),
            )
            w, rs_emb, _ = aggregate(inp)
            assert abs(float(np.sum(w, dtype=np.float64)) - 1.0) <= 1e-6
            assert np.all(w > 0) and np.all(w <= 1.0)

            if k == 1:
                assert w[0] == 1.0
                np.testing.assert_array_equal(rs_emb, inp.h_pa[0])

            logits = [
                sum(float(a) * float(b) for a, b in zip(inp.h_pt[i], inp.h_t_cur)) for i in range(k)
            ]
            m = max(logits)
            exps = [math.exp(x - m) for x in logits]
            total = sum(exps)
            rs_oracle = [
                sum(exps[i] / total * float(inp.h_pa[i, j]) for i in range(k)) for j in range(d)
            ]
            assert np.max(np.abs(rs_emb.astype(np.float64) - rs_oracle)) <= 1e-6

            perm = rng.permutation(k)
            permuted = AggregationInput(
                h_pt=inp.h_pt[perm], h_pa=inp.h_pa[perm], h_t_cur=inp.h_t_cur,
                h_a_cur=inp.h_a_cur, v_an=inp.v_an, v_an_proj=inp.v_an_proj,
            )
            _, rs_perm, _ = aggregate(permuted)
            assert np.max(np.abs(rs_perm.astype(np.float64) - rs_emb.astype(np.float64))) <= 1e-6


def test_c07_contrastive_loss():
    with criterion(7, "contrastive loss: hand value, enumeration oracle (1000 draws), scale invariance"):
        anchor = np.array([1.0, 0.0], dtype=np.float32)
        cfg = ContrastiveConfig(
            positives=np.stack([anchor, anchor]),
            negatives=np.array([[0.0, 1.0]], dtype=np.float32),
            tau=1.0,
        )
        assert abs(contrastive_loss(anchor, cfg) - math.log(1.0 + math.exp(-1.0))) <= 1e-6

        rng = rng_for(7000)
        for _ in range(1000):
            k = int(rng.integers(1, 7))
            m = int(rng.integers(1, 7))
            d = int(rng.integers(2, 8))
            positives = rng.normal(size=(k, d)).astype(np.float32)
            negatives = rng.normal(size=(m, d)).astype(np.float32)
            tau = float(rng.uniform(0.05, 2.0))
            anchor = rng.normal(size=d).astype(np.float32)
            got = contrastive_loss(
                anchor,
                ContrastiveConfig(positives=positives, negatives=negatives, tau=tau, exclude_self=False),
            )
            assert abs(got - oracle_contrastive(anchor, positives, negatives, tau)) <= 1e-6

        rng = rng_for(7001)
        for _ in range(100):
            positives = rng.normal(size=(3, 5)).astype(np.float32)
            negatives = rng.normal(size=(2, 5)).astype(np.float32)
            anchor = rng.normal(size=5).astype(np.float32)
            base = contrastive_loss(
                anchor,
                ContrastiveConfig(positives=positives, negatives=negatives, tau=0.3, exclude_self=False),
            )
            scaled = contrastive_loss(
                (anchor.astype(np.float64) * 11.0).astype(np.float32),
                ContrastiveConfig(
                    positives=(positives.astype(np.float64) * 0.25).astype(np.float32),
                    negatives=(negatives.astype(np.float64) * 3.0).astype(np.float32),
                    tau=0.3,
                    exclude_self=False,
                ),
            )
            assert abs(base - scaled) <= 1e-5


def test_c08_recurrent_oracles():
    with criterion(8, "predictor/fuser scalar recurrence oracles (1e-6); zero weights give bias-only"):
        # Scalar predictor oracle (duplicated in miniature from the unit
        # suite so the acceptance run is self-contained).
        from test_retrieval import TestPredictor

        TestPredictor().test_matches_scalar_recurrence_oracle()

        # Scalar LSTM fuser oracle.
        rng = rng_for(8000)
        from dialstyle.recurrent import Bidirectional, RecurrentDirection

        def u(*shape):
            return rng.uniform(-0.7, 0.7, size=shape).astype(np.float32)

        fuser = Bidirectional(
            fwd=RecurrentDirection(w_ih=u(4, 1), w_hh=u(4, 1), b_ih=u(4), b_hh=u(4)),
            bwd=RecurrentDirection(w_ih=u(4, 1), w_hh=u(4, 1), b_ih=u(4), b_hh=u(4)),
        )
        seq = u(3, 1)

        def sig(x):
            return 1.0 / (1.0 + math.exp(-x))

        def lstm_scalar(values, d):
            w_i, w_f, w_g, w_o = (float(d.w_ih[j, 0]) for j in range(4))
            r_i, r_f, r_g, r_o = (float(d.w_hh[j, 0]) for j in range(4))
            bi = [float(b) for b in d.b_ih]
            bh = [float(b) for b in d.b_hh]
            h = c = 0.0
            states = []
            for x in values:
                i = sig(w_i * x + bi[0] + r_i * h + bh[0])
                f = sig(w_f * x + bi[1] + r_f * h + bh[1])
                g = math.tanh(w_g * x + bi[2] + r_g * h + bh[2])
                o = sig(w_o * x + bi[3] + r_o * h + bh[3])
                c = f * c + i * g
                h = o * math.tanh(c)
                states.append(h)
            return states

        fwd = lstm_scalar([float(v) for v in seq[:, 0]], fuser.fwd)
        bwd = lstm_scalar([float(v) for v in seq[::-1, 0]], fuser.bwd)
        expected = [sum(fwd) / len(fwd), sum(bwd) / len(bwd)]
        got = bilstm_pool(seq, fuser)
        assert np.max(np.abs(got.astype(np.float64) - expected)) <= 1e-6

        # Zero weights: predictor emits its combiner bias, encoder its fusion bias.
        bias = np.array([1.5, -0.5, 0.125], dtype=np.float32)
        w = zero_predictor(2, 3, combine_bias=bias)
        out = predict_an_style(
            rng.normal(size=(2, 2)).astype(np.float32), rng.normal(size=(1, 3)).astype(np.float32), w
        )
        np.testing.assert_array_equal(out, bias)

        enc = zero_encoder_weights(2, 2, 2, hidden=4)
        from dialstyle.mghg import MghgEncoderWeights

        fusion_bias = np.array([2.0, -1.0, 0.5, 0.25], dtype=np.float32)
        enc = MghgEncoderWeights(
            proj_dial_w=enc.proj_dial_w, proj_dial_b=enc.proj_dial_b,
            proj_sent_w=enc.proj_sent_w, proj_sent_b=enc.proj_sent_b,
            proj_word_w=enc.proj_word_w, proj_word_b=enc.proj_word_b,
            relations=enc.relations, sent_fuser=enc.sent_fuser, word_fuser=enc.word_fuser,
            fusion_w=enc.fusion_w, fusion_b=fusion_bias,
        )
        g = graph_for_counts(rng_for(8001), (2, 1), d=2)
        np.testing.assert_array_equal(encode_dialogue(g, enc), fusion_bias)


def test_c09_z_sweep_shape():
    with criterion(9, "z-sweep peaks at z=10 on the shared-direction store (exact ordering)"):
        store, bundles, cd_bundle, speakers, table, weights, gt = shared_direction_scenario(
            n_shared=10, n_other=40
        )
        rows = dict(z_sweep(store, bundles, cd_bundle, speakers, table, weights, [1, 10, 50], gt))
        assert rows[10] > rows[1]
        assert rows[10] > rows[50]


def test_c10_format_round_trips(tmp_path):
    with criterion(10, "10000 fuzzed payload round trips bit-exact; corrupt headers rejected"):
        rng = rng_for(10000)
        payloads = 0

        # SDEB: 10 files x 1000 tiny bundles.
        dims = BundleDims(d_sem=2, d_sty=2, d_dt=2, d_st=2, d_wt=1, d_da=2, d_sa=2, d_wa=1)
        for f in range(10):
            bundles = []
            for i in range(1000):
                n = int(rng.integers(1, 4))
                counts = [int(q) for q in rng.integers(1, 3, size=n)]
                absent = n > 1 and bool(rng.integers(0, 2))
                bundles.append(
                    make_bundle(f"b{f}_{i}", counts, dims, rng, last_audio_absent=absent)
                )
            path = tmp_path / f"fuzz{f}.sdeb"
            write_bundle_file(path, bundles, dims)
            _, loaded = read_bundle_file(path)
            for a, b in zip(bundles, loaded):
                np.testing.assert_array_equal(a.d_text, b.d_text)
                np.testing.assert_array_equal(a.s_text, b.s_text)
                np.testing.assert_array_equal(a.d_audio, b.d_audio)
                np.testing.assert_array_equal(a.s_audio, b.s_audio)
                for x, y in zip(a.w_text + a.w_audio, b.w_text + b.w_audio):
                    np.testing.assert_array_equal(x, y)
                payloads += 1

        # SDWT: 10 files x 200 tensors.
        for f in range(10):
            tensors = {
                f"t{i}": rng.normal(size=tuple(rng.integers(1, 4, size=rng.integers(1, 4)))).astype(np.float32)
                for i in range(200)
            }
            path = tmp_path / f"fuzz{f}.sdwt"
            write_weights_file(path, tensors)
            loaded = read_weights_file(path)
            for name, t in tensors.items():
                np.testing.assert_array_equal(loaded[name], t)
                payloads += 1

        # SDSS: 5 files x 200 entries.
        sdims = BundleDims(d_sem=3, d_sty=2)
        for f in range(5):
            ids = [f"e{f}_{i}" for i in range(200)]
            sem = rng.normal(size=(200, 3)).astype(np.float32)
            sty = rng.normal(size=(200, 2)).astype(np.float32)
            path = tmp_path / f"fuzz{f}.sdss"
            write_store_file(path, sdims, ids, sem, sty)
            _, ids2, sem2, sty2 = read_store_file(path)
            assert ids2 == ids
            np.testing.assert_array_equal(sem2, sem)
            np.testing.assert_array_equal(sty2, sty)
            payloads += 200

        # SDFV: 1000 vectors.
        path = tmp_path / "fuzz.sdfv"
        for i in range(1000):
            vec = rng.normal(size=int(rng.integers(1, 40))).astype(np.float32)
            write_vector_file(path, vec)
            np.testing.assert_array_equal(read_vector_file(path), vec)
            payloads += 1

        assert payloads >= 10000

        # Corrupt headers: wrong magic and wrong version per format.
        writers = {
            "sdeb": lambda p: write_bundle_file(p, [make_bundle("x", [1], dims, rng)], dims),
            "sdwt": lambda p: write_weights_file(p, {"x": np.zeros(2, dtype=np.float32)}),
            "sdfv": lambda p: write_vector_file(p, np.zeros(2, dtype=np.float32)),
            "sdss": lambda p: write_store_file(
                p, sdims, ["e"], np.zeros((1, 3), dtype=np.float32), np.zeros((1, 2), dtype=np.float32)
            ),
        }
        readers = {
            "sdeb": read_bundle_file,
            "sdwt": read_weights_file,
            "sdfv": read_vector_file,
            "sdss": read_store_file,
        }
        for kind in writers:
            path = tmp_path / f"corrupt.{kind}"
            writers[kind](path)
            data = bytearray(path.read_bytes())
            data[:4] = b"XXXX"
            path.write_bytes(bytes(data))
            with pytest.raises(FormatError):
                readers[kind](path)
            writers[kind](path)
            data = bytearray(path.read_bytes())
            data[4:8] = (99).to_bytes(4, "little")
            path.write_bytes(bytes(data))
            with pytest.raises(FormatError):
                readers[kind](path)


def _run_cli(args, cwd, threads: str):
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        env[var] = threads
    proc = subprocess.run(
        [sys.executable, "-m", "dialstyle.cli", *args],
        cwd=cwd, env=env, capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_c11_cli_determinism(tmp_path):
    with criterion(11, "CLI outputs byte-identical across runs and thread counts"):
        captures = []
        for run_idx, threads in ((0, "1"), (1, "1"), (2, "4")):
            work = tmp_path / f"run{run_idx}"
            work.mkdir()
            outputs = []
            outputs.append(_run_cli(
                ["gen-synthetic", "--out", "corpus", "--entries", "15", "--queries", "1",
                 "--seed", "9"], work, threads))
            outputs.append(_run_cli(
                ["build-db", "--bundles", "corpus/bundles.sdeb", "--meta", "corpus/meta.json",
                 "--speakers", "corpus/speakers.sdwt", "--out", "db"], work, threads))
            outputs.append(_run_cli(
                ["gen-weights", "--out", "weights.sdwt", "--hidden", "16",
                 "--predictor-hidden", "8", "--seed", "2"], work, threads))
            outputs.append(_run_cli(
                ["query", "--db", "db", "--cd", "corpus/query000.sdeb",
                 "--cd-meta", "corpus/query000.meta.json", "--k", "5"], work, threads))
            outputs.append(_run_cli(
                ["encode", "--bundle", "corpus/query000.sdeb", "--weights", "weights.sdwt",
                 "--track", "text", "--out", "enc.sdfv"], work, threads))
            outputs.append(_run_cli(
                ["z-sweep", "--db", "db", "--cd", "corpus/query000.sdeb",
                 "--cd-meta", "corpus/query000.meta.json", "--bundles", "corpus/bundles.sdeb",
                 "--weights", "weights.sdwt", "--gt-style", "enc.sdfv", "--z", "1..5"],
                work, threads))
            file_bytes = {
                name: (work / name).read_bytes()
                for name in ("corpus/bundles.sdeb", "db/store.sdss", "weights.sdwt", "enc.sdfv")
            }
            captures.append((outputs, file_bytes))

        base_out, base_files = captures[0]
        for outputs, file_bytes in captures[1:]:
            assert outputs == base_out
            assert file_bytes == base_files
