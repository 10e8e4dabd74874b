"""Sparse Markov chain: counting, smoothing, sizing, and bound plumbing."""

import math
from collections import defaultdict

import numpy as np
import pytest

from tokencert.corpus import TokenStream, synthetic_corpus
from tokencert.markov import (
    DEFAULT_ALPHA,
    HEADER_BITS,
    as_artifact,
    build_trace,
    markov_bound,
    size_bits,
    snap_alpha,
    stream_nll_bits,
    train,
)


def stream_of(docs, V):
    return TokenStream.from_documents([np.array(d) for d in docs], vocab_size=V)


def brute_force_counts(docs, k, V):
    """Independent sliding-window counter used as the oracle."""
    begin = V
    counts = defaultdict(lambda: defaultdict(int))
    for doc in docs:
        for i, token in enumerate(doc):
            window = doc[max(0, i - k):i]
            prefix = tuple([begin] * (k - len(window)) + list(window))
            counts[prefix][token] += 1
    return counts


class TestTraining:
    def test_unigram_counting(self):
        model = train(stream_of([[0, 0, 1]], V=2), k=0)
        assert model.counts == {(): {0: 2, 1: 1}}

    def test_boundary_respected(self):
        model = train(stream_of([[0, 1], [0, 1]], V=2), k=1)
        begin = model.begin_symbol
        assert model.counts[(0,)] == {1: 2}
        assert model.counts[(begin,)] == {0: 2}
        assert (1,) not in model.counts  # no b -> a across the boundary

    def test_matches_bruteforce_oracle_k2(self):
        rng = np.random.default_rng(10)
        docs = [rng.integers(0, 5, size=rng.integers(1, 40)).tolist() for _ in range(30)]
        model = train(stream_of(docs, V=5), k=2)
        oracle = brute_force_counts(docs, k=2, V=5)
        assert set(model.counts) == set(oracle)
        for prefix in oracle:
            assert model.counts[prefix] == dict(oracle[prefix])

    def test_counts_saturate_at_width(self):
        docs = [[0] * 300]
        model = train(stream_of(docs, V=2), k=0, count_width=8)
        assert model.counts[()][0] == 255

    def test_disjoint_documents_never_mix(self):
        docs = [[0, 1, 0, 1, 1], [2, 3, 3, 2, 2]]
        model = train(stream_of(docs, V=4), k=2)
        begin = model.begin_symbol
        for prefix in model.counts:
            real = [t for t in prefix if t != begin]
            assert not ({0, 1} & set(real) and {2, 3} & set(real))


class TestTokenProb:
    def test_unseen_prefix_uniform(self):
        model = train(stream_of([[0, 0, 0, 1]], V=5), k=1)
        # (3,) never occurred: exact uniform fallback.
        assert model.token_prob((3,), 2) == pytest.approx(1.0 / 5, rel=1e-15)
        # (0,) occurred with a skewed continuation: not uniform.
        assert model.token_prob((0,), 0) > 1.0 / 5

    def test_hand_value(self):
        model = train(stream_of([[0, 0, 1]], V=2), k=0, alpha=0.1)
        assert model.token_prob((), 0) == pytest.approx(0.9 * (2 / 3) + 0.05, rel=1e-12)

    def test_normalization_over_vocab(self):
        rng = np.random.default_rng(11)
        docs = [rng.integers(0, 7, size=50).tolist() for _ in range(5)]
        model = train(stream_of(docs, V=7), k=2)
        prefixes = list(model.counts)[:10] + [(6, 6), (0, 5)]
        for prefix in prefixes:
            total = sum(model.token_prob(prefix, t) for t in range(7))
            assert total == pytest.approx(1.0, rel=1e-12)

    def test_alpha_snaps_to_menu(self):
        idx, snapped = snap_alpha(0.1)
        assert idx == 204
        assert snapped == pytest.approx(0.1, rel=1e-12)
        assert DEFAULT_ALPHA == snapped


class TestNll:
    def test_matches_bruteforce_recount(self):
        rng = np.random.default_rng(12)
        docs = [rng.integers(0, 6, size=rng.integers(2, 60)).tolist() for _ in range(20)]
        stream = stream_of(docs, V=6)
        for k in (0, 1, 3):
            model = train(stream, k=k)
            oracle_counts = brute_force_counts(docs, k=k, V=6)
            oracle_totals = {p: sum(b.values()) for p, b in oracle_counts.items()}
            nll = 0.0
            begin = model.begin_symbol
            for doc in docs:
                for i, token in enumerate(doc):
                    window = doc[max(0, i - k):i]
                    prefix = tuple([begin] * (k - len(window)) + list(window))
                    p_counts = oracle_counts[prefix][token] / oracle_totals[prefix]
                    nll += -math.log2((1 - model.alpha) * p_counts + model.alpha / 6)
            assert stream_nll_bits(model, stream) == pytest.approx(nll, rel=1e-12)


class TestSizeBits:
    def test_empty_model_header_only(self):
        model = train(stream_of([[0]], V=2), k=0)
        model.counts.clear()
        assert size_bits(model) == HEADER_BITS

    def test_single_small_entry(self):
        model = train(stream_of([[5]], V=128), k=0)
        assert size_bits(model) == HEADER_BITS + 8 + 16

    def test_large_token_ids_need_more_key_bytes(self):
        small = train(stream_of([[100]], V=50000), k=0)      # 1 varint byte
        large = train(stream_of([[40000]], V=50000), k=0)    # 3 varint bytes
        assert size_bits(large) == size_bits(small) + 16

    def test_doubling_entries_doubles_payload(self):
        one = train(stream_of([[0, 1]], V=128), k=0)
        two = train(stream_of([[0, 1, 2, 3]], V=128), k=0)
        assert size_bits(two) - HEADER_BITS == 2 * (size_bits(one) - HEADER_BITS)

    def test_artifact_total_matches_size_bits(self):
        rng = np.random.default_rng(13)
        docs = [rng.integers(0, 200, size=80).tolist() for _ in range(8)]
        model = train(stream_of(docs, V=200), k=1)
        art = as_artifact(model)
        assert art.total_bits == size_bits(model)
        assert art.payload_bits == 8 * len(art.payload)


class TestMarkovBound:
    def test_periodic_stream_nonvacuous(self):
        stream = stream_of([[0, 1] * 600], V=4)
        res = markov_bound(stream, k=1, delta=0.05, n_subsample=400, seed=1)
        # All mid-stream predictions are certain, so the empirical term
        # approaches the smoothed-NLL floor.
        floor = -math.log2(0.9 + 0.1 / 4)
        assert res.empirical_term == pytest.approx(floor, abs=0.02)
        assert res.non_vacuous
        assert res.bound < math.log2(4)

    def test_order_sweep_penalizes_large_k(self):
        stream = synthetic_corpus(60_000, vocab_size=64, seed=3)
        bounds = {
            k: markov_bound(stream, k, delta=0.05, n_subsample=2000, seed=2).bound
            for k in (0, 1, 4)
        }
        assert bounds[4] > min(bounds.values())
        assert bounds[4] > bounds[0]
        assert bounds[4] > bounds[1]

    def test_trace_positions_follow_shared_scheme(self):
        stream = stream_of([[0, 1, 2, 3] * 50], V=4)
        model = train(stream, k=1)
        trace = build_trace(model, stream, n_subsample=20, seed=7)
        assert trace.n == 20
        assert trace.m == 200
        assert trace.header.subsample_seed == 7
