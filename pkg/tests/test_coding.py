"""Quantizer, arithmetic coder, and size-accounting tests."""

import hashlib
import math
import subprocess
import sys
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokencert.coding import (
    DEFLATE_LEVEL,
    CompressedArtifact,
    FrequencyTable,
    HeaderField,
    arith_decode,
    arith_encode,
    compress_weights,
    decompress_weights,
    deflate_artifact,
    deflate_size,
    quantize_uniform,
    read_artifact,
    total_compressed_bits,
    write_artifact,
)
from tokencert.errors import DecodeError

# Pinned once from zlib.compress(b"", 9): the container overhead floor.
EMPTY_DEFLATE_BITS = 64


class TestQuantizeUniform:
    def test_constant_vector_single_level(self):
        symbols, codebook = quantize_uniform(np.full(17, 3.25), 8)
        assert np.all(symbols == 0)
        assert codebook.tolist() == [3.25]

    def test_exact_two_level(self):
        symbols, codebook = quantize_uniform([0.0, 1.0, 0.0], 2)
        assert symbols.tolist() == [0, 1, 0]
        assert codebook.tolist() == [0.0, 1.0]

    def test_error_within_half_step(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=4096)
        symbols, codebook = quantize_uniform(w, 16)
        err = np.abs(w - codebook[symbols])
        assert err.max() <= (w.max() - w.min()) / (2 * 15) + 1e-15

    def test_nearest_level_beats_any_other(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-2, 5, size=512)
        symbols, codebook = quantize_uniform(w, 9)
        brute = np.argmin(np.abs(w[:, None] - codebook[None, :]), axis=1)
        assert np.all(np.abs(w - codebook[symbols]) <= np.abs(w - codebook[brute]) + 1e-15)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            quantize_uniform([0.0, np.nan], 4)
        with pytest.raises(ValueError):
            quantize_uniform([np.inf, 1.0], 4)


class TestArithmeticCoder:
    def test_zero_entropy_stream(self):
        freq = FrequencyTable([1])
        payload, nbits = arith_encode([0] * 5000, freq)
        assert nbits <= 64
        assert np.all(arith_decode(payload, freq, 5000) == 0)

    def test_uniform_sixteen_length_bound(self):
        rng = np.random.default_rng(2)
        symbols = rng.integers(0, 16, size=100_000)
        freq = FrequencyTable([1] * 16)  # exact uniform model: 4 bits/symbol
        payload, nbits = arith_encode(symbols, freq)
        assert 400_000 <= nbits <= 400_000 + 64
        assert np.array_equal(arith_decode(payload, freq, symbols.size), symbols)

    def test_roundtrip_thousand_random_streams(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            alphabet = int(rng.integers(1, 40))
            length = int(rng.integers(0, 300))
            counts = rng.integers(1, 50, size=alphabet)
            freq = FrequencyTable(counts)
            symbols = rng.integers(0, alphabet, size=length)
            payload, nbits = arith_encode(symbols, freq)
            cross_entropy = -sum(
                math.log2(freq.counts[s] / freq.total) for s in symbols
            )
            assert nbits <= cross_entropy + 64
            assert np.array_equal(arith_decode(payload, freq, length), symbols)

    def test_skewed_model_compresses(self):
        freq = FrequencyTable([960, 20, 20])
        symbols = [0] * 960 + [1] * 20 + [2] * 20
        _, nbits = arith_encode(symbols, freq)
        entropy = -sum(c * math.log2(c / 1000) for c in freq.counts)
        assert nbits <= entropy + 64
        assert nbits < 1000  # far below the 1585-bit flat encoding

    def test_symbol_outside_alphabet_rejected(self):
        freq = FrequencyTable([3, 3])
        with pytest.raises(ValueError):
            arith_encode([0, 2], freq)

    def test_truncated_payload_detected(self):
        rng = np.random.default_rng(4)
        freq = FrequencyTable([1] * 8)
        symbols = rng.integers(0, 8, size=2000)
        payload, _ = arith_encode(symbols, freq)
        with pytest.raises(DecodeError):
            arith_decode(payload[: len(payload) // 2], freq, 2000)

    def test_deterministic_across_runs_and_processes(self):
        rng = np.random.default_rng(5)
        symbols = rng.integers(0, 11, size=4096).tolist()
        freq_counts = rng.integers(1, 9, size=11).tolist()
        one, _ = arith_encode(symbols, FrequencyTable(freq_counts))
        two, _ = arith_encode(symbols, FrequencyTable(freq_counts))
        assert one == two
        script = (
            "import sys, json, hashlib\n"
            "from tokencert.coding import arith_encode, FrequencyTable\n"
            "symbols, counts = json.load(sys.stdin)\n"
            "payload, _ = arith_encode(symbols, FrequencyTable(counts))\n"
            "print(hashlib.sha256(payload).hexdigest())\n"
        )
        import json

        out = subprocess.run(
            [sys.executable, "-c", script],
            input=json.dumps([symbols, freq_counts]),
            capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == hashlib.sha256(one).hexdigest()

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, data):
        alphabet = data.draw(st.integers(min_value=1, max_value=20))
        counts = data.draw(
            st.lists(st.integers(min_value=1, max_value=1000),
                     min_size=alphabet, max_size=alphabet)
        )
        symbols = data.draw(
            st.lists(st.integers(min_value=0, max_value=alphabet - 1), max_size=200)
        )
        freq = FrequencyTable(counts)
        payload, _ = arith_encode(symbols, freq)
        assert list(arith_decode(payload, freq, len(symbols))) == symbols


class TestDeflate:
    def test_empty_buffer_overhead_pinned(self):
        assert deflate_size(b"") == EMPTY_DEFLATE_BITS

    def test_zero_megabyte_ratio(self):
        data = bytes(1 << 20)
        assert deflate_size(data) < 0.005 * 8 * len(data)

    def test_incompressible_random_bytes(self):
        rng = np.random.default_rng(6)
        data = rng.integers(0, 256, size=1 << 16, dtype=np.uint8).tobytes()
        assert deflate_size(data) >= 0.99 * 8 * len(data)

    def test_matches_zlib_at_pinned_level(self):
        data = b"abc" * 1000
        assert deflate_size(data) == 8 * len(zlib.compress(data, DEFLATE_LEVEL))


class TestArtifacts:
    def test_total_is_payload_plus_header(self):
        art = compress_weights(np.linspace(-1, 1, 256), 16)
        assert art.total_bits == art.payload_bits + art.header_bits
        assert total_compressed_bits(art) == art.total_bits

    def test_extra_field_adds_exact_width(self):
        art = compress_weights(np.linspace(-1, 1, 64), 4)
        base = total_compressed_bits(art)
        assert total_compressed_bits(art, [HeaderField("seed", 7, 32)]) == base + 32

    def test_no_hyperparams_is_payload_plus_base_header(self):
        art = CompressedArtifact(scheme="raw", payload=b"\x01\x02", payload_bits=16,
                                 symbol_count=2)
        assert total_compressed_bits(art) == 16

    def test_weights_roundtrip_within_half_step(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=1000)
        art = compress_weights(w, 32)
        back = decompress_weights(art)
        assert np.abs(w - back).max() <= (w.max() - w.min()) / (2 * 31) + 1e-15

    def test_constant_weights_roundtrip(self):
        w = np.full(40, -2.5)
        art = compress_weights(w, 8)
        assert np.array_equal(decompress_weights(art), w)

    def test_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        art = compress_weights(rng.normal(size=500), 16,
                               fields=(HeaderField("seed", 99, 32),))
        path = tmp_path / "model.tcar"
        write_artifact(art, path)
        back = read_artifact(path)
        assert back == art
        assert np.allclose(decompress_weights(back), decompress_weights(art))

    def test_deflate_artifact_consistent_with_size(self):
        data = b"hello world" * 100
        art = deflate_artifact(data)
        assert art.payload_bits == deflate_size(data)
        assert art.scheme == "deflate"
