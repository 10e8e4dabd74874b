"""Compressed-size accounting: quantization, arithmetic coding, DEFLATE.

The complexity term of a certified bound is the bit length of a prefix-free
code for the hypothesis. This module produces those bit counts two ways:

* ``arithmetic`` scheme: uniform post-training quantization of a parameter
  vector followed by a static-model arithmetic coder. The symbol frequency
  table is learned from the stream itself (two passes) and charged to the
  header at 16 bits per alphabet symbol; the codebook is charged as its
  (min, max) range at 64 bits each, the level count being a header field.
* ``deflate`` scheme: byte buffers (externally quantized checkpoints) are
  sized by zlib/DEFLATE at the pinned setting ``level=9``.

The coder itself is a 64-bit integer arithmetic coder; range narrowing and
renormalization use integer arithmetic only, with straddle states resolved
by deferred carry bits, so output is bit-identical across platforms.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError

STATE_SIZE = 64
_MAX_RANGE = 1 << STATE_SIZE
_MASK = _MAX_RANGE - 1
_TOP = _MAX_RANGE >> 1
_SECOND = _MAX_RANGE >> 2
_MIN_RANGE = (_MAX_RANGE >> 2) + 2
MAX_TOTAL = 1 << 32  # frequency totals stay far below _MIN_RANGE

DEFLATE_LEVEL = 9  # pinned; recorded in artifact headers

ARTIFACT_MAGIC = b"TCAR"
ARTIFACT_VERSION = 1
_SCHEME_TAGS = {"arithmetic": 1, "deflate": 2, "raw": 3}
_SCHEME_NAMES = {v: k for k, v in _SCHEME_TAGS.items()}
FREQ_HEADER_BITS_PER_SYMBOL = 16
CODEBOOK_RANGE_BITS = 128  # min and max level as two f64


class FrequencyTable:
    """Static symbol frequencies shared by encoder and decoder."""

    def __init__(self, counts):
        counts = [int(c) for c in counts]
        if not counts:
            raise ValueError("frequency table needs at least one symbol")
        if any(c <= 0 for c in counts):
            raise ValueError("every alphabet symbol needs positive mass")
        total = sum(counts)
        if total > MAX_TOTAL:
            raise ValueError(f"frequency total {total} exceeds {MAX_TOTAL}")
        self.counts = counts
        self.cumulative = [0]
        for c in counts:
            self.cumulative.append(self.cumulative[-1] + c)
        self.total = total

    def __len__(self) -> int:
        return len(self.counts)

    @classmethod
    def from_symbols(cls, symbols, alphabet_size: int) -> "FrequencyTable":
        """Two-pass table: count the stream, rescale into 16-bit entries.

        Every symbol keeps mass >= 1 so any stream over the alphabet stays
        decodable; the 16-bit entries are what the artifact header stores.
        """
        counts = np.bincount(np.asarray(symbols, dtype=np.int64), minlength=alphabet_size)
        if len(counts) > alphabet_size:
            raise ValueError("symbol outside alphabet")
        total = int(counts.sum())
        if total == 0:
            return cls([1] * alphabet_size)
        limit = (1 << 16) - 1
        scaled = [
            min(limit, max(1, int(c) * limit // total)) if c > 0 else 1 for c in counts
        ]
        return cls(scaled)


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0
        self.total_bits = 0

    def write(self, bit: int) -> None:
        self.acc = (self.acc << 1) | bit
        self.nbits += 1
        self.total_bits += 1
        if self.nbits == 8:
            self.buf.append(self.acc)
            self.acc = 0
            self.nbits = 0

    def getvalue(self) -> bytes:
        if self.nbits:
            return bytes(self.buf) + bytes([self.acc << (8 - self.nbits)])
        return bytes(self.buf)


class _BitReader:
    """Reads bits; zero-pads past the end up to a budget, then errors."""

    def __init__(self, data: bytes, phantom_budget: int):
        self.data = data
        self.pos = 0
        self.phantom = 0
        self.phantom_budget = phantom_budget

    def read(self) -> int:
        byte_idx, bit_idx = divmod(self.pos, 8)
        if byte_idx >= len(self.data):
            self.phantom += 1
            if self.phantom > self.phantom_budget:
                raise DecodeError("bitstream exhausted: truncated payload")
            self.pos += 1
            return 0
        self.pos += 1
        return (self.data[byte_idx] >> (7 - bit_idx)) & 1


class ArithmeticEncoder:
    def __init__(self, freq: FrequencyTable):
        self.freq = freq
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.out = _BitWriter()

    def _emit(self, bit: int) -> None:
        self.out.write(bit)
        inverse = bit ^ 1
        while self.pending:
            self.out.write(inverse)
            self.pending -= 1

    def encode(self, symbol: int) -> None:
        if not 0 <= symbol < len(self.freq):
            raise ValueError(f"symbol {symbol} outside alphabet of {len(self.freq)}")
        total = self.freq.total
        span = self.high - self.low + 1
        cum_lo = self.freq.cumulative[symbol]
        cum_hi = self.freq.cumulative[symbol + 1]
        self.high = self.low + cum_hi * span // total - 1
        self.low = self.low + cum_lo * span // total
        while True:
            if self.high < _TOP:
                self._emit(0)
            elif self.low >= _TOP:
                self._emit(1)
                self.low -= _TOP
                self.high -= _TOP
            elif self.low >= _SECOND and self.high < _TOP + _SECOND:
                # Straddle: defer the carry until the next resolved bit.
                self.pending += 1
                self.low -= _SECOND
                self.high -= _SECOND
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) | 1) & _MASK

    def finish(self) -> tuple[bytes, int]:
        """Terminate the stream; returns (payload_bytes, exact_bit_count)."""
        self.pending += 1
        self._emit(1 if self.low >= _SECOND else 0)
        return self.out.getvalue(), self.out.total_bits


class ArithmeticDecoder:
    def __init__(self, freq: FrequencyTable, data: bytes):
        self.freq = freq
        # Termination plus byte padding never needs more lookahead than this;
        # anything beyond means the payload was cut short.
        self.reader = _BitReader(data, phantom_budget=STATE_SIZE + 8)
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(STATE_SIZE):
            self.code = (self.code << 1) | self.reader.read()

    def decode(self) -> int:
        total = self.freq.total
        span = self.high - self.low + 1
        offset = self.code - self.low
        value = ((offset + 1) * total - 1) // span
        # Binary search the cumulative table for the symbol owning `value`.
        cum = self.freq.cumulative
        lo, hi = 0, len(self.freq)
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if cum[mid] <= value:
                lo = mid
            else:
                hi = mid
        symbol = lo
        self.high = self.low + cum[symbol + 1] * span // total - 1
        self.low = self.low + cum[symbol] * span // total
        while True:
            if self.high < _TOP:
                pass
            elif self.low >= _TOP:
                self.low -= _TOP
                self.high -= _TOP
                self.code -= _TOP
            elif self.low >= _SECOND and self.high < _TOP + _SECOND:
                self.low -= _SECOND
                self.high -= _SECOND
                self.code -= _SECOND
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) | 1) & _MASK
            self.code = ((self.code << 1) | self.reader.read()) & _MASK
        return symbol


def arith_encode(symbols, freq: FrequencyTable) -> tuple[bytes, int]:
    """Encode a symbol stream; returns (payload, bit_count)."""
    enc = ArithmeticEncoder(freq)
    for s in symbols:
        enc.encode(int(s))
    return enc.finish()


def arith_decode(data: bytes, freq: FrequencyTable, count: int) -> np.ndarray:
    dec = ArithmeticDecoder(freq, data)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        out[i] = dec.decode()
    return out


def quantize_uniform(weights, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantize to `levels` equally spaced values spanning [min, max].

    Returns (symbols, codebook); ties round to the lower index, and the
    dequantization error never exceeds half the level spacing. A constant
    vector collapses to a single-level codebook.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("weights must be nonempty")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if levels < 2:
        raise ValueError("need at least 2 quantization levels")
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        return np.zeros(w.size, dtype=np.int64), np.array([lo])
    codebook = np.linspace(lo, hi, levels)
    step = (hi - lo) / (levels - 1)
    symbols = np.ceil((w - lo) / step - 0.5).astype(np.int64)
    np.clip(symbols, 0, levels - 1, out=symbols)
    return symbols, codebook


def deflate_size(data: bytes) -> int:
    """Bits of the zlib/DEFLATE encoding at the pinned setting."""
    return 8 * len(zlib.compress(bytes(data), DEFLATE_LEVEL))


@dataclass(frozen=True)
class HeaderField:
    """One hyperparameter charged to the code length as a fixed-width int."""

    name: str
    value: int
    width: int

    def __post_init__(self):
        if self.width <= 0 or self.width > 64:
            raise ValueError("field width must be in 1..64")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"{self.name}={self.value} does not fit {self.width} bits")


@dataclass(frozen=True)
class CompressedArtifact:
    """A coded hypothesis: payload plus every header bit it owes.

    ``header_bits`` charges the stored frequency table (16 bits per
    alphabet symbol), the codebook range (two f64), and each hyperparameter
    field; total_bits is the C(h) the bound consumes.
    """

    scheme: str
    payload: bytes
    payload_bits: int
    symbol_count: int
    codebook: tuple[float, ...] = ()
    freq_counts: tuple[int, ...] = ()
    fields: tuple[HeaderField, ...] = ()

    def __post_init__(self):
        if self.scheme not in _SCHEME_TAGS:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.payload_bits > 8 * len(self.payload):
            raise ValueError("payload_bits exceeds payload length")

    @property
    def header_bits(self) -> int:
        bits = sum(f.width for f in self.fields)
        bits += FREQ_HEADER_BITS_PER_SYMBOL * len(self.freq_counts)
        if self.codebook:
            bits += CODEBOOK_RANGE_BITS
        return bits

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.header_bits


def total_compressed_bits(artifact: CompressedArtifact, hyperparams=()) -> float:
    """C(h) in bits: payload plus header plus any extra hyperparameter fields."""
    return artifact.total_bits + sum(f.width for f in hyperparams)


def compress_weights(weights, levels: int, fields: tuple[HeaderField, ...] = ()
                     ) -> CompressedArtifact:
    """Quantize a parameter vector and arithmetic-code the symbol stream."""
    symbols, codebook = quantize_uniform(weights, levels)
    if len(codebook) == 1:
        # Zero-range vector: a one-symbol alphabet still terminates the coder.
        freq = FrequencyTable([1])
    else:
        freq = FrequencyTable.from_symbols(symbols, len(codebook))
    payload, nbits = arith_encode(symbols, freq)
    base_fields = (HeaderField("levels", len(codebook), 16),) + tuple(fields)
    return CompressedArtifact(
        scheme="arithmetic",
        payload=payload,
        payload_bits=nbits,
        symbol_count=int(symbols.size),
        codebook=tuple(codebook.tolist()),
        freq_counts=tuple(freq.counts),
        fields=base_fields,
    )


def decompress_weights(artifact: CompressedArtifact) -> np.ndarray:
    """Invert compress_weights back to the dequantized parameter vector."""
    if artifact.scheme != "arithmetic":
        raise ValueError("only arithmetic artifacts carry a decodable stream")
    codebook = np.asarray(artifact.codebook)
    if len(codebook) == 1:
        return np.full(artifact.symbol_count, codebook[0])
    freq = FrequencyTable(artifact.freq_counts)
    symbols = arith_decode(artifact.payload, freq, artifact.symbol_count)
    return codebook[symbols]


def deflate_artifact(data: bytes, fields: tuple[HeaderField, ...] = ()) -> CompressedArtifact:
    """Wrap an externally produced byte buffer under the deflate scheme."""
    payload = zlib.compress(bytes(data), DEFLATE_LEVEL)
    base_fields = (HeaderField("deflate_level", DEFLATE_LEVEL, 8),) + tuple(fields)
    return CompressedArtifact(
        scheme="deflate",
        payload=payload,
        payload_bits=8 * len(payload),
        symbol_count=len(data),
        fields=base_fields,
    )


def write_artifact(artifact: CompressedArtifact, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(ARTIFACT_MAGIC)
        fh.write(struct.pack("<HBQQ", ARTIFACT_VERSION, _SCHEME_TAGS[artifact.scheme],
                             artifact.symbol_count, artifact.payload_bits))
        fh.write(struct.pack("<I", len(artifact.codebook)))
        for level in artifact.codebook:
            fh.write(struct.pack("<d", level))
        fh.write(struct.pack("<I", len(artifact.freq_counts)))
        for c in artifact.freq_counts:
            fh.write(struct.pack("<H", c))
        fh.write(struct.pack("<H", len(artifact.fields)))
        for f in artifact.fields:
            name = f.name.encode("utf-8")
            fh.write(struct.pack("<B", len(name)))
            fh.write(name)
            fh.write(struct.pack("<QB", f.value, f.width))
        fh.write(struct.pack("<Q", len(artifact.payload)))
        fh.write(artifact.payload)


def read_artifact(path: str | Path) -> CompressedArtifact:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ARTIFACT_MAGIC:
            raise ValueError(f"bad artifact magic {magic!r}")
        version, scheme_tag, symbol_count, payload_bits = struct.unpack(
            "<HBQQ", fh.read(19)
        )
        if version != ARTIFACT_VERSION:
            raise ValueError(f"unsupported artifact version {version}")
        (n_levels,) = struct.unpack("<I", fh.read(4))
        codebook = tuple(struct.unpack("<d", fh.read(8))[0] for _ in range(n_levels))
        (n_freq,) = struct.unpack("<I", fh.read(4))
        freq = tuple(struct.unpack("<H", fh.read(2))[0] for _ in range(n_freq))
        (n_fields,) = struct.unpack("<H", fh.read(2))
        fields = []
        for _ in range(n_fields):
            (name_len,) = struct.unpack("<B", fh.read(1))
            name = fh.read(name_len).decode("utf-8")
            value, width = struct.unpack("<QB", fh.read(9))
            fields.append(HeaderField(name, value, width))
        (payload_len,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read(payload_len)
    return CompressedArtifact(
        scheme=_SCHEME_NAMES[scheme_tag],
        payload=payload,
        payload_bits=payload_bits,
        symbol_count=symbol_count,
        codebook=codebook,
        freq_counts=freq,
        fields=tuple(fields),
    )
