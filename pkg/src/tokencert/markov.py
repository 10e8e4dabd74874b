"""Sparse k-th order Markov chain baseline with certified size accounting.

The chain counts (prefix -> token) transitions that never span a document
boundary; positions with fewer than k same-document predecessors pad the
prefix with a reserved begin symbol so every token of the stream is
predicted and counted. Prediction mixes the count ratio with the uniform
distribution at smoothing level alpha, and the compressed size charges a
variable-length key plus a fixed-width count per stored entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundResult, evaluate_bpd_bound
from .coding import CompressedArtifact, HeaderField
from .corpus import TokenStream
from .smoothing import SmoothingPlan
from .trace import RiskTrace, TraceHeader, subsample_positions

# Smoothing levels are coded as an 8-bit index into this menu; 0.1 (the
# default) lands exactly on entry 204.
ALPHA_MENU: tuple[float, ...] = tuple(np.logspace(-5.0, 0.0, 256))
DEFAULT_ALPHA = float(ALPHA_MENU[204])

HEADER_FIELDS = (
    ("order", 8),
    ("vocab", 32),
    ("alpha_index", 8),
    ("count_width", 8),
)
HEADER_BITS = sum(width for _, width in HEADER_FIELDS)


def snap_alpha(alpha: float) -> tuple[int, float]:
    """Nearest menu entry; the coded model must use a coded alpha."""
    idx = int(np.argmin(np.abs(np.log(ALPHA_MENU) - math.log(alpha))))
    return idx, float(ALPHA_MENU[idx])


@dataclass
class SparseMarkov:
    order: int
    vocab_size: int
    alpha: float = DEFAULT_ALPHA
    count_width: int = 16
    counts: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        idx, snapped = snap_alpha(self.alpha)
        self.alpha = snapped
        self.alpha_index = idx

    @property
    def begin_symbol(self) -> int:
        return self.vocab_size

    def token_prob(self, prefix: tuple, token: int) -> float:
        """Smoothed next-token probability; unseen prefixes are uniform."""
        alpha = self.alpha
        V = self.vocab_size
        bucket = self.counts.get(tuple(prefix))
        if bucket is None:
            return 1.0 / V
        p_counts = bucket.get(token, 0) / self.totals[tuple(prefix)]
        return (1.0 - alpha) * p_counts + alpha / V

    def raw_prob(self, prefix: tuple, token: int) -> float:
        """Pre-smoothing probability, the value a risk trace stores."""
        bucket = self.counts.get(tuple(prefix))
        if bucket is None:
            return 1.0 / self.vocab_size
        return bucket.get(token, 0) / self.totals[tuple(prefix)]


def _prefixes(stream: TokenStream, k: int, begin: int):
    """Yield (prefix, token) for every position, resetting at boundaries."""
    tokens = stream.tokens
    doc_start = stream.doc_start
    context: list[int] = []
    for i in range(len(tokens)):
        if doc_start[i]:
            context = []
        padded = [begin] * (k - len(context)) + context[-k:] if k else []
        yield tuple(padded), int(tokens[i])
        if k:
            context.append(int(tokens[i]))
            if len(context) > k:
                context.pop(0)


def train(stream: TokenStream, k: int, alpha: float = DEFAULT_ALPHA,
          count_width: int = 16) -> SparseMarkov:
    """Count every within-document transition, saturating at the count width."""
    model = SparseMarkov(order=k, vocab_size=stream.vocab_size, alpha=alpha,
                         count_width=count_width)
    counts = model.counts
    for prefix, token in _prefixes(stream, k, model.begin_symbol):
        bucket = counts.get(prefix)
        if bucket is None:
            counts[prefix] = {token: 1}
        else:
            bucket[token] = bucket.get(token, 0) + 1
    ceiling = (1 << count_width) - 1
    for prefix, bucket in counts.items():
        for token in bucket:
            if bucket[token] > ceiling:
                bucket[token] = ceiling
        model.totals[prefix] = sum(bucket.values())
    return model


def stream_nll_bits(model: SparseMarkov, stream: TokenStream) -> float:
    """Total smoothed negative log2-likelihood of a stream under the chain."""
    total = 0.0
    for prefix, token in _prefixes(stream, model.order, model.begin_symbol):
        total += -math.log2(model.token_prob(prefix, token))
    return total


def _varint_bits(value: int) -> int:
    """Bits of the 7-bit continuation encoding (1 byte per 7-bit group)."""
    nbytes = 1
    while value >= 0x80:
        value >>= 7
        nbytes += 1
    return 8 * nbytes


def _varint_bytes(value: int) -> bytes:
    out = bytearray()
    while True:
        group = value & 0x7F
        value >>= 7
        if value:
            out.append(group | 0x80)
        else:
            out.append(group)
            return bytes(out)


def encode_entries(model: SparseMarkov) -> bytes:
    """Key/count stream: lexicographically sorted entries, varint keys,
    fixed-width counts."""
    nbytes = (model.count_width + 7) // 8
    out = bytearray()
    for prefix in sorted(model.counts):
        bucket = model.counts[prefix]
        for token in sorted(bucket):
            for part in prefix:
                out += _varint_bytes(part)
            out += _varint_bytes(token)
            out += int(bucket[token]).to_bytes(nbytes, "little")
    return bytes(out)


def size_bits(model: SparseMarkov) -> int:
    """C(h): per-entry key and count bits plus the fixed header fields."""
    bits = HEADER_BITS
    for prefix, bucket in model.counts.items():
        key_prefix_bits = sum(_varint_bits(part) for part in prefix)
        for token in bucket:
            bits += key_prefix_bits + _varint_bits(token) + model.count_width
    return bits


def as_artifact(model: SparseMarkov) -> CompressedArtifact:
    """The model file contents; total_bits equals size_bits exactly."""
    payload = encode_entries(model)
    n_entries = sum(len(b) for b in model.counts.values())
    fields = (
        HeaderField("order", model.order, 8),
        HeaderField("vocab", model.vocab_size, 32),
        HeaderField("alpha_index", model.alpha_index, 8),
        HeaderField("count_width", model.count_width, 8),
    )
    art = CompressedArtifact(
        scheme="raw",
        payload=payload,
        payload_bits=8 * len(payload),
        symbol_count=n_entries,
        fields=fields,
    )
    return art


def build_trace(model: SparseMarkov, stream: TokenStream, n_subsample: int,
                seed: int) -> RiskTrace:
    """Risk trace over held-in positions drawn by the shared permutation."""
    m = len(stream)
    n = min(n_subsample, m)
    positions = subsample_positions(m, n, seed)
    wanted = np.zeros(m, dtype=bool)
    wanted[positions] = True
    p = np.empty(n, dtype=np.float64)
    doc_flags = np.empty(n, dtype=bool)
    j = 0
    for i, (prefix, token) in enumerate(_prefixes(stream, model.order,
                                                  model.begin_symbol)):
        if wanted[i]:
            p[j] = model.raw_prob(prefix, token)
            doc_flags[j] = bool(stream.doc_start[i])
            j += 1
    doc_flags[0] = True  # subsample retells the stream from its first pick
    return RiskTrace(
        header=TraceHeader(
            vocab_size=model.vocab_size, total_tokens=m,
            model_id=f"markov-k{model.order}", subsample_seed=seed,
        ),
        p=p,
        rank=np.zeros(n, dtype=np.uint32),
        doc_start=doc_flags,
    )


def markov_bound(stream: TokenStream, k: int, delta: float, n_subsample: int,
                 seed: int = 0, alpha: float = DEFAULT_ALPHA) -> BoundResult:
    """Train, size, trace, and certify in one shot."""
    model = train(stream, k, alpha=alpha)
    trace = build_trace(model, stream, n_subsample, seed)
    return evaluate_bpd_bound(
        trace, SmoothingPlan.for_alpha(model.alpha), delta=delta,
        C_bits=size_bits(model),
    )
