"""Per-token risk traces: the boundary between any model and the bound math.

A trace stores, for each evaluated token position, the probability the model
assigned to the realized token (pre-smoothing), optionally the rank of that
token in the model's next-token ordering, and whether the position starts a
new document. Traces are immutable once validated.

File formats (versioned):

* Text (``.trc``): line 1 is a JSON header object
  ``{"V": int, "m": int, "model_id": str, "tracked_k": [int, ...],
  "subsample_seed": int|null}``; every following line is one JSON record
  ``{"p": float, "rank": int?, "doc_start": bool?, "alpha": float?}``.
  Probabilities are emitted with ``repr`` so a 64-bit float round-trips
  exactly; exporters must round *down* when reducing precision so the
  certified bound stays valid.
* Binary (``.rtrc``): little-endian; magic ``RTRC``, version u16, V u32,
  m u64, n u64, subsample_seed u64 (2**64-1 = absent), tracked_k count u16
  followed by u32 entries, model_id length u16 followed by UTF-8 bytes;
  then n fixed-width records of (p f64, rank u32 with 0 = untracked,
  flags u8 with bit0 = doc_start). Binary records carry no per-record
  alpha; writing a trace that has one raises ``ValueError``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TraceFormatError

BINARY_MAGIC = b"RTRC"
BINARY_VERSION = 1
_NO_SEED = 2**64 - 1


@dataclass(frozen=True)
class TraceHeader:
    vocab_size: int
    total_tokens: int
    model_id: str = ""
    tracked_k: tuple[int, ...] = ()
    subsample_seed: int | None = None


@dataclass(frozen=True)
class RiskTrace:
    """Validated record stream over a subsample of token positions.

    ``p`` holds pre-smoothing true-token probabilities in (0, 1];
    ``rank`` holds 1-based top-k ranks with 0 meaning untracked;
    ``doc_start`` marks positions that begin a new document;
    ``alpha`` optionally carries an exporter-side per-record smoothing level.
    """

    header: TraceHeader
    p: np.ndarray
    rank: np.ndarray
    doc_start: np.ndarray
    alpha: np.ndarray | None = field(default=None)

    def __post_init__(self):
        p = np.ascontiguousarray(self.p, dtype=np.float64)
        rank = np.ascontiguousarray(self.rank, dtype=np.uint32)
        doc_start = np.ascontiguousarray(self.doc_start, dtype=bool)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "doc_start", doc_start)
        if self.alpha is not None:
            object.__setattr__(
                self, "alpha", np.ascontiguousarray(self.alpha, dtype=np.float64)
            )
        self._validate()

    def _validate(self) -> None:
        h = self.header
        n = len(self.p)
        if n == 0:
            raise TraceFormatError("trace has no records")
        if h.vocab_size < 2:
            raise TraceFormatError(f"vocab_size must be >= 2, got {h.vocab_size}")
        if n > h.total_tokens:
            raise TraceFormatError(
                f"record count {n} exceeds certified sequence length m={h.total_tokens}"
            )
        if len(self.rank) != n or len(self.doc_start) != n:
            raise TraceFormatError("record arrays have mismatched lengths")
        if self.alpha is not None and len(self.alpha) != n:
            raise TraceFormatError("alpha array length does not match record count")
        if not np.all(np.isfinite(self.p)):
            raise TraceFormatError("p contains non-finite values")
        if np.any(self.p <= 0.0) or np.any(self.p > 1.0):
            bad = int(np.argmax((self.p <= 0.0) | (self.p > 1.0)))
            raise TraceFormatError(f"p out of (0,1] at record {bad}: {self.p[bad]}")
        if not bool(self.doc_start[0]):
            raise TraceFormatError("first record must have doc_start=true")
        if any(k < 1 for k in h.tracked_k):
            raise TraceFormatError("tracked_k entries must be >= 1")

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def m(self) -> int:
        return self.header.total_tokens

    @property
    def vocab_size(self) -> int:
        return self.header.vocab_size


def subsample_positions(m: int, n: int, seed: int) -> np.ndarray:
    """Token positions certified by a trace of size n out of m.

    Drawn as the first n entries of a seeded random permutation of
    ``range(m)``, returned sorted ascending for streaming evaluation.
    Exporters must use this exact scheme so traces line up with the
    subsample penalty accounting.
    """
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    if n == m:
        return np.arange(m, dtype=np.int64)
    return np.sort(rng.permutation(m)[:n]).astype(np.int64)


def write_text(trace: RiskTrace, path: str | Path) -> None:
    h = trace.header
    header = {
        "V": h.vocab_size,
        "m": h.total_tokens,
        "model_id": h.model_id,
        "tracked_k": list(h.tracked_k),
        "subsample_seed": h.subsample_seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(trace.n):
            rec: dict = {"p": float(trace.p[i])}
            if trace.rank[i] != 0:
                rec["rank"] = int(trace.rank[i])
            if trace.doc_start[i]:
                rec["doc_start"] = True
            if trace.alpha is not None:
                rec["alpha"] = float(trace.alpha[i])
            fh.write(json.dumps(rec) + "\n")


def read_text(path: str | Path) -> RiskTrace:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise TraceFormatError("empty trace file", line=1)
        try:
            head = json.loads(first)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"bad header JSON: {exc}", line=1) from exc
        for key in ("V", "m"):
            if key not in head:
                raise TraceFormatError(f"header missing required field {key!r}", line=1)
        header = TraceHeader(
            vocab_size=int(head["V"]),
            total_tokens=int(head["m"]),
            model_id=str(head.get("model_id", "")),
            tracked_k=tuple(int(k) for k in head.get("tracked_k", [])),
            subsample_seed=(
                None if head.get("subsample_seed") is None else int(head["subsample_seed"])
            ),
        )
        p, rank, doc_start, alphas = [], [], [], []
        has_alpha = False
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"bad record JSON: {exc}", line=lineno) from exc
            if "p" not in rec:
                raise TraceFormatError("record missing field 'p'", line=lineno)
            p_val = float(rec["p"])
            if not 0.0 < p_val <= 1.0:
                raise TraceFormatError(f"p out of (0,1]: {p_val}", line=lineno)
            p.append(p_val)
            rank.append(int(rec.get("rank", 0)))
            doc_start.append(bool(rec.get("doc_start", False)))
            if "alpha" in rec:
                has_alpha = True
            alphas.append(float(rec.get("alpha", np.nan)))
        if not p:
            raise TraceFormatError("trace file has a header but no records", line=2)
        if has_alpha and any(np.isnan(a) for a in alphas):
            raise TraceFormatError("alpha present on some records but not all")
    try:
        return RiskTrace(
            header=header,
            p=np.array(p),
            rank=np.array(rank, dtype=np.uint32),
            doc_start=np.array(doc_start, dtype=bool),
            alpha=np.array(alphas) if has_alpha else None,
        )
    except TraceFormatError:
        raise
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from exc


def write_binary(trace: RiskTrace, path: str | Path) -> None:
    if trace.alpha is not None:
        raise ValueError("binary trace format v1 cannot carry per-record alpha")
    h = trace.header
    model_bytes = h.model_id.encode("utf-8")
    seed = _NO_SEED if h.subsample_seed is None else int(h.subsample_seed)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<HIQQQ", BINARY_VERSION, h.vocab_size, h.total_tokens,
                             trace.n, seed))
        fh.write(struct.pack("<H", len(h.tracked_k)))
        for k in h.tracked_k:
            fh.write(struct.pack("<I", k))
        fh.write(struct.pack("<H", len(model_bytes)))
        fh.write(model_bytes)
        flags = trace.doc_start.astype(np.uint8)
        rec = np.zeros(trace.n, dtype=[("p", "<f8"), ("rank", "<u4"), ("flags", "u1")])
        rec["p"] = trace.p
        rec["rank"] = trace.rank
        rec["flags"] = flags
        fh.write(rec.tobytes())


def read_binary(path: str | Path) -> RiskTrace:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise TraceFormatError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        version, vocab, m, n, seed = struct.unpack("<HIQQQ", fh.read(30))
        if version != BINARY_VERSION:
            raise TraceFormatError(f"unsupported trace version {version}")
        (k_count,) = struct.unpack("<H", fh.read(2))
        tracked_k = tuple(
            struct.unpack("<I", fh.read(4))[0] for _ in range(k_count)
        )
        (id_len,) = struct.unpack("<H", fh.read(2))
        model_id = fh.read(id_len).decode("utf-8")
        raw = fh.read(n * 13)
        if len(raw) != n * 13:
            raise TraceFormatError(
                f"truncated record block: expected {n} records, got {len(raw) // 13}"
            )
        rec = np.frombuffer(raw, dtype=[("p", "<f8"), ("rank", "<u4"), ("flags", "u1")])
    header = TraceHeader(
        vocab_size=vocab,
        total_tokens=m,
        model_id=model_id,
        tracked_k=tracked_k,
        subsample_seed=None if seed == _NO_SEED else seed,
    )
    return RiskTrace(
        header=header,
        p=rec["p"].copy(),
        rank=rec["rank"].copy(),
        doc_start=(rec["flags"] & 1).astype(bool),
    )


def read_trace(path: str | Path) -> RiskTrace:
    """Load a trace, sniffing binary vs text by the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return read_binary(path)
    return read_text(path)
