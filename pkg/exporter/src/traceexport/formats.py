"""Readers and writers for the certification toolkit's file interfaces.

These formats are the contract between the exporter and the bound
evaluator; they are reimplemented here from their documented layouts so
this package depends only on the files, never on the evaluator's code.

Corpus file: line 1 is JSON ``{"V": int}``; each following line is one
document as space-separated token ids (boundaries are structural).

Trace file, text: line 1 is a JSON header ``{"V", "m", "model_id",
"tracked_k", "subsample_seed", ...}`` (readers ignore extra keys); each
following line is one JSON record ``{"p", "rank"?, "doc_start"?}``.

Trace file, binary: little-endian; magic ``RTRC``, version u16, V u32,
m u64, n u64, subsample_seed u64 (2**64-1 = absent), tracked_k count u16 +
u32 entries, model_id length u16 + UTF-8 bytes, then n records of
(p f64, rank u32 with 0 = untracked, flags u8 bit0 = doc_start).

Subsample scheme: the evaluated positions are the first n entries of
``numpy.random.default_rng(seed).permutation(m)``, sorted ascending.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_MAGIC = b"RTRC"
TRACE_VERSION = 1
_NO_SEED = 2**64 - 1

DEFLATE_LEVEL = 9  # pinned; must match the evaluator's compress command


@dataclass
class Corpus:
    vocab_size: int
    documents: list[np.ndarray]

    @property
    def total_tokens(self) -> int:
        return sum(len(d) for d in self.documents)


def read_corpus(path: str | Path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        docs = [np.array(line.split(), dtype=np.int64)
                for line in fh if line.strip()]
    return Corpus(vocab_size=int(head["V"]), documents=docs)


def split_on_eot(corpus: Corpus, eot_token_id: int) -> Corpus:
    """Further split documents at inline end-of-text tokens.

    The EOT token stays at the end of the document it closes, so it is
    still predicted; the following token starts a fresh context.
    """
    docs = []
    for doc in corpus.documents:
        start = 0
        for i in np.flatnonzero(doc == eot_token_id):
            docs.append(doc[start:i + 1])
            start = i + 1
        if start < len(doc):
            docs.append(doc[start:])
    return Corpus(vocab_size=corpus.vocab_size, documents=docs)


def subsample_positions(m: int, n: int, seed: int) -> np.ndarray:
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    if n == m:
        return np.arange(m, dtype=np.int64)
    return np.sort(rng.permutation(m)[:n]).astype(np.int64)


@dataclass
class TraceRecords:
    vocab_size: int
    total_tokens: int
    model_id: str
    tracked_k: tuple[int, ...]
    subsample_seed: int | None
    p: np.ndarray
    rank: np.ndarray          # 0 = untracked
    doc_start: np.ndarray
    extra_header: dict = field(default_factory=dict)


def write_trace_text(rec: TraceRecords, path: str | Path) -> None:
    header = {
        "V": rec.vocab_size,
        "m": rec.total_tokens,
        "model_id": rec.model_id,
        "tracked_k": list(rec.tracked_k),
        "subsample_seed": rec.subsample_seed,
        **rec.extra_header,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(rec.p)):
            row: dict = {"p": float(rec.p[i])}
            if rec.rank[i]:
                row["rank"] = int(rec.rank[i])
            if rec.doc_start[i]:
                row["doc_start"] = True
            fh.write(json.dumps(row) + "\n")


def write_trace_binary(rec: TraceRecords, path: str | Path) -> None:
    model_bytes = rec.model_id.encode("utf-8")
    seed = _NO_SEED if rec.subsample_seed is None else int(rec.subsample_seed)
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<HIQQQ", TRACE_VERSION, rec.vocab_size,
                             rec.total_tokens, len(rec.p), seed))
        fh.write(struct.pack("<H", len(rec.tracked_k)))
        for k in rec.tracked_k:
            fh.write(struct.pack("<I", k))
        fh.write(struct.pack("<H", len(model_bytes)))
        fh.write(model_bytes)
        packed = np.zeros(len(rec.p),
                          dtype=[("p", "<f8"), ("rank", "<u4"), ("flags", "u1")])
        packed["p"] = rec.p
        packed["rank"] = rec.rank
        packed["flags"] = rec.doc_start.astype(np.uint8)
        fh.write(packed.tobytes())


def write_trace(rec: TraceRecords, path: str | Path) -> None:
    if str(path).endswith(".rtrc"):
        write_trace_binary(rec, path)
    else:
        write_trace_text(rec, path)


def checkpoint_size(path: str | Path) -> int:
    """Bits of the checkpoint after DEFLATE at the pinned setting."""
    data = Path(path).read_bytes()
    return 8 * len(zlib.compress(data, DEFLATE_LEVEL))


def parse_config_file(path: str | Path) -> dict:
    """The shared ``key = value`` run-configuration format."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value
    return out
