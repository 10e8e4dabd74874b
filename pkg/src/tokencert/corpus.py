"""Token streams with document boundaries, plus a synthetic desk corpus.

Corpus file format (documented, versioned by construction): line 1 is a
JSON header ``{"V": int}``; every following line is one document as
space-separated token ids. Document boundaries are structural (one line
per document), so no vocabulary slot is spent on a delimiter token.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TokenStream:
    """Concatenated documents: token ids plus begin-of-document flags."""

    vocab_size: int
    tokens: np.ndarray
    doc_start: np.ndarray

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.int64)
        doc_start = np.ascontiguousarray(self.doc_start, dtype=bool)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "doc_start", doc_start)
        if len(tokens) != len(doc_start):
            raise ValueError("tokens and doc_start must have equal length")
        if len(tokens) and not doc_start[0]:
            raise ValueError("stream must begin with a document start")
        if len(tokens) and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ValueError("token id outside vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_documents(cls, docs, vocab_size: int) -> "TokenStream":
        docs = [np.asarray(d, dtype=np.int64) for d in docs if len(d)]
        if not docs:
            raise ValueError("need at least one nonempty document")
        tokens = np.concatenate(docs)
        doc_start = np.zeros(len(tokens), dtype=bool)
        offset = 0
        for d in docs:
            doc_start[offset] = True
            offset += len(d)
        return cls(vocab_size=vocab_size, tokens=tokens, doc_start=doc_start)

    def documents(self):
        starts = np.flatnonzero(self.doc_start)
        ends = np.append(starts[1:], len(self.tokens))
        for s, e in zip(starts, ends):
            yield self.tokens[s:e]


def write_corpus(stream: TokenStream, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"V": stream.vocab_size}) + "\n")
        for doc in stream.documents():
            fh.write(" ".join(map(str, doc.tolist())) + "\n")


def read_corpus(path: str | Path) -> TokenStream:
    with open(path, "r", encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        docs = []
        for line in fh:
            line = line.strip()
            if line:
                docs.append(np.array(line.split(), dtype=np.int64))
    return TokenStream.from_documents(docs, vocab_size=int(head["V"]))


def synthetic_corpus(n_tokens: int, vocab_size: int = 512, seed: int = 0,
                     doc_len_range: tuple[int, int] = (40, 160)) -> TokenStream:
    """Deterministic stand-in for a natural-text token stream.

    Documents of random length; each token follows its predecessor through
    a sparse preferred-continuation table 40% of the time and is otherwise
    drawn from a heavy-tailed marginal, giving the stream n-gram structure
    whose higher-order statistics do not fit in a small count table.
    """
    rng = np.random.default_rng(seed)
    marginal = 1.0 / (np.arange(vocab_size) + 3.0) ** 1.6
    marginal /= marginal.sum()
    cdf = np.cumsum(marginal)
    preferred = rng.integers(0, vocab_size, size=(vocab_size, 8))

    lo, hi = doc_len_range
    lengths = []
    total = 0
    while total < n_tokens:
        length = int(rng.integers(lo, hi + 1))
        lengths.append(length)
        total += length
    n_docs = len(lengths)
    max_len = max(lengths)

    # Columns evolve all documents one position at a time.
    tokens = np.zeros((n_docs, max_len), dtype=np.int64)
    follow = rng.random((n_docs, max_len)) < 0.4
    slot = rng.integers(0, preferred.shape[1], size=(n_docs, max_len))
    fresh = np.searchsorted(cdf, rng.random((n_docs, max_len)))
    tokens[:, 0] = fresh[:, 0]
    for j in range(1, max_len):
        cont = preferred[tokens[:, j - 1], slot[:, j]]
        tokens[:, j] = np.where(follow[:, j], cont, fresh[:, j])

    docs = [tokens[i, : lengths[i]] for i in range(n_docs)]
    return TokenStream.from_documents(docs, vocab_size=vocab_size)
