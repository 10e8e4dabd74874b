"""Trace export: run a model over sampled positions, honoring boundaries.

The context passed to the model never crosses the most recent document
boundary (equivalently, the most recent end-of-text token): the context
simply resets there, which enforces the masking contract for any model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import (
    Corpus,
    TraceRecords,
    read_corpus,
    split_on_eot,
    subsample_positions,
    write_trace,
)
from .models import load_model


@dataclass(frozen=True)
class ExportJob:
    model_spec: str
    corpus_path: str
    tracked_k: tuple[int, ...] = (1, 10, 100)
    n_subsample: int = 10_000
    seed: int = 0
    max_context: int | None = None
    eot_token_id: int | None = None
    model_id: str | None = None


def _rank_of(probs: np.ndarray, token: int) -> int:
    """1-based rank of the realized token, ties broken by ascending id."""
    p_t = probs[token]
    higher = int((probs > p_t).sum())
    ties_before = int((probs[:token] == p_t).sum())
    return 1 + higher + ties_before


def export_records(job: ExportJob) -> TraceRecords:
    corpus = read_corpus(job.corpus_path)
    if job.eot_token_id is not None:
        corpus = split_on_eot(corpus, job.eot_token_id)
    model = load_model(job.model_spec, vocab_size=corpus.vocab_size)
    if getattr(model, "vocab_size", corpus.vocab_size) < corpus.vocab_size:
        raise ValueError("model vocabulary smaller than the corpus vocabulary")

    m = corpus.total_tokens
    n = min(job.n_subsample, m)
    positions = subsample_positions(m, n, job.seed)
    wanted = np.zeros(m, dtype=bool)
    wanted[positions] = True

    window = job.max_context or getattr(model, "max_context", None)
    max_k = max(job.tracked_k) if job.tracked_k else 0
    p_out = np.empty(n)
    rank_out = np.zeros(n, dtype=np.uint32)
    doc_out = np.empty(n, dtype=bool)
    truncated = False

    offset = 0
    j = 0
    for doc in corpus.documents:
        for i, token in enumerate(doc):
            if wanted[offset + i]:
                context = doc[:i]
                if window is not None and len(context) > window:
                    context = context[-window:]
                    truncated = True
                probs = np.asarray(
                    model.next_token_probs(context), dtype=np.float64
                )
                p = float(probs[int(token)])
                if not 0.0 < p <= 1.0:
                    raise ValueError(
                        f"model emitted invalid probability {p} at position "
                        f"{offset + i}; cannot produce a certified trace"
                    )
                p_out[j] = p
                rank = _rank_of(probs, int(token))
                if max_k and rank <= max_k:
                    rank_out[j] = rank
                doc_out[j] = i == 0
                j += 1
        offset += len(doc)

    doc_out[0] = True  # the trace view starts at its first sampled position
    extra = {"context_truncated": True} if truncated else {}
    return TraceRecords(
        vocab_size=corpus.vocab_size,
        total_tokens=m,
        model_id=job.model_id or job.model_spec,
        tracked_k=tuple(job.tracked_k),
        subsample_seed=job.seed,
        p=p_out,
        rank=rank_out,
        doc_start=doc_out,
        extra_header=extra,
    )


def export_trace(job: ExportJob, out_path: str | Path) -> Path:
    """Run the job and write the trace file (text, or binary for .rtrc)."""
    rec = export_records(job)
    out_path = Path(out_path)
    write_trace(rec, out_path)
    return out_path
