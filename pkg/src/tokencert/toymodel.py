"""Desk-scale autoregressive model: a structured linear map over bag features.

The model scores the next token as ``logits = W phi(context) + beta`` where
phi sums the one-hot vectors of the last ``context`` same-document tokens
and W carries any of the structured parametrizations (optionally behind a
subspace expansion). Gradients are analytic, training is plain seeded SGD,
and the certified artifact is the quantized+coded flat parameter vector,
so a fixed seed reproduces the run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coding import CompressedArtifact, HeaderField, compress_weights, decompress_weights
from .corpus import TokenStream
from .structured import (
    StructuredLinear,
    SubspaceExpansion,
    make_layer,
    pad_to_square,
)
from .trace import RiskTrace, TraceHeader, subsample_positions

KIND_TAGS = {"dense": 0, "lora": 1, "kronecker": 2, "monarch": 3}


def context_table(stream: TokenStream, context: int) -> np.ndarray:
    """(m, context) matrix of the last same-document token ids, -1 when absent."""
    m = len(stream)
    table = np.full((m, context), -1, dtype=np.int64)
    for i in range(m):
        if stream.doc_start[i]:
            start = i
        lo = max(start, i - context)
        window = stream.tokens[lo:i]
        if len(window):
            table[i, : len(window)] = window[::-1]
    return table


def bag_features(ctx_rows: np.ndarray, vocab_size: int) -> np.ndarray:
    """Sum of one-hots over a batch of context rows."""
    n = ctx_rows.shape[0]
    phi = np.zeros((n, vocab_size))
    rows, cols = np.nonzero(ctx_rows >= 0)
    np.add.at(phi, (rows, ctx_rows[rows, cols]), 1.0)
    return phi


@dataclass
class ToyModel:
    vocab_size: int
    context: int
    layer: StructuredLinear
    bias: np.ndarray
    subspace: SubspaceExpansion | None = None
    w: np.ndarray | None = None  # subspace coordinates when subspace is set

    @property
    def n_trainable(self) -> int:
        if self.subspace is not None:
            return self.subspace.d
        return self.layer.param_count() + self.vocab_size

    def flat_params(self) -> np.ndarray:
        """The coded parameter vector (subspace coordinates when present)."""
        if self.subspace is not None:
            return self.w.copy()
        return np.concatenate([self.layer.get_params(), self.bias])

    def load_flat(self, flat: np.ndarray) -> None:
        if self.subspace is not None:
            self.w = np.asarray(flat, dtype=np.float64).copy()
            self._sync_from_subspace()
            return
        cut = self.layer.param_count()
        self.layer.set_params(flat[:cut])
        self.bias = np.asarray(flat[cut:cut + self.vocab_size], dtype=np.float64).copy()

    def _sync_from_subspace(self) -> None:
        theta = self.subspace.expand(self.w)
        cut = self.layer.param_count()
        self.layer.set_params(theta[:cut])
        self.bias = theta[cut:cut + self.vocab_size].copy()

    def logits(self, phi: np.ndarray) -> np.ndarray:
        return self.layer.apply(phi) + self.bias

    def loss_and_grad(self, phi: np.ndarray, targets: np.ndarray
                      ) -> tuple[float, np.ndarray]:
        """Mean cross-entropy and its gradient in the trainable coordinates."""
        n = phi.shape[0]
        z = self.logits(phi)
        z = z - z.max(axis=1, keepdims=True)
        expz = np.exp(z)
        probs = expz / expz.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), targets])))
        g = probs.copy()
        g[np.arange(n), targets] -= 1.0
        g /= n
        g_layer = self.layer.grad(g, phi)
        g_bias = g.sum(axis=0)
        flat = np.concatenate([g_layer, g_bias])
        if self.subspace is not None:
            padded = np.zeros(self.subspace.D)
            padded[: flat.size] = flat
            return loss, self.subspace.project_gradient(padded)
        return loss, flat

    def probabilities(self, phi: np.ndarray) -> np.ndarray:
        z = self.logits(phi)
        z = z - z.max(axis=1, keepdims=True)
        expz = np.exp(z)
        return expz / expz.sum(axis=1, keepdims=True)


def build_toy_model(vocab_size: int, context: int, kind: str, seed: int, *,
                    rank: int = 4, nblocks: int | None = None,
                    factor_shape: tuple[int, int] | None = None,
                    subspace_dim: int | None = None) -> ToyModel:
    layer = make_layer(kind, vocab_size, vocab_size, seed=seed, rank=rank,
                       factor_shape=factor_shape, nblocks=nblocks)
    rng = np.random.default_rng(seed + 1)
    bias = rng.standard_normal(vocab_size) * 0.01
    model = ToyModel(vocab_size=vocab_size, context=context, layer=layer, bias=bias)
    if subspace_dim is not None:
        rd = math.isqrt(subspace_dim)
        if rd * rd != subspace_dim:
            raise ValueError("subspace_dim must be a perfect square")
        theta0 = np.concatenate([layer.get_params(), bias])
        padded = np.zeros(pad_to_square(theta0.size))
        padded[: theta0.size] = theta0
        model.subspace = SubspaceExpansion(padded, subspace_dim, seed=seed + 2)
        model.w = np.zeros(subspace_dim)
        model._sync_from_subspace()
    return model


def ranks_against_vocab(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target, ties broken by ascending token id."""
    n, V = probs.shape
    p_t = probs[np.arange(n), targets]
    higher = (probs > p_t[:, None]).sum(axis=1)
    tie_idx = np.arange(V)[None, :] < targets[:, None]
    ties_before = ((probs == p_t[:, None]) & tie_idx).sum(axis=1)
    return (1 + higher + ties_before).astype(np.uint32)


def train_toy_model(stream: TokenStream, kind: str, context: int, steps: int,
                    lr: float, seed: int, *, levels: int = 256,
                    batch_size: int = 64, n_subsample: int = 10_000,
                    tracked_k: tuple[int, ...] = (1, 10), rank: int = 4,
                    nblocks: int | None = None,
                    factor_shape: tuple[int, int] | None = None,
                    subspace_dim: int | None = None,
                    ) -> tuple[ToyModel, RiskTrace, CompressedArtifact]:
    """SGD-train, quantize, code, and trace the quantized model.

    The returned trace is evaluated under the dequantized parameters (the
    hypothesis the artifact actually describes), over held-in positions
    drawn by the shared subsample scheme.
    """
    V = stream.vocab_size
    model = build_toy_model(V, context, kind, seed, rank=rank, nblocks=nblocks,
                            factor_shape=factor_shape, subspace_dim=subspace_dim)
    ctx = context_table(stream, context) if context else None
    tokens = stream.tokens
    m = len(stream)
    rng = np.random.default_rng(seed + 3)

    params = model.flat_params()
    for _ in range(steps):
        batch = rng.integers(0, m, size=batch_size)
        phi = (bag_features(ctx[batch], V) if context
               else np.zeros((batch_size, V)))
        _, grad = model.loss_and_grad(phi, tokens[batch])
        params -= lr * grad
        model.load_flat(params)

    fields = (
        HeaderField("kind", KIND_TAGS[kind], 2),
        HeaderField("context", context, 8),
        HeaderField("vocab", V, 32),
        HeaderField("seed", seed & 0xFFFFFFFF, 32),
        HeaderField("rank", rank, 16),
        HeaderField("nblocks", nblocks or 0, 16),
        HeaderField("subspace_dim", subspace_dim or 0, 32),
    )
    artifact = compress_weights(model.flat_params(), levels, fields=fields)
    model.load_flat(decompress_weights(artifact))

    n = min(n_subsample, m)
    positions = subsample_positions(m, n, seed)
    p_true = np.empty(n)
    rank_arr = np.empty(n, dtype=np.uint32)
    for lo in range(0, n, 1024):
        chunk = positions[lo:lo + 1024]
        phi = (bag_features(ctx[chunk], V) if context
               else np.zeros((len(chunk), V)))
        probs = model.probabilities(phi)
        targets = tokens[chunk]
        p_true[lo:lo + len(chunk)] = probs[np.arange(len(chunk)), targets]
        rank_arr[lo:lo + len(chunk)] = ranks_against_vocab(probs, targets)
    doc_flags = stream.doc_start[positions].copy()
    doc_flags[0] = True
    trace = RiskTrace(
        header=TraceHeader(
            vocab_size=V, total_tokens=m, model_id=f"toy-{kind}-c{context}",
            tracked_k=tuple(tracked_k), subsample_seed=seed,
        ),
        p=np.minimum(p_true, 1.0),
        rank=rank_arr,
        doc_start=doc_flags,
    )
    return model, trace, artifact
