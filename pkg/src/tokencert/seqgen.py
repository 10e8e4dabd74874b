"""Structured vs random integer-sequence datasets and the forgetting sweep.

Structured sequences are trajectories of short random expression trees
(operators +, -, * over the previous term, the position index, and small
constants), reduced modulo 10 so the whole corpus fits a 12-token
vocabulary: ten digits, a begin-of-text token, and a delimiter placed
between consecutive terms. The random baseline redraws every term IID from
the structured corpus's unique-integer set, destroying the structure while
keeping the marginals' support.

The memorization experiment trains one next-digit model per corpus at full
precision, re-quantizes its weights at decreasing level counts, and tracks
training accuracy on digit positions: compressible patterns survive coarse
quantization long after memorized noise is gone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coding import quantize_uniform
from .corpus import TokenStream

DIGIT_BASE = 10
BOT_TOKEN = 10
DELIM_TOKEN = 11
VOCAB_SIZE = 12

_OPS = ("add", "sub", "mul")
_LEAVES = ("prev", "index", 1, 2, 3)


@dataclass(frozen=True)
class ExprNode:
    """Binary expression tree; op is None at leaves."""

    op: str | None
    leaf: object = None
    left: "ExprNode | None" = None
    right: "ExprNode | None" = None

    def evaluate(self, prev: int, index: int) -> int:
        if self.op is None:
            if self.leaf == "prev":
                return prev
            if self.leaf == "index":
                return index
            return int(self.leaf)
        lhs = self.left.evaluate(prev, index)
        rhs = self.right.evaluate(prev, index)
        if self.op == "add":
            return lhs + rhs
        if self.op == "sub":
            return lhs - rhs
        return lhs * rhs

    def n_ops(self) -> int:
        if self.op is None:
            return 0
        return 1 + self.left.n_ops() + self.right.n_ops()


def leaf(value) -> ExprNode:
    return ExprNode(op=None, leaf=value)


def sample_tree(rng: np.random.Generator, n_ops: int) -> ExprNode:
    if n_ops == 0:
        return leaf(_LEAVES[rng.integers(len(_LEAVES))])
    op = _OPS[rng.integers(len(_OPS))]
    left_ops = int(rng.integers(0, n_ops))
    return ExprNode(
        op=op,
        left=sample_tree(rng, left_ops),
        right=sample_tree(rng, n_ops - 1 - left_ops),
    )


def tree_trajectory(tree: ExprNode, start: int, length: int) -> np.ndarray:
    """Recurrence rollout, each term reduced modulo 10."""
    seq = np.empty(length, dtype=np.int64)
    seq[0] = start % DIGIT_BASE
    for t in range(1, length):
        seq[t] = tree.evaluate(int(seq[t - 1]), t) % DIGIT_BASE
    return seq


@dataclass(frozen=True)
class SequenceDataset:
    kind: str
    sequences: np.ndarray  # (count, length) integers in [0, 10)
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        seqs = np.ascontiguousarray(self.sequences, dtype=np.int64)
        object.__setattr__(self, "sequences", seqs)
        if seqs.min() < 0 or seqs.max() >= DIGIT_BASE:
            raise ValueError("sequence terms must be digits after reduction")

    def unique_integers(self) -> np.ndarray:
        return np.unique(self.sequences)


def gen_structured(complexity: int = 4, length: int = 30, count: int = 984,
                   seed: int = 0) -> SequenceDataset:
    """One random expression tree per sequence; the op budget is `complexity`."""
    rng = np.random.default_rng(seed)
    rows = np.empty((count, length), dtype=np.int64)
    for i in range(count):
        n_ops = int(rng.integers(1, complexity + 1))
        tree = sample_tree(rng, n_ops)
        rows[i] = tree_trajectory(tree, int(rng.integers(DIGIT_BASE)), length)
    return SequenceDataset(kind="structured", sequences=rows)


def gen_random_baseline(structured: SequenceDataset, seed: int = 0) -> SequenceDataset:
    """Same shape, every term IID uniform over the structured unique set."""
    pool = structured.unique_integers()
    rng = np.random.default_rng(seed)
    rows = pool[rng.integers(0, len(pool), size=structured.sequences.shape)]
    return SequenceDataset(kind="random", sequences=rows)


def tokenize_dataset(ds: SequenceDataset) -> TokenStream:
    """One document per sequence: BOT then terms separated by the delimiter."""
    count, length = ds.sequences.shape
    doc_len = 2 * length  # BOT + digits interleaved with length-1 delimiters
    docs = np.full((count, doc_len), DELIM_TOKEN, dtype=np.int64)
    docs[:, 0] = BOT_TOKEN
    docs[:, 1::2] = ds.sequences
    return TokenStream.from_documents(list(docs), vocab_size=VOCAB_SIZE)


class LookupDigitModel:
    """Softmax table over exact context windows; logits = W one-hot(window).

    The context key is the tuple of the `window` tokens before a digit
    position (document-padded), so capacity scales with the number of
    distinct windows and the model can memorize any training stream whose
    windows are unique. Gradient descent is run column-wise (columns are
    independent), which keeps each column's logit margin proportional to
    how often its context was visited.
    """

    def __init__(self, window: int = 13):
        self.window = window
        self.columns: dict[tuple, int] = {}
        self.W: np.ndarray | None = None
        self._col_of_pos: np.ndarray | None = None
        self._targets: np.ndarray | None = None

    def _index_stream(self, stream: TokenStream) -> None:
        from .toymodel import context_table

        ctx = context_table(stream, self.window)
        digit_pos = np.flatnonzero(stream.tokens < DIGIT_BASE)
        cols = np.empty(len(digit_pos), dtype=np.int64)
        for j, pos in enumerate(digit_pos):
            key = tuple(ctx[pos])
            col = self.columns.setdefault(key, len(self.columns))
            cols[j] = col
        self._col_of_pos = cols
        self._targets = stream.tokens[digit_pos]

    def fit(self, stream: TokenStream, epochs: int = 60, lr: float = 0.5) -> None:
        self._index_stream(stream)
        n_cols = len(self.columns)
        counts = np.zeros((n_cols, DIGIT_BASE))
        np.add.at(counts, (self._col_of_pos, self._targets), 1.0)
        hits = counts.sum(axis=1, keepdims=True)
        self.W = np.zeros((n_cols, DIGIT_BASE))
        for _ in range(epochs):
            z = self.W - self.W.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            self.W -= lr * (hits * p - counts)

    def flat_params(self) -> np.ndarray:
        return self.W.ravel()

    def accuracy(self, params: np.ndarray | None = None) -> float:
        W = self.W if params is None else params.reshape(self.W.shape)
        # Ties resolve to the lowest digit, matching the rank convention.
        preds = np.argmax(W, axis=1)[self._col_of_pos]
        return float(np.mean(preds == self._targets))


def memorization_experiment(quant_levels, *, complexity: int = 4,
                            length: int = 30, count: int = 984, seed: int = 0,
                            window: int = 13, epochs: int = 60,
                            lr: float = 0.5, trainer_factory=None) -> list[dict]:
    """Forgetting sweep; returns one row per (kind, level) with accuracy.

    `quant_levels` are codebook sizes; the full-precision row is always
    included with level 0. A custom trainer_factory() can stand in for the
    lookup model as long as it exposes fit/flat_params/accuracy.
    """
    structured = gen_structured(complexity, length, count, seed=seed)
    datasets = [structured, gen_random_baseline(structured, seed=seed + 1)]
    rows = []
    for ds in datasets:
        stream = tokenize_dataset(ds)
        model = (trainer_factory() if trainer_factory is not None
                 else LookupDigitModel(window=window))
        model.fit(stream, epochs=epochs, lr=lr)
        full = model.flat_params()
        rows.append({"kind": ds.kind, "levels": 0, "accuracy": model.accuracy()})
        for levels in quant_levels:
            symbols, codebook = quantize_uniform(full, levels)
            rows.append({
                "kind": ds.kind,
                "levels": int(levels),
                "accuracy": model.accuracy(codebook[symbols]),
            })
    return rows
