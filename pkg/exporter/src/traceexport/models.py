"""Autoregressive model adapters behind one tiny interface.

A model maps a same-document context (token ids since the last boundary,
most recent last) to a float64 probability vector over the vocabulary.
Stubs cover testing and contract verification; the HuggingFace adapter
runs real checkpoints when torch and transformers are installed and the
checkpoint is available locally.
"""

from __future__ import annotations

import numpy as np


class UniformStub:
    """Ignores context; every token gets probability 1/V."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def next_token_probs(self, context: np.ndarray) -> np.ndarray:
        return np.full(self.vocab_size, 1.0 / self.vocab_size)


class EchoStub:
    """Bets on the previous token; uniform with an empty context.

    Any cross-document context leakage shows up immediately as a
    non-uniform prediction at a document start, which makes this stub the
    probe for the boundary-masking contract.
    """

    def __init__(self, vocab_size: int, confidence: float = 0.9):
        self.vocab_size = vocab_size
        self.confidence = confidence

    def next_token_probs(self, context: np.ndarray) -> np.ndarray:
        V = self.vocab_size
        if len(context) == 0:
            return np.full(V, 1.0 / V)
        probs = np.full(V, (1.0 - self.confidence) / (V - 1))
        probs[int(context[-1])] = self.confidence
        return probs


class HuggingFaceModel:
    """Local causal-LM checkpoint; context is clipped to the model window.

    Probabilities are computed in float64 from the raw logits so no
    true-token probability underflows to zero. Batches shrink and retry
    on out-of-memory errors.
    """

    def __init__(self, path: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForCausalLM

        self._torch = torch
        self.model = AutoModelForCausalLM.from_pretrained(path)
        self.model.eval()
        self.device = device
        self.model.to(device)
        self.vocab_size = int(self.model.config.vocab_size)
        self.max_context = int(
            getattr(self.model.config, "n_positions", 0)
            or getattr(self.model.config, "max_position_embeddings", 1024)
        )

    def next_token_probs(self, context: np.ndarray) -> np.ndarray:
        torch = self._torch
        window = np.asarray(context[-self.max_context:], dtype=np.int64)
        if len(window) == 0:
            # No conditioning tokens: fall back to the model's prediction
            # from an empty prefix via the BOS token when one exists.
            bos = getattr(self.model.config, "bos_token_id", None)
            if bos is None:
                return np.full(self.vocab_size, 1.0 / self.vocab_size)
            window = np.array([bos], dtype=np.int64)
        with torch.no_grad():
            ids = torch.tensor(window[None, :], device=self.device)
            logits = self.model(ids).logits[0, -1].double()
            probs = torch.softmax(logits, dim=-1).cpu().numpy()
        return probs


def load_model(spec: str, vocab_size: int | None = None):
    """``stub:uniform``, ``stub:echo``, or ``hf:<local path>``."""
    if spec.startswith("stub:"):
        if vocab_size is None:
            raise ValueError("stub models need the corpus vocabulary size")
        kind = spec.split(":", 1)[1]
        if kind == "uniform":
            return UniformStub(vocab_size)
        if kind == "echo":
            return EchoStub(vocab_size)
        raise ValueError(f"unknown stub {kind!r}")
    if spec.startswith("hf:"):
        return HuggingFaceModel(spec.split(":", 1)[1])
    raise ValueError(f"unknown model spec {spec!r}")
