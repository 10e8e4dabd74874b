"""Monte Carlo validation of the certified bound on known processes.

Ground truth here is an order-1 Markov chain whose conditional
distributions are known exactly, so the quantity the bound certifies (the
expected smoothed NLL conditioned on each observed context) is computable
in closed form. A fixed finite family of predictive models is scored
against many independently sampled sequences; the certificate fails on a
sequence when any family member's true conditional risk exceeds its bound.
Holding the failure frequency at or below delta, simultaneously over the
family, is the property the theory promises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import azuma_term, split_failure_probability, subsample_penalty
from .smoothing import interval_width
from .trace import subsample_positions

START_STATE = -1  # virtual context before the first token


@dataclass(frozen=True)
class ValidationReport:
    n_sequences: int
    n_hypotheses: int
    delta: float
    full_failures: int
    subsample_failures: int
    # negative control: violations of the bare empirical risk, no penalty.
    # High numbers here show the concentration terms are doing real work.
    empirical_only_failures: int

    @property
    def full_rate(self) -> float:
        return self.full_failures / self.n_sequences

    @property
    def subsample_rate(self) -> float:
        return self.subsample_failures / self.n_sequences


def _random_chain(rng: np.random.Generator, V: int) -> np.ndarray:
    """Row-stochastic transition matrix with positive entries."""
    T = rng.gamma(shape=1.0, scale=1.0, size=(V, V)) + 0.05
    return T / T.sum(axis=1, keepdims=True)


def _hypothesis_family(rng: np.random.Generator, truth: np.ndarray,
                       count: int) -> np.ndarray:
    """Predictive chains around (and far from) the truth; index 0 is exact."""
    V = truth.shape[0]
    family = [truth.copy()]
    while len(family) < count:
        blend = rng.uniform(0.0, 1.0)
        noise = _random_chain(rng, V)
        family.append(blend * truth + (1.0 - blend) * noise)
    return np.stack(family)


def _sample_sequences(rng, truth, n_sequences, m):
    V = truth.shape[0]
    cdf = np.cumsum(truth, axis=1)
    x = np.empty((n_sequences, m), dtype=np.int64)
    x[:, 0] = rng.integers(0, V, size=n_sequences)
    u = rng.random((n_sequences, m))
    for i in range(1, m):
        rows = cdf[x[:, i - 1]]
        x[:, i] = (u[:, i, None] > rows).sum(axis=1)
    return x


def run_bound_validation(n_sequences: int = 1000, V: int = 8, m: int = 2000,
                         n_hypotheses: int = 16, alpha: float = 0.1,
                         delta: float = 0.05, n_subsample: int = 200,
                         seed: int = 0) -> ValidationReport:
    """Count certificate violations over seeded sequences.

    For every sequence and every hypothesis the exact conditional risk is
    compared against (a) the full-evaluation bound (n = m, subsample path
    disabled) and (b) the two-stage bound with the delta split and the
    shared permutation subsample. A sequence counts as a failure when any
    hypothesis violates the respective certificate.
    """
    rng = np.random.default_rng(seed)
    truth = _random_chain(rng, V)
    family = _hypothesis_family(rng, truth, n_hypotheses)
    H = n_hypotheses

    # Smoothed NLL tables, in bits: nll[h, u, v]; one extra context row for
    # the uniform start state shared by the process and every hypothesis.
    smoothed = (1.0 - alpha) * family + alpha / V
    nll = -np.log2(smoothed)
    start_nll = np.full((H, 1, V), -math.log2(1.0 / V))
    nll_ext = np.concatenate([nll, start_nll], axis=1)  # context V == start

    # Exact conditional expectation of the risk per context.
    truth_ext = np.vstack([truth, np.full((1, V), 1.0 / V)])
    cond_mean = np.einsum("uv,huv->hu", truth_ext, nll_ext)

    prior_nats = math.log(n_hypotheses)  # uniform prior over the family
    width = interval_width(alpha, V)
    delta_hat = width  # every record shares one smoothing level

    full_term = azuma_term(delta_hat, prior_nats, delta, m)
    d1, d2 = split_failure_probability(delta, m, n_subsample)
    sub_azuma = azuma_term(delta_hat, prior_nats, d1, m)
    sub_pen = subsample_penalty(delta_hat, n_subsample, d2)

    sequences = _sample_sequences(rng, truth, n_sequences, m)
    full_failures = 0
    sub_failures = 0
    bare_failures = 0
    for s in range(n_sequences):
        x = sequences[s]
        contexts = np.empty(m, dtype=np.int64)
        contexts[0] = V  # start state row
        contexts[1:] = x[:-1]

        true_risk = cond_mean[:, contexts].mean(axis=1)
        empirical = nll_ext[:, contexts, x].mean(axis=1)
        if np.any(true_risk > empirical):
            bare_failures += 1
        if np.any(true_risk > empirical + full_term):
            full_failures += 1

        positions = subsample_positions(m, n_subsample, seed=seed + 7_000 + s)
        emp_sub = nll_ext[:, contexts[positions], x[positions]].mean(axis=1)
        if np.any(true_risk > emp_sub + sub_azuma + sub_pen):
            sub_failures += 1

    return ValidationReport(
        n_sequences=n_sequences,
        n_hypotheses=n_hypotheses,
        delta=delta,
        full_failures=full_failures,
        subsample_failures=sub_failures,
        empirical_only_failures=bare_failures,
    )
