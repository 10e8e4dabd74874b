"""Token-level martingale generalization bounds.

The certified statement: with probability at least 1 - delta over the
sampled token sequence, the expected per-token risk (averaged over the
contexts seen in the sequence) is at most

    empirical risk  +  D * sqrt((prior_nats + ln(1/delta1)) / (2m))
                    +  D * sqrt(ln(1/delta2) / (2n))

where D is the root-mean-square of the per-record risk-interval widths, m
is the length of the full certified sequence, and n is the size of the
evaluation subsample. The first square-root term is the Azuma/union-bound
concentration cost of the hypothesis prior; the second is the cost of
estimating the empirical risk on a subsample instead of the full sequence.

Unit conventions, fixed here once: risks and interval widths are in bits
(base-2 logs); everything inside the square roots is in natural-log units
because the concentration argument exponentiates them.

All reductions are plain float64 sums over contiguous arrays (numpy's
pairwise summation), so results are deterministic for a given record order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedKError
from .smoothing import SmoothingPlan, interval_widths, smooth_prob
from .trace import RiskTrace


@dataclass(frozen=True)
class BoundContext:
    """Inputs assembled for one bound evaluation."""

    delta: float
    complexity_bits: float
    m: int
    n: int
    interval_width_bits: np.ndarray
    delta_hat: float

    def __post_init__(self):
        widths = np.ascontiguousarray(self.interval_width_bits, dtype=np.float64)
        object.__setattr__(self, "interval_width_bits", widths)
        if np.any(widths <= 0.0):
            raise ValueError("interval widths must be positive")
        rms = math.sqrt(float(np.mean(widths**2)))
        if abs(rms - self.delta_hat) > 1e-12 * max(rms, 1e-300):
            raise ValueError(
                f"delta_hat {self.delta_hat} inconsistent with widths (rms {rms})"
            )


@dataclass(frozen=True)
class BoundResult:
    """One certified bound, split into its three terms.

    Units are bits/token for the log-loss metric and error rate in [0, 1]
    for top-k. ``bound`` is always the sum of the three terms; the verdict
    compares it to the random-guess threshold for the metric.
    """

    metric: str
    empirical_term: float
    complexity_term: float
    subsample_term: float
    bound: float
    vacuity_threshold: float
    non_vacuous: bool
    delta: float
    complexity_bits: float
    m: int
    n: int
    delta_hat: float

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "empirical_term": self.empirical_term,
            "complexity_term": self.complexity_term,
            "subsample_term": self.subsample_term,
            "bound": self.bound,
            "vacuity_threshold": self.vacuity_threshold,
            "non_vacuous": self.non_vacuous,
            "delta": self.delta,
            "complexity_bits": self.complexity_bits,
            "m": self.m,
            "n": self.n,
            "delta_hat": self.delta_hat,
        }


def split_failure_probability(delta: float, m: int, n: int) -> tuple[float, float]:
    """Allocate the failure budget between concentration and subsampling.

    Returns ``(delta1, delta2) = (delta * n / (n+m), delta * m / (n+m))``,
    which sum to delta; the larger share goes to the subsampling stage
    because its penalty decays with the much smaller n.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0,1), got {delta}")
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    return delta * n / (n + m), delta * m / (n + m)


def complexity_nats(C_bits: float) -> float:
    """Prior weight -ln P(h) of a model whose code is C_bits bits long.

    Uses the prefix-code prior bound C*ln(2) + 2*ln(C); needs C >= 1 so the
    second term is defined and nonnegative.
    """
    if C_bits < 1.0:
        raise ValueError(f"compressed size must be >= 1 bit, got {C_bits}")
    return C_bits * math.log(2.0) + 2.0 * math.log(C_bits)


def azuma_term(delta_hat: float, prior_nats: float, delta1: float, m: int) -> float:
    """Concentration cost in bits: delta_hat * sqrt((prior_nats + ln(1/delta1)) / (2m))."""
    if delta_hat <= 0.0:
        raise ValueError("delta_hat must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < delta1 <= 1.0:
        raise ValueError(f"delta1 must be in (0,1], got {delta1}")
    return delta_hat * math.sqrt((prior_nats + math.log(1.0 / delta1)) / (2.0 * m))


def subsample_penalty(delta_hat: float, n: int, delta2: float) -> float:
    """Empirical-risk estimation cost in bits: delta_hat * sqrt(ln(1/delta2) / (2n))."""
    if delta_hat <= 0.0:
        raise ValueError("delta_hat must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta2 <= 1.0:
        raise ValueError(f"delta2 must be in (0,1], got {delta2}")
    return delta_hat * math.sqrt(math.log(1.0 / delta2) / (2.0 * n))


def _assemble(metric, empirical, delta_hat, prior_nats, delta, m, n,
              vacuity_threshold, C_bits, subsample_correction):
    if delta_hat == 0.0:
        # Constant risk (alpha = 1 everywhere): the martingale increments
        # vanish and both penalties are exactly zero.
        concentration = estimation = 0.0
    elif subsample_correction:
        delta1, delta2 = split_failure_probability(delta, m, n)
        concentration = azuma_term(delta_hat, prior_nats, delta1, m)
        estimation = subsample_penalty(delta_hat, n, delta2)
    else:
        if n != m:
            raise ValueError("subsample correction can only be disabled when n == m")
        concentration = azuma_term(delta_hat, prior_nats, delta, m)
        estimation = 0.0
    bound = empirical + concentration + estimation
    return BoundResult(
        metric=metric,
        empirical_term=empirical,
        complexity_term=concentration,
        subsample_term=estimation,
        bound=bound,
        vacuity_threshold=vacuity_threshold,
        non_vacuous=bound < vacuity_threshold,
        delta=delta,
        complexity_bits=C_bits,
        m=m,
        n=n,
        delta_hat=delta_hat,
    )


def _resolve_prior(C_bits: float | None, prior_nats: float | None) -> tuple[float, float]:
    if (C_bits is None) == (prior_nats is None):
        raise ValueError("provide exactly one of C_bits or prior_nats")
    if C_bits is not None:
        return complexity_nats(C_bits), float(C_bits)
    if prior_nats < 0.0:
        raise ValueError("prior_nats must be nonnegative")
    return float(prior_nats), float("nan")


def evaluate_bpd_bound(trace: RiskTrace, smoothing: SmoothingPlan, *,
                       delta: float, C_bits: float | None = None,
                       prior_nats: float | None = None,
                       subsample_correction: bool = True) -> BoundResult:
    """Certified bits-per-token bound for the smoothed log-loss.

    The empirical term averages -log2 of the smoothed true-token
    probability over the trace; each record's interval width comes from its
    smoothing level. The prior is given either as a compressed size in bits
    or directly in nats (e.g. ln of a finite hypothesis count). The
    random-guess threshold is log2(V).
    """
    V = trace.vocab_size
    alphas = smoothing.alphas_for(trace.p, trace.alpha)
    if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise ValueError("every per-record alpha must be in (0,1]")
    nll = -np.log2(smooth_prob(trace.p, alphas, V))
    empirical = float(np.mean(nll))
    widths = interval_widths(alphas, V)
    delta_hat = math.sqrt(float(np.mean(widths**2)))
    prior, C_val = _resolve_prior(C_bits, prior_nats)
    return _assemble(
        "bpd", empirical, delta_hat, prior, delta, trace.m, trace.n,
        math.log2(V), C_val, subsample_correction,
    )


def evaluate_topk_bound(trace: RiskTrace, k: int, *, delta: float,
                        C_bits: float | None = None,
                        prior_nats: float | None = None,
                        subsample_correction: bool = True) -> BoundResult:
    """Certified top-k error bound.

    A record scores 1 when the realized token's rank exceeds k; an absent
    rank means the token fell outside every tracked k and also scores 1
    (conservative). The risk is already in [0, 1], so every interval width
    is 1 and the threshold is the random-guess error 1 - k/V.
    """
    if k not in trace.header.tracked_k:
        raise UnsupportedKError(
            f"k={k} not tracked by this trace (tracked_k={trace.header.tracked_k})"
        )
    errors = (trace.rank == 0) | (trace.rank > k)
    empirical = float(np.mean(errors.astype(np.float64)))
    prior, C_val = _resolve_prior(C_bits, prior_nats)
    return _assemble(
        f"top{k}", empirical, 1.0, prior, delta, trace.m, trace.n,
        1.0 - k / trace.vocab_size, C_val, subsample_correction,
    )


def bpd_vacuity_threshold(V: int) -> float:
    """Random-guess bits per token."""
    return math.log2(V)


def topk_vacuity_threshold(V: int, k: int) -> float:
    """Random-guess top-k error rate."""
    return 1.0 - k / V
