"""Prediction smoothing: mixing model probabilities with the uniform distribution.

Smoothing at level alpha turns a raw next-token probability p into
``(1 - alpha) * p + alpha / V``, which pins the per-token negative
log-probability inside a finite interval. That interval width is what the
martingale bound pays for in its square-root terms, so alpha trades the
empirical term against the concentration terms. This module provides the
width algebra, a global grid search, and a bucketed per-token optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# 25 log-spaced levels spanning [1e-5, 1]; the search grid used everywhere.
DEFAULT_ALPHA_GRID: tuple[float, ...] = tuple(np.logspace(-5.0, 0.0, 25))


@dataclass(frozen=True)
class SmoothingPlan:
    """How each trace record gets its smoothing level.

    ``global``   : one alpha for every record.
    ``per_token``: a record's alpha is the bucket its p falls in;
                   ``bucket_edges`` has one more entry than
                   ``bucket_alphas`` and spans [0, 1].
    ``from_trace``: use the per-record alpha stored in the trace.
    """

    mode: str
    global_alpha: float | None = None
    bucket_edges: tuple[float, ...] = ()
    bucket_alphas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode == "global":
            if self.global_alpha is None or not 0.0 < self.global_alpha <= 1.0:
                raise ValueError(f"global alpha must be in (0,1], got {self.global_alpha}")
        elif self.mode == "per_token":
            edges = self.bucket_edges
            if len(edges) != len(self.bucket_alphas) + 1:
                raise ValueError("need len(bucket_edges) == len(bucket_alphas) + 1")
            if edges[0] != 0.0 or edges[-1] != 1.0:
                raise ValueError("bucket_edges must span [0, 1]")
            if any(b >= a for a, b in zip(edges[1:], edges[:-1])):
                raise ValueError("bucket_edges must be strictly increasing")
            if any(not 0.0 < a <= 1.0 for a in self.bucket_alphas):
                raise ValueError("every bucket alpha must be in (0,1]")
        elif self.mode != "from_trace":
            raise ValueError(f"unknown smoothing mode {self.mode!r}")

    def alphas_for(self, p: np.ndarray, record_alpha: np.ndarray | None = None) -> np.ndarray:
        """Per-record alpha vector for probabilities ``p``."""
        if self.mode == "global":
            return np.full(len(p), self.global_alpha, dtype=np.float64)
        if self.mode == "from_trace":
            if record_alpha is None:
                raise ValueError("trace carries no per-record alpha")
            return np.asarray(record_alpha, dtype=np.float64)
        idx = bucket_index(p, self.bucket_edges)
        return np.asarray(self.bucket_alphas, dtype=np.float64)[idx]

    @staticmethod
    def for_alpha(alpha: float) -> "SmoothingPlan":
        return SmoothingPlan(mode="global", global_alpha=alpha)


def bucket_index(p: np.ndarray, edges: tuple[float, ...]) -> np.ndarray:
    """Bucket of each probability; edge values join the lower bucket, p=0 the first."""
    idx = np.searchsorted(np.asarray(edges), p, side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


def smooth_prob(p, alpha, V):
    """Mixture probability (1 - alpha) * p + alpha / V.

    Accepts scalars or arrays; the result lives in [alpha/V, 1 - alpha + alpha/V].
    """
    return (1.0 - alpha) * p + alpha / V


def interval_width(alpha: float, V: int) -> float:
    """Width in bits of the smoothed NLL interval.

    Computed as the NLL spread between the least and most likely smoothed
    outcomes, -log2(alpha/V) + log2(1 - alpha + alpha/V), which equals
    log2(1 + (1 - alpha) * V / alpha). Strictly decreasing in alpha,
    increasing in V; zero at alpha = 1.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0,1], got {alpha}")
    return -math.log2(smooth_prob(0.0, alpha, V)) + math.log2(smooth_prob(1.0, alpha, V))


def interval_widths(alphas: np.ndarray, V: int) -> np.ndarray:
    """Vectorized ``interval_width`` over per-record alphas."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise ValueError("every alpha must be in (0,1]")
    return -np.log2(smooth_prob(0.0, alphas, V)) + np.log2(smooth_prob(1.0, alphas, V))


def grid_search_global_alpha(trace, C_bits, delta, grid=DEFAULT_ALPHA_GRID,
                             subsample_correction=True):
    """Best single smoothing level for the full bound objective.

    Evaluates the bound at every grid level and returns ``(alpha, result)``
    for the minimizer; ties break toward the larger alpha (the wider
    smoothing is the more conservative certificate).
    """
    from .bounds import evaluate_bpd_bound

    best_alpha, best = None, None
    for alpha in grid:
        res = evaluate_bpd_bound(
            trace, SmoothingPlan.for_alpha(float(alpha)), C_bits=C_bits, delta=delta,
            subsample_correction=subsample_correction,
        )
        if best is None or res.bound < best.bound or (
            res.bound == best.bound and alpha > best_alpha
        ):
            best_alpha, best = float(alpha), res
    return best_alpha, best


def _quantile_edges(p: np.ndarray, n_buckets: int) -> tuple[float, ...]:
    """Equal-mass bucket edges over observed probabilities, clamped to [0, 1]."""
    qs = np.quantile(p, np.linspace(0.0, 1.0, n_buckets + 1)[1:-1])
    edges = [0.0]
    for q in qs:
        if edges[-1] < q < 1.0:
            edges.append(float(q))
    edges.append(1.0)
    return tuple(edges)


def optimize_per_token_alpha(trace, C_bits, delta, n_buckets,
                             grid=DEFAULT_ALPHA_GRID, subsample_correction=True,
                             max_rounds=20):
    """Coordinate descent over per-bucket smoothing levels.

    Buckets partition [0, 1] by the trace's raw probabilities (equal-mass
    quantile edges). All buckets start at the global grid optimum, then each
    bucket in turn is set to the grid level that minimizes the full bound
    with the other buckets held fixed. The objective only ever decreases, so
    the result is never worse than the global grid search.
    """
    from .bounds import evaluate_bpd_bound

    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    alpha0, _ = grid_search_global_alpha(
        trace, C_bits, delta, grid=grid, subsample_correction=subsample_correction
    )
    edges = _quantile_edges(trace.p, n_buckets)
    n_real = len(edges) - 1  # degenerate quantiles can merge buckets
    alphas = [alpha0] * n_real

    def evaluate(bucket_alphas):
        plan = SmoothingPlan(
            mode="per_token", bucket_edges=edges, bucket_alphas=tuple(bucket_alphas)
        )
        return plan, evaluate_bpd_bound(
            trace, plan, C_bits=C_bits, delta=delta,
            subsample_correction=subsample_correction,
        )

    plan, best = evaluate(alphas)
    for _ in range(max_rounds):
        improved = False
        for b in range(n_real):
            for cand in grid:
                if cand == alphas[b]:
                    continue
                trial = list(alphas)
                trial[b] = float(cand)
                t_plan, t_res = evaluate(trial)
                if t_res.bound < best.bound:
                    alphas, plan, best = trial, t_plan, t_res
                    improved = True
        if not improved:
            break
    return plan, best
