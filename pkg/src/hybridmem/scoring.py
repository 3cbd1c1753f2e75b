"""Closed-form relevance scores: semantic, temporal, robustness and their blends."""

from __future__ import annotations

import logging
import math

import numpy as np

from .config import ScoringConfig
from .core import TimeInterval
from .providers import EmbeddingDimensionError

logger = logging.getLogger(__name__)

DEFAULT_SCORING = ScoringConfig()


def semantic_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors, i.e. their dot product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingDimensionError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def temporal_relevance(
    i_m: TimeInterval, i_k: TimeInterval, cfg: ScoringConfig = DEFAULT_SCORING
) -> float:
    """Overlap-plus-center-distance alignment of two intervals, in [0, 1].

    The normalizer is the length of the covering hull, which keeps the center
    distance term non-negative even for disjoint intervals.
    """
    if i_m == i_k and i_m.is_point:
        return 1.0
    hull = i_m.hull(i_k).length
    inter = max(0, min(i_m.end, i_k.end) - max(i_m.start, i_k.start))
    dist = abs(i_m.center - i_k.center)
    denom = hull + cfg.epsilon
    t = cfg.lam * inter / denom + (1.0 - cfg.lam) * (1.0 - dist / denom)
    return min(1.0, max(0.0, t))


def memory_robustness(t: float, r_m: float, n_m: int, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    """Forgetting-curve retention, slowed by repeated reinforcement."""
    if n_m < 0:
        raise ValueError("n_m must be non-negative")
    elapsed = t - r_m
    if elapsed < 0:
        logger.warning("query time precedes last reinforcement by %ss; treating as fresh", -elapsed)
        elapsed = 0.0
    strength = cfg.tau_seconds * (1.0 + cfg.eta * math.log1p(n_m))
    return math.exp(-elapsed / strength)


def combined_score(s: float, t: float | None, r: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    """Final evidence-chain score; ``t=None`` means the query had no time hint."""
    return cfg.theta1 * s + cfg.theta2 * (t or 0.0) + cfg.theta3 * r


def event_level_score(
    sim: float, time: float | None, rob: float, cfg: ScoringConfig = DEFAULT_SCORING
) -> float:
    """Candidate-gathering score with the w-weights."""
    return cfg.w_sem * sim + cfg.w_time * (time or 0.0) + cfg.w_mem * rob
