import json
import math
import random

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridmem.config import EngineConfig, ScoringConfig
from hybridmem.core import TimeInterval
from hybridmem.providers import EmbeddingDimensionError
from hybridmem.scoring import (
    combined_score,
    event_level_score,
    memory_robustness,
    semantic_similarity,
    temporal_relevance,
)

DAY = 86400
mpmath.mp.dps = 50


def oracle_t(a, b, lam=0.5, eps=1e-6):
    """Arbitrary-precision temporal relevance with the hull normalizer."""
    if a == b and a[0] == a[1]:
        return mpmath.mpf(1)
    a0, a1, b0, b1 = (mpmath.mpf(x) for x in (*a, *b))
    hull = max(a1, b1) - min(a0, b0)
    inter = max(mpmath.mpf(0), min(a1, b1) - max(a0, b0))
    dist = abs((a0 + a1) / 2 - (b0 + b1) / 2)
    d = hull + mpmath.mpf(eps)
    lam = mpmath.mpf(lam)
    t = lam * inter / d + (1 - lam) * (1 - dist / d)
    return min(mpmath.mpf(1), max(mpmath.mpf(0), t))


def oracle_r(elapsed, tau, eta, n):
    return mpmath.exp(-mpmath.mpf(elapsed) / (mpmath.mpf(tau) * (1 + mpmath.mpf(eta) * mpmath.log(1 + mpmath.mpf(n)))))


def test_cosine_basics():
    v = np.array([0.6, 0.8])
    assert semantic_similarity(v, v) == pytest.approx(1.0)
    assert semantic_similarity(np.array([1.0, 0]), np.array([0, 1.0])) == 0.0
    assert semantic_similarity(v, -v) == pytest.approx(-1.0)
    with pytest.raises(EmbeddingDimensionError):
        semantic_similarity(v, np.ones(3))


def test_identical_intervals():
    iv = TimeInterval(1000, 5000)
    assert temporal_relevance(iv, iv) == pytest.approx(1.0, abs=1e-6)
    p = TimeInterval.point(77)
    assert temporal_relevance(p, p) == 1.0


def test_hand_derived_overlap_case():
    # hull 15, overlap 5, centers 5 apart: 0.5*5/15 + 0.5*(1 - 5/15) = 0.5
    assert temporal_relevance(TimeInterval(0, 10), TimeInterval(5, 15)) == pytest.approx(0.5, abs=1e-6)


def test_temporal_matches_oracle_on_random_pairs():
    rng = random.Random(1234)
    for _ in range(1000):
        a0 = rng.randrange(0, 10**9)
        a1 = a0 + rng.choice([0, rng.randrange(1, 10**7)])
        b0 = rng.randrange(0, 10**9) if rng.random() < 0.5 else a0 + rng.randrange(-10**6, 10**6)
        b0 = max(0, b0)
        b1 = b0 + rng.choice([0, rng.randrange(1, 10**7)])
        lam = rng.random()
        cfg = ScoringConfig(lam=lam)
        got = temporal_relevance(TimeInterval(a0, a1), TimeInterval(b0, b1), cfg)
        assert 0.0 <= got <= 1.0
        assert abs(got - float(oracle_t((a0, a1), (b0, b1), lam))) < 1e-9


@given(st.integers(0, 10**6), st.integers(0, 10**5), st.integers(0, 10**6), st.integers(0, 10**5))
def test_temporal_symmetric_and_bounded(a0, la, b0, lb):
    a, b = TimeInterval(a0, a0 + la), TimeInterval(b0, b0 + lb)
    t = temporal_relevance(a, b)
    assert 0.0 <= t <= 1.0
    assert t == pytest.approx(temporal_relevance(b, a), abs=1e-12)


def test_robustness_one_year_anchor():
    r = memory_robustness(365 * DAY, 0, 0)
    assert r == pytest.approx(0.367879, abs=1e-4)
    assert memory_robustness(5, 5, 3) == 1.0


def test_robustness_reinforced_anchor():
    n = math.e - 1  # ln(1 + n) == 1
    got = memory_robustness(365 * DAY, 0, n)
    want = mpmath.exp(mpmath.mpf(-1) / mpmath.mpf("1.5"))
    assert got == pytest.approx(float(want), abs=1e-9)
    assert got == pytest.approx(0.5134, abs=1e-4)


def test_robustness_matches_oracle():
    rng = random.Random(99)
    for _ in range(1000):
        elapsed = rng.uniform(0, 5 * 365 * DAY)
        tau = rng.uniform(DAY, 1000 * DAY)
        eta = rng.uniform(0, 2)
        n = rng.randrange(0, 50)
        cfg = ScoringConfig(tau_seconds=tau, eta=eta)
        assert abs(memory_robustness(elapsed, 0, n, cfg) - float(oracle_r(elapsed, tau, eta, n))) < 1e-9


def test_robustness_future_reinforcement_clamps(caplog):
    with caplog.at_level("WARNING"):
        assert memory_robustness(100, 200, 0) == 1.0
    assert "precedes" in caplog.text


@given(st.floats(0, 10 * 365 * DAY), st.integers(0, 100))
def test_robustness_monotone(elapsed, n):
    assert memory_robustness(elapsed + DAY, 0, n) <= memory_robustness(elapsed, 0, n)
    assert memory_robustness(elapsed, 0, n + 1) >= memory_robustness(elapsed, 0, n)


def test_combined_anchors():
    assert combined_score(1, 1, 1) == pytest.approx(1.0)
    # 0.7*0.5 + 0.15*0 + 0.15*0.3679 = 0.405185
    assert combined_score(0.5, None, 0.3679) == pytest.approx(0.4052, abs=1e-4)
    cfg = ScoringConfig(theta1=1, theta2=0, theta3=0)
    assert combined_score(0.42, 0.9, 0.1, cfg) == 0.42


def test_event_level_defaults():
    cfg = ScoringConfig()
    assert cfg.w_sem + cfg.w_time + cfg.w_mem == pytest.approx(1.0)
    assert event_level_score(0.5, None, 0.4) == pytest.approx(0.70 * 0.5 + 0.15 * 0.4)
    assert event_level_score(1, None, 0) == pytest.approx(0.70)


def test_defaults_loaded_from_config(tmp_path):
    path = tmp_path / "cfg.json"
    EngineConfig().save(path)
    s = EngineConfig.load(path).scoring
    assert (s.theta1, s.theta2, s.theta3) == (0.70, 0.15, 0.15)
    assert json.loads(path.read_text())["scoring"]["theta1"] == 0.70


def test_monotone_and_scale_invariant_argmax():
    rng = np.random.default_rng(5)
    cfg = ScoringConfig()
    tuples = rng.uniform(0, 1, size=(10_000, 3))
    base = np.array([combined_score(s, t, r, cfg) for s, t, r in tuples])
    # raising any one component never lowers the score
    for j in range(3):
        bumped = tuples.copy()
        bumped[:, j] = np.minimum(1.0, bumped[:, j] + rng.uniform(0, 0.5, size=len(tuples)))
        after = np.array([combined_score(s, t, r, cfg) for s, t, r in bumped])
        assert np.all(after >= base - 1e-15)
    # scaling all weights by c > 0 keeps the best candidate in every group of 10
    groups = tuples.reshape(1000, 10, 3)
    for c in (0.01, 3.0, 250.0):
        scaled = ScoringConfig(theta1=c * 0.70, theta2=c * 0.15, theta3=c * 0.15)
        for g in groups:
            a = max(range(10), key=lambda i: combined_score(*g[i], cfg))
            b = max(range(10), key=lambda i: combined_score(*g[i], scaled))
            assert a == b
