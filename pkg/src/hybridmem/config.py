"""Engine configuration. Every default can be overridden from a JSON file."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .core import WINDOW_UNITS

DAY_SECONDS = 86400

# Alternative consolidation schedules for levels 2..4.
SCHEDULES = {
    "default": (0.8, 0.7, 0.6),
    "conservative": (0.9, 0.8, 0.7),
    "aggressive": (0.7, 0.6, 0.5),
}


@dataclass(frozen=True)
class LevelConfig:
    level: int
    window_unit: str
    alpha: float | None = None

    def __post_init__(self):
        if self.window_unit not in WINDOW_UNITS:
            raise ValueError(f"unknown window unit {self.window_unit!r}")
        if self.level == 1 and self.alpha is not None:
            raise ValueError("level 1 has no consolidation threshold")
        if self.level > 1 and (self.alpha is None or not 0.0 <= self.alpha <= 1.0):
            raise ValueError(f"level {self.level} needs alpha in [0, 1]")


def level_schedule(
    units: tuple[str, ...] = WINDOW_UNITS, alphas: tuple[float, ...] = SCHEDULES["default"]
) -> tuple[LevelConfig, ...]:
    if len(alphas) != len(units) - 1:
        raise ValueError("need one alpha per level above the leaves")
    levels = [LevelConfig(1, units[0])]
    levels += [LevelConfig(i + 2, u, float(a)) for i, (u, a) in enumerate(zip(units[1:], alphas))]
    check_schedule(levels)
    return tuple(levels)


def check_schedule(levels) -> None:
    order = {u: i for i, u in enumerate(WINDOW_UNITS)}
    for lo, hi in zip(levels, levels[1:]):
        if order[hi.window_unit] <= order[lo.window_unit]:
            raise ValueError("window units must strictly coarsen with level")
        if lo.alpha is not None and hi.alpha > lo.alpha:
            raise ValueError("alpha must be non-increasing with level")


@dataclass(frozen=True)
class ScoringConfig:
    theta1: float = 0.70
    theta2: float = 0.15
    theta3: float = 0.15
    lam: float = 0.5
    epsilon: float = 1e-6
    tau_seconds: float = 365 * DAY_SECONDS
    eta: float = 0.5
    w_sem: float = 0.70
    w_time: float = 0.15
    w_mem: float = 0.15

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.tau_seconds > 0 and math.isfinite(self.tau_seconds)):
            raise ValueError("tau_seconds must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        for name in ("theta1", "theta2", "theta3", "w_sem", "w_time", "w_mem"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TreeConfig:
    units: tuple[str, ...] = WINDOW_UNITS
    alphas: tuple[float, ...] = SCHEDULES["default"]
    # Also consider parents in the immediately adjacent window.
    adjacent_windows: bool = False
    # Regenerate a summary once its source_count grew by this much; 1 = every attach.
    regen_every: int | None = None

    @property
    def levels(self) -> tuple[LevelConfig, ...]:
        return level_schedule(tuple(self.units), tuple(self.alphas))


@dataclass(frozen=True)
class GraphConfig:
    jaccard_threshold: float = 0.8
    edit_threshold: float = 0.9
    salience_links: int = 3
    salient_types: tuple[str, ...] = ("person", "organization", "location")
    recent_facts: int = 10
    hops: int = 2
    fanout: int = 20


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 10
    seed_top: int = 5
    seed_min_sim: float = 0.5
    rerank: bool = True
    follow_up: bool = True
    use_graph: bool = True
    use_tree: bool = True
    use_profiles: bool = True
    # Force every sub-query to one scope (None = planner decides).
    scope_override: str | None = None


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "mock"
    endpoint_url: str = "https://api.openai.com/v1"
    api_key_env_var: str = "OPENAI_API_KEY"
    model_name: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-small"
    rerank_url: str | None = None
    rerank_model: str | None = None
    timeout_ms: int = 60000
    max_retries: int = 3
    temperature: float = 0.0
    max_in_flight: int = 4
    max_prompt_tokens: int = 120000
    embedding_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("mock", "live"):
            raise ValueError("mode must be 'mock' or 'live'")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


@dataclass(frozen=True)
class ExtractionConfig:
    neighbor_window: int = 5
    unicode_form: str = "NFKD"


@dataclass(frozen=True)
class EngineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "EngineConfig":
        d = d or {}
        parts = {}
        for f in fields(cls):
            sub = d.get(f.name) or {}
            parts[f.name] = _build(f.default_factory, sub)  # type: ignore[misc]
        return cls(**parts)

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(factory, sub: dict) -> Any:
    base = factory()
    names = {f.name for f in fields(base)}
    unknown = set(sub) - names
    if unknown:
        raise ValueError(f"unknown config keys for {type(base).__name__}: {sorted(unknown)}")
    kwargs = {}
    for k, v in sub.items():
        if isinstance(getattr(base, k), tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return type(base)(**{**{f.name: getattr(base, f.name) for f in fields(base)}, **kwargs})


def _plain(obj):
    if is_dataclass(obj):
        obj = asdict(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# Provenance strings surfaced by ``--help`` and the README table.
PROVENANCE = {
    "tree.alphas": "consolidation thresholds for week/month/year levels (0.8, 0.7, 0.6)",
    "tree.units": "day/week/month/year windows for levels 1-4",
    "scoring.w_sem/w_time/w_mem": "candidate-gathering weights (0.70, 0.15, 0.15)",
    "scoring.theta1..3": "final evidence-chain weights, defaulted to the gathering weights",
    "scoring.tau_seconds": "forgetting time scale, 365 days",
    "scoring.eta": "reinforcement strength, 0.5",
    "scoring.lam/epsilon": "overlap/center balance 0.5 and stabilizer 1e-6 (chosen)",
    "retrieval.k": "top-k budget, 10 (chosen; sweep harness covers 5-50)",
    "graph.hops/fanout": "multi-hop expansion bounds 2/20 (chosen)",
    "graph.jaccard/edit": "fuzzy entity matching 0.8/0.9 (chosen, conservative)",
}
