"""Conversational memory engine: a temporal-semantic consolidation tree plus an
entity graph, queried through planned, multi-hop, temporally aware retrieval."""

from .config import EngineConfig, GraphConfig, ProviderConfig, RetrievalConfig, ScoringConfig, TreeConfig
from .core import CostLedger, CostRecord, MemoryEvent, MemoryFragment, TimeInterval, make_fragment, window_of
from .engine import IngestReport, MemoryEngine
from .estimator import HybridMemory
from .evaluation import EvalReport, load_dataset, normalize, run_eval, token_f1
from .providers import HTTPProvider, MockProvider, make_provider
from .retrieval import EvidenceItem, QueryResult, SubAnswer
from .scoring import combined_score, event_level_score, memory_robustness, semantic_similarity, temporal_relevance
from .store import MemoryStore

__version__ = "0.1.0"

__all__ = [
    "CostLedger",
    "CostRecord",
    "EngineConfig",
    "EvalReport",
    "EvidenceItem",
    "GraphConfig",
    "HTTPProvider",
    "HybridMemory",
    "IngestReport",
    "MemoryEngine",
    "MemoryEvent",
    "MemoryFragment",
    "MemoryStore",
    "MockProvider",
    "ProviderConfig",
    "QueryResult",
    "RetrievalConfig",
    "ScoringConfig",
    "SubAnswer",
    "TimeInterval",
    "TreeConfig",
    "combined_score",
    "event_level_score",
    "load_dataset",
    "make_fragment",
    "make_provider",
    "memory_robustness",
    "normalize",
    "run_eval",
    "semantic_similarity",
    "temporal_relevance",
    "token_f1",
    "window_of",
]
