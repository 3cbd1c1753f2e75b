"""Estimator-style facade: ``fit`` on conversation fragments, ``predict`` answers."""

from __future__ import annotations

from typing import Any, Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .config import EngineConfig, ProviderConfig, RetrievalConfig, ScoringConfig, TreeConfig, GraphConfig
from .core import ValidationError, parse_timestamp
from .evaluation import token_f1


def check_fragments(X: Any) -> list[dict]:
    """Validate fit input: a non-empty sequence of fragment mappings."""
    if isinstance(X, (str, bytes)) or isinstance(X, Mapping):
        raise TypeError("X must be a sequence of fragment records, not a single value")
    rows = list(X)
    if not rows:
        raise ValueError("X is empty")
    out = []
    for i, r in enumerate(rows):
        if not isinstance(r, Mapping):
            raise TypeError(f"X[{i}] is {type(r).__name__}, expected a mapping")
        if not isinstance(r.get("text"), str) or not r["text"].strip():
            raise ValidationError(f"X[{i}].text", "empty after trimming")
        if "timestamp" not in r and "ts" not in r:
            raise ValidationError(f"X[{i}].timestamp", "missing")
        out.append(dict(r))
    return out


def check_queries(X: Any) -> list[tuple[str, int | None]]:
    """Validate predict input: strings or ``{"question", "question_time"?}`` mappings."""
    if isinstance(X, (str, bytes)):
        X = [X]
    out = []
    for i, q in enumerate(X):
        if isinstance(q, str):
            text, t = q, None
        elif isinstance(q, Mapping):
            text = q.get("question")
            raw_t = q.get("question_time", q.get("time"))
            t = parse_timestamp(raw_t, f"X[{i}].question_time") if raw_t is not None else None
        else:
            raise TypeError(f"X[{i}] is {type(q).__name__}, expected str or mapping")
        if not isinstance(text, str) or not text.strip():
            raise ValidationError(f"X[{i}].question", "empty")
        out.append((text, t))
    return out


class HybridMemory(BaseEstimator):
    """Memory engine with flat hyperparameters so it plugs into sklearn tooling.

    ``fit`` indexes fragments, ``predict`` answers questions and ``score``
    returns mean token F1 against gold answers.
    """

    def __init__(
        self,
        mode: str = "mock",
        k: int = 10,
        alphas: Sequence[float] = (0.8, 0.7, 0.6),
        theta: Sequence[float] = (0.70, 0.15, 0.15),
        lam: float = 0.5,
        tau_days: float = 365.0,
        eta: float = 0.5,
        hops: int = 2,
        fanout: int = 20,
        rerank: bool = True,
        follow_up: bool = True,
        embedding_dim: int = 256,
        seed: int = 0,
        endpoint_url: str = "https://api.openai.com/v1",
        model_name: str = "gpt-4o-mini",
        conversation_id: str = "default",
    ):
        self.mode = mode
        self.k = k
        self.alphas = alphas
        self.theta = theta
        self.lam = lam
        self.tau_days = tau_days
        self.eta = eta
        self.hops = hops
        self.fanout = fanout
        self.rerank = rerank
        self.follow_up = follow_up
        self.embedding_dim = embedding_dim
        self.seed = seed
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.conversation_id = conversation_id

    def to_config(self) -> EngineConfig:
        t1, t2, t3 = self.theta
        return EngineConfig(
            provider=ProviderConfig(
                mode=self.mode,
                endpoint_url=self.endpoint_url,
                model_name=self.model_name,
                embedding_dim=self.embedding_dim,
                seed=self.seed,
            ),
            tree=TreeConfig(alphas=tuple(self.alphas)),
            graph=GraphConfig(hops=self.hops, fanout=self.fanout),
            scoring=ScoringConfig(
                theta1=t1, theta2=t2, theta3=t3, lam=self.lam, tau_seconds=self.tau_days * 86400, eta=self.eta
            ),
            retrieval=RetrievalConfig(k=self.k, rerank=self.rerank, follow_up=self.follow_up),
        )

    @classmethod
    def from_config(cls, config: EngineConfig) -> "HybridMemory":
        s = config.scoring
        return cls(
            mode=config.provider.mode,
            k=config.retrieval.k,
            alphas=tuple(config.tree.alphas),
            theta=(s.theta1, s.theta2, s.theta3),
            lam=s.lam,
            tau_days=s.tau_seconds / 86400,
            eta=s.eta,
            hops=config.graph.hops,
            fanout=config.graph.fanout,
            rerank=config.retrieval.rerank,
            follow_up=config.retrieval.follow_up,
            embedding_dim=config.provider.embedding_dim,
            seed=config.provider.seed,
            endpoint_url=config.provider.endpoint_url,
            model_name=config.provider.model_name,
        )

    def fit(self, X: Iterable[Mapping], y=None) -> "HybridMemory":
        from .engine import MemoryEngine

        rows = check_fragments(X)
        self.engine_ = MemoryEngine(self.to_config())
        self.engine_.ingest(rows, self.conversation_id)
        self.n_fragments_ = len(self.engine_.store.fragments)
        return self

    def partial_fit(self, X: Iterable[Mapping], y=None) -> "HybridMemory":
        if not hasattr(self, "engine_"):
            return self.fit(X, y)
        self.engine_.ingest(check_fragments(X), self.conversation_id)
        self.n_fragments_ = len(self.engine_.store.fragments)
        return self

    def query(self, question: str, t: int | None = None):
        check_is_fitted(self, "engine_")
        return self.engine_.query(question, t=t, k=self.k)

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "engine_")
        return [self.engine_.query(q, t=t, k=self.k).final_answer for q, t in check_queries(X)]

    def score(self, X, y) -> float:
        preds = self.predict(X)
        golds = list(y)
        if len(golds) != len(preds):
            raise ValueError(f"{len(preds)} questions but {len(golds)} gold answers")
        return sum(token_f1(p, g).f1 for p, g in zip(preds, golds)) / max(1, len(golds))


__all__ = ["HybridMemory", "NotFittedError", "check_fragments", "check_queries"]
