"""Model access: chat completion, embedding and reranking behind one contract.

Two implementations share the bookkeeping in :class:`Provider`:

* :class:`MockProvider` -- offline, deterministic, rule-driven.
* :class:`HTTPProvider` -- OpenAI-compatible ``/chat/completions`` and
  ``/embeddings`` endpoints, optional ``/rerank``.

Every call appends exactly one :class:`~hybridmem.core.CostRecord`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence
from urllib.parse import urlparse

import numpy as np

from . import mock_llm
from .config import ProviderConfig
from .core import CostLedger, CostRecord
from .text import words

logger = logging.getLogger(__name__)

_REASK = "\n\nYour previous reply was not valid JSON. Return ONLY one valid JSON value."


class ProviderError(RuntimeError):
    """Transport failure that survived all retries."""


class ConfigurationError(ValueError):
    pass


class StructuredOutputError(ProviderError):
    def __init__(self, task: str, raw: str):
        super().__init__(f"{task}: model output is not valid JSON after one re-ask")
        self.task = task
        self.raw = raw


class EmbeddingDimensionError(ProviderError):
    pass


class PromptTooLongError(ProviderError):
    pass


class TransientError(ProviderError):
    """Retryable failure (timeouts, 429, 5xx)."""


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_payload: str
    json_mode: bool = True
    task: str = "chat"
    stage: str = "generate"
    # Structured slot values; read by the mock, never sent over the wire.
    inputs: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    data: Any = None


def count_tokens(text: str) -> int:
    return len(re.findall(r"\w+|[^\w\s]", text))


def parse_json(text: str) -> Any:
    s = text.strip()
    if s.startswith("```"):
        s = re.sub(r"^```(?:json)?\s*|\s*```$", "", s)
    return json.loads(s)


class Provider:
    """Shared retry, re-ask, budget and ledger logic."""

    mode = "base"

    def __init__(self, config: ProviderConfig | None = None, ledger: CostLedger | None = None):
        self.config = config or ProviderConfig()
        self.ledger = ledger if ledger is not None else CostLedger()
        self._slots = threading.BoundedSemaphore(max(1, self.config.max_in_flight))
        self._dim: int | None = None
        self._dim_lock = threading.Lock()

    # -- subclass hooks -----------------------------------------------------
    def _complete(self, req: ChatRequest, user_payload: str) -> tuple[str, int, int, int]:
        """Return (text, prompt_tokens, completion_tokens, attempts)."""
        raise NotImplementedError

    def _embed(self, texts: list[str]) -> tuple[list[np.ndarray], int, int]:
        """Return (vectors, prompt_tokens, attempts)."""
        raise NotImplementedError

    def _rerank(self, query: str, candidates: list[str]) -> tuple[list[float], int, int] | None:
        return None

    # -- public contract ----------------------------------------------------
    def chat(self, req: ChatRequest) -> ChatResponse:
        budget = self.config.max_prompt_tokens
        if count_tokens(req.system_prompt) + count_tokens(req.user_payload) > budget:
            raise PromptTooLongError(f"{req.task}: prompt exceeds {budget} tokens")
        resp = self._call(req, req.user_payload)
        if not req.json_mode:
            return resp
        try:
            resp.data = parse_json(resp.text)
            return resp
        except (json.JSONDecodeError, ValueError):
            logger.info("%s: invalid JSON, re-asking once", req.task)
        retry = self._call(req, req.user_payload + _REASK)
        try:
            retry.data = parse_json(retry.text)
        except (json.JSONDecodeError, ValueError) as exc:
            raise StructuredOutputError(req.task, retry.text) from exc
        return retry

    def _call(self, req: ChatRequest, payload: str) -> ChatResponse:
        t0 = time.perf_counter()
        with self._slots:
            try:
                text, pt, ct, attempts = self._complete(req, payload)
            except ProviderError as exc:
                self._record(req.stage, req.task, 0, 0, t0, getattr(exc, "attempts", 1))
                raise
        self._record(req.stage, req.task, pt, ct, t0, attempts)
        return ChatResponse(text=text, prompt_tokens=pt, completion_tokens=ct)

    def embed(self, texts: Sequence[str], stage: str = "index") -> list[np.ndarray]:
        texts = list(texts)
        if not texts or any(not t or not t.strip() for t in texts):
            raise ValueError("embed needs a non-empty list of non-empty strings")
        t0 = time.perf_counter()
        with self._slots:
            vecs, pt, attempts = self._embed(texts)
        self._record(stage, "embed", pt, 0, t0, attempts)
        out = []
        for v in vecs:
            v = np.asarray(v, dtype=np.float64)
            n = float(np.linalg.norm(v))
            if n == 0.0:
                raise ProviderError("provider returned a zero embedding")
            out.append(v / n)
        self._check_dim(len(out[0]))
        return out

    def rerank(self, query: str, candidates: Sequence[str], stage: str = "retrieve") -> list[tuple[int, float]]:
        candidates = list(candidates)
        if not candidates:
            raise ValueError("rerank needs at least one candidate")
        t0 = time.perf_counter()
        with self._slots:
            res = self._rerank(query, candidates)
        if res is None:
            return self.passthrough_rerank(query, candidates, stage)
        scores, pt, attempts = res
        self._record(stage, "rerank", pt, 0, t0, attempts)
        return sorted(enumerate(scores), key=lambda p: -p[1])

    def passthrough_rerank(self, query: str, candidates: list[str], stage: str = "retrieve") -> list[tuple[int, float]]:
        vecs = self.embed([query] + candidates, stage=stage)
        q = vecs[0]
        scores = [float(np.dot(q, v)) for v in vecs[1:]]
        # sorted() is stable, so equal cosines keep input order.
        return sorted(enumerate(scores), key=lambda p: -p[1])

    @property
    def dim(self) -> int | None:
        return self._dim

    def _check_dim(self, d: int) -> None:
        with self._dim_lock:
            if self._dim is None:
                self._dim = d
            elif self._dim != d:
                raise EmbeddingDimensionError(f"embedding dimension changed {self._dim} -> {d}")

    def _record(self, stage, task, pt, ct, t0, attempts) -> None:
        wall = int(round((time.perf_counter() - t0) * 1000))
        self.ledger.append(CostRecord(stage, task, pt, ct, wall, attempts))


# ---------------------------------------------------------------------------
# Mock
# ---------------------------------------------------------------------------


def hashed_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of lowercased word unigrams and bigrams."""
    toks = words(text)
    feats = toks + [a + " " + b for a, b in zip(toks, toks[1:])]
    if not feats:
        feats = [text.strip().lower() or "<empty>"]
    v = np.zeros(dim, dtype=np.float64)
    for f in feats:
        h = hashlib.blake2b(f"{seed}|{f}".encode("utf-8"), digest_size=8).digest()
        n = int.from_bytes(h, "little")
        v[n % dim] += 1.0 if (n >> 63) & 1 else -1.0
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # Every feature cancelled out; fall back to one bucket for the whole string.
        h = int.from_bytes(hashlib.blake2b(f"{seed}|{text}".encode(), digest_size=8).digest(), "little")
        v[h % dim] = 1.0
        norm = 1.0
    return v / norm


class MockProvider(Provider):
    """Offline provider. ``overrides`` maps task name -> handler for fault injection."""

    mode = "mock"

    def __init__(
        self,
        config: ProviderConfig | None = None,
        ledger: CostLedger | None = None,
        overrides: Mapping[str, Callable[[dict], Any]] | None = None,
    ):
        super().__init__(config or ProviderConfig(mode="mock"), ledger)
        self.overrides = dict(overrides or {})

    def _complete(self, req, user_payload):
        handler = self.overrides.get(req.task) or mock_llm.HANDLERS.get(req.task)
        if handler is None:
            raise ProviderError(f"mock provider has no handler for task {req.task!r}")
        inputs = dict(req.inputs) if req.inputs else _loads_or_empty(req.user_payload)
        inputs["_reask"] = user_payload != req.user_payload
        out = handler(inputs)
        text = out if isinstance(out, str) else json.dumps(out, ensure_ascii=False, sort_keys=True)
        pt = count_tokens(req.system_prompt) + count_tokens(user_payload)
        return text, pt, count_tokens(text), 1

    def _embed(self, texts):
        dim, seed = self.config.embedding_dim, self.config.seed
        return [hashed_embedding(t, dim, seed) for t in texts], sum(count_tokens(t) for t in texts), 1


def _loads_or_empty(payload: str) -> dict:
    try:
        d = json.loads(payload)
        return d if isinstance(d, dict) else {}
    except (json.JSONDecodeError, ValueError):
        return {}


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


def _validate_url(url: str) -> str:
    p = urlparse(url)
    if p.scheme not in ("http", "https") or not p.netloc:
        raise ConfigurationError(f"malformed endpoint URL {url!r}")
    return url.rstrip("/")


class HTTPProvider(Provider):
    """OpenAI-compatible client. The API key comes from ``config.api_key_env_var``."""

    mode = "live"

    def __init__(
        self,
        config: ProviderConfig,
        ledger: CostLedger | None = None,
        transport=None,
        backoff_s: float = 0.5,
    ):
        import httpx

        super().__init__(config, ledger)
        self.base = _validate_url(config.endpoint_url)
        self.rerank_base = _validate_url(config.rerank_url) if config.rerank_url else None
        self.backoff_s = backoff_s
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            timeout=config.timeout_ms / 1000.0, headers=headers, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, url: str, body: dict) -> tuple[dict, int]:
        import httpx

        attempts = 0
        last: Exception | None = None
        for i in range(self.config.max_retries + 1):
            attempts += 1
            try:
                r = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                last = exc
            else:
                if r.status_code == 429 or r.status_code >= 500:
                    last = TransientError(f"HTTP {r.status_code} from {url}")
                elif r.status_code >= 400:
                    err = ProviderError(f"HTTP {r.status_code} from {url}: {r.text[:200]}")
                    err.attempts = attempts  # type: ignore[attr-defined]
                    raise err
                else:
                    return r.json(), attempts
            if i < self.config.max_retries:
                time.sleep(self.backoff_s * (2**i))
        err = ProviderError(f"{url}: giving up after {attempts} attempts: {last}")
        err.attempts = attempts  # type: ignore[attr-defined]
        raise err

    def _complete(self, req, user_payload):
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": user_payload})
        body: dict[str, Any] = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        if req.json_mode:
            body["response_format"] = {"type": "json_object"}
        data, attempts = self._post(f"{self.base}/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected chat response shape: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        pt = int(usage.get("prompt_tokens", count_tokens(req.system_prompt + user_payload)))
        ct = int(usage.get("completion_tokens", count_tokens(text)))
        return text, pt, ct, attempts

    def _embed(self, texts):
        data, attempts = self._post(
            f"{self.base}/embeddings", {"model": self.config.embedding_model, "input": texts}
        )
        rows = sorted(data["data"], key=lambda d: d.get("index", 0))
        if len(rows) != len(texts):
            raise ProviderError("embedding count does not match input count")
        usage = data.get("usage") or {}
        pt = int(usage.get("prompt_tokens", sum(count_tokens(t) for t in texts)))
        return [np.asarray(r["embedding"], dtype=np.float64) for r in rows], pt, attempts

    def _rerank(self, query, candidates):
        if self.rerank_base is None:
            return None
        data, attempts = self._post(
            f"{self.rerank_base}/rerank",
            {"model": self.config.rerank_model, "query": query, "documents": candidates},
        )
        scores = [0.0] * len(candidates)
        for item in data.get("results", []):
            scores[int(item["index"])] = float(item.get("relevance_score", item.get("score", 0.0)))
        usage = data.get("usage") or {}
        return scores, int(usage.get("total_tokens", 0)), attempts


def make_provider(config: ProviderConfig, ledger: CostLedger | None = None) -> Provider:
    if config.mode == "mock":
        return MockProvider(config, ledger)
    return HTTPProvider(config, ledger)
