"""In-memory embedding table keyed by ``"<kind>:<id>"`` strings."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .providers import EmbeddingDimensionError


class VectorStore:
    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._vecs: dict[str, np.ndarray] = {}

    def put(self, key: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if self.dim is None:
            self.dim = int(vec.shape[0])
        elif vec.shape != (self.dim,):
            raise EmbeddingDimensionError(f"{key}: dimension {vec.shape} != store dimension {self.dim}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-6:
            vec = vec / norm
        self._vecs[key] = vec

    def get(self, key: str) -> np.ndarray:
        return self._vecs[key]

    def __contains__(self, key: str) -> bool:
        return key in self._vecs

    def __len__(self) -> int:
        return len(self._vecs)

    def keys(self) -> list[str]:
        return list(self._vecs)

    def similarities(self, query: np.ndarray, keys: Iterable[str]) -> dict[str, float]:
        keys = [k for k in keys if k in self._vecs]
        if not keys:
            return {}
        mat = np.stack([self._vecs[k] for k in keys])
        sims = mat @ np.asarray(query, dtype=np.float64)
        return {k: float(s) for k, s in zip(keys, sims)}

    def top(self, query: np.ndarray, keys: Iterable[str], n: int, min_sim: float | None = None) -> list[tuple[str, float]]:
        sims = self.similarities(query, keys)
        ranked = sorted(sims.items(), key=lambda kv: (-kv[1], kv[0]))
        if min_sim is not None:
            ranked = [kv for kv in ranked if kv[1] > min_sim]
        return ranked[:n]

    def matrix(self) -> tuple[list[str], np.ndarray]:
        keys = self.keys()
        if not keys:
            return keys, np.zeros((0, self.dim or 0))
        return keys, np.stack([self._vecs[k] for k in keys])

    def equals(self, other: "VectorStore") -> bool:
        if self.dim != other.dim or self.keys() != other.keys():
            return False
        return all(np.array_equal(self._vecs[k], other._vecs[k]) for k in self._vecs)
