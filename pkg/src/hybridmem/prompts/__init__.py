"""Prompt catalog. Templates live next to this module as ``<task>.txt``.

An override directory (``EngineConfig``-independent) may shadow any template.
Slots are written ``{name}`` and substituted literally, because several
templates contain JSON braces that ``str.format`` would choke on.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

TASKS = (
    "extraction",
    "entities",
    "consolidation",
    "planner",
    "reasoner",
    "missing_info",
    "synthesis",
    "simplify",
    "judge",
)


@lru_cache(maxsize=None)
def _builtin(task: str) -> str:
    return resources.files(__package__).joinpath(f"{task}.txt").read_text(encoding="utf-8")


class PromptCatalog:
    def __init__(self, override_dir: str | Path | None = None):
        self.override_dir = Path(override_dir) if override_dir else None

    def template(self, task: str) -> str:
        if task not in TASKS:
            raise KeyError(f"unknown prompt task {task!r}")
        if self.override_dir is not None:
            p = self.override_dir / f"{task}.txt"
            if p.exists():
                return p.read_text(encoding="utf-8")
        return _builtin(task)

    def render(self, task: str, **slots: str) -> str:
        text = self.template(task)
        for k, v in slots.items():
            text = text.replace("{" + k + "}", str(v))
        return text


DEFAULT_CATALOG = PromptCatalog()
