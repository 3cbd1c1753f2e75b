import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpora import scripted_records  # noqa: E402

from hybridmem import EngineConfig, MemoryEngine  # noqa: E402


@pytest.fixture(scope="session")
def corpus_engine():
    """An engine indexed over the 200-fragment, 90-day synthetic corpus."""
    eng = MemoryEngine(EngineConfig())
    decisions, activations = [], []
    tree = eng.store.tree
    orig = tree.insert_event

    def spy(event, embedding, active, ctx):
        rep = orig(event, embedding, active, ctx)
        decisions.extend(rep.decisions)
        created = {tree.nodes[i].level for i in rep.created_node_ids}
        activations.append((event.time_range.start, set(active), created))
        return rep

    eng.store.tree.insert_event = spy
    eng.ingest(scripted_records(), "synthetic")
    eng.store.tree.insert_event = orig
    eng.decisions = decisions
    eng.activations = activations
    return eng


@pytest.fixture(autouse=True)
def ledger_reconciles(monkeypatch):
    """Every ledger built during a test must total exactly to its records."""
    from hybridmem import core

    ledgers = []
    orig = core.CostLedger.__init__

    def tracking_init(self):
        orig(self)
        ledgers.append(self)

    monkeypatch.setattr(core.CostLedger, "__init__", tracking_init)
    yield
    for led in ledgers:
        totals = led.totals()
        for stage in core.STAGES:
            mine = [r for r in led.records if r.stage == stage]
            assert totals[stage]["prompt_tokens"] == sum(r.prompt_tokens for r in mine)
            assert totals[stage]["completion_tokens"] == sum(r.completion_tokens for r in mine)
            assert totals[stage]["call_count"] == sum(r.call_count for r in mine)
            assert totals[stage]["records"] == len(mine)
