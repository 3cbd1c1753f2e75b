"""Deterministic synthetic conversations used across the test suite."""

from __future__ import annotations

import random

START = 1672567200  # 2023-01-01T10:00:00Z
DAY = 86400

SPEAKERS = ["Caroline", "Melanie", "Tim", "John"]
ACTIVITIES = [
    "painted a sunset at the lake",
    "went running in the park",
    "baked sourdough bread",
    "visited the art museum",
    "practiced piano for an hour",
    "read a novel about sailing",
    "adopted a kitten from the shelter",
    "planted tomatoes in the garden",
    "watched a documentary about whales",
    "fixed the old bicycle",
    "called Grandma Rose",
    "joined a pottery class",
]
PLACES = ["Paris", "Boston", "Seattle", "the cabin", "Lake Tahoe"]


def scripted_records(n: int = 200, days: int = 90, seed: int = 7) -> list[dict]:
    """``n`` single-sentence fragments spread over ``days`` days, sorted by time."""
    rng = random.Random(seed)
    offsets = sorted(rng.randrange(0, days * DAY) for _ in range(n))
    out = []
    for i, off in enumerate(offsets):
        who = rng.choice(SPEAKERS)
        act = rng.choice(ACTIVITIES)
        tail = f" near {rng.choice(PLACES)}" if rng.random() < 0.3 else ""
        out.append({"speaker": who, "timestamp": START + off, "text": f"{who} {act}{tail} (note {i})."})
    return out


def three_sessions() -> list[dict]:
    """A short three-session dialogue spanning about a month."""
    s1 = 1683453600  # 2023-05-07T10:00:00Z
    s2 = s1 + 13 * DAY
    s3 = s1 + 34 * DAY
    rows = [
        (s1, "Caroline", "I painted a sunset at the beach last weekend."),
        (s1 + 60, "Melanie", "I painted a sunset too, over the lake."),
        (s1 + 120, "Caroline", "I adopted a cat named Milo."),
        (s2, "Melanie", "I went running in the park this morning."),
        (s2 + 60, "Tim", "I practiced piano for two hours today."),
        (s2 + 120, "Caroline", "Milo knocked over my water glass."),
        (s3, "Tim", "I enjoy playing a theme from my favorite movie on the piano."),
        (s3 + 30, "Tim", "My favorite movie is Star Wars."),
        (s3 + 60, "John", "The theme from Star Wars was composed by John Williams."),
        (s3 + 120, "Melanie", "I signed up for a pottery class in Boston."),
    ]
    return [{"speaker": sp, "timestamp": ts, "text": tx, "conversation_id": "c3"} for ts, sp, tx in rows]
