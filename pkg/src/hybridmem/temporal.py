"""Date mentions in free text: absolute dates and relative cues."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .core import TimeInterval, _epoch, window_of

MONTHS = {
    name: i
    for i, names in enumerate(
        [
            ("january", "jan"), ("february", "feb"), ("march", "mar"), ("april", "apr"),
            ("may",), ("june", "jun"), ("july", "jul"), ("august", "aug"),
            ("september", "sep", "sept"), ("october", "oct"), ("november", "nov"),
            ("december", "dec"),
        ],
        start=1,
    )
    for name in names
}
_MON = "|".join(sorted(MONTHS, key=len, reverse=True))
_ORD = r"(\d{1,2})(?:st|nd|rd|th)?"
_YEAR = r"((?:19|20)\d{2})"

_ISO = re.compile(r"\b" + _YEAR + r"-(\d{2})-(\d{2})\b")
_MDY = re.compile(r"\b(" + _MON + r")\.?\s+" + _ORD + r"\b(?:,?\s+" + _YEAR + r")?", re.I)
_DMY = re.compile(r"\b" + _ORD + r"\s+(?:of\s+)?(" + _MON + r")\b\.?(?:,?\s+" + _YEAR + r")?", re.I)
_MY = re.compile(r"\b(" + _MON + r")\.?,?\s+" + _YEAR + r"\b", re.I)
_Y = re.compile(r"\b(?:in|during|of|since)\s+" + _YEAR + r"\b", re.I)


@dataclass(frozen=True)
class DateMention:
    year: int | None
    month: int
    day: int | None
    span: str

    def key(self) -> tuple:
        return (self.month, self.day)


def find_dates(text: str) -> list[DateMention]:
    """Calendar dates (with at least month and day) mentioned in ``text``."""
    out: list[DateMention] = []
    taken: list[tuple[int, int]] = []

    def free(m) -> bool:
        return all(m.end() <= a or m.start() >= b for a, b in taken)

    for m in _ISO.finditer(text):
        out.append(DateMention(int(m.group(1)), int(m.group(2)), int(m.group(3)), m.group(0)))
        taken.append(m.span())
    for m in _MDY.finditer(text):
        if free(m):
            y = int(m.group(3)) if m.group(3) else None
            out.append(DateMention(y, MONTHS[m.group(1).lower()], int(m.group(2)), m.group(0)))
            taken.append(m.span())
    for m in _DMY.finditer(text):
        if free(m):
            y = int(m.group(3)) if m.group(3) else None
            out.append(DateMention(y, MONTHS[m.group(2).lower()], int(m.group(1)), m.group(0)))
            taken.append(m.span())
    return [d for d in out if 1 <= (d.day or 1) <= 31]


def same_date(a: DateMention, b: DateMention) -> bool:
    if a.key() != b.key():
        return False
    return a.year is None or b.year is None or a.year == b.year


def _day_interval(y: int, m: int, d: int) -> TimeInterval | None:
    try:
        start = date(y, m, d)
    except ValueError:
        return None
    return TimeInterval(_epoch(start), _epoch(start + timedelta(days=1)) - 1)


_REL_UNITS = {"day": 1, "week": 7, "month": 30, "year": 365}
_AGO = re.compile(r"\b(\d+|a|an|one|two|three|four|five|six)\s+(day|week|month|year)s?\s+ago\b", re.I)
_NUM_WORDS = {"a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6}


def resolve_hint(text: str, t: int | None = None) -> TimeInterval | None:
    """First explicit or relative time constraint in ``text`` as an interval.

    Relative cues need the query time ``t``; absolute dates without a year take
    the year of ``t`` and are skipped when ``t`` is unknown.
    """
    low = text.lower()
    for d in find_dates(text):
        year = d.year if d.year is not None else (_year_of(t) if t else None)
        if year is None:
            continue
        iv = _day_interval(year, d.month, d.day or 1)
        if iv is not None:
            return iv
    m = _MY.search(text)
    if m:
        mon, year = MONTHS[m.group(1).lower()], int(m.group(2))
        return window_of(_epoch(date(year, mon, 15)), "month")
    m = _Y.search(text)
    if m:
        return window_of(_epoch(date(int(m.group(1)), 6, 1)), "year")
    if t is None:
        return None
    day = 86400
    if re.search(r"\byesterday\b", low):
        return window_of(t - day, "day")
    if re.search(r"\btoday\b|\btonight\b|\bthis morning\b", low):
        return window_of(t, "day")
    for unit in ("week", "month", "year"):
        if re.search(rf"\blast {unit}\b|\bprevious {unit}\b", low):
            prev = window_of(t, unit).start - 1
            return window_of(prev, unit)
        if re.search(rf"\bthis {unit}\b", low):
            return window_of(t, unit)
    if re.search(r"\blast weekend\b", low):
        prev_week = window_of(window_of(t, "week").start - 1, "week")
        return TimeInterval(prev_week.start + 5 * day, prev_week.end)
    m = _AGO.search(low)
    if m:
        n = m.group(1)
        n = int(n) if n.isdigit() else _NUM_WORDS[n]
        unit = m.group(2)
        return window_of(t - n * _REL_UNITS[unit] * day, unit)
    return None


def _year_of(ts: int) -> int:
    return datetime.fromtimestamp(ts, tz=timezone.utc).year
