"""Calendar primitives shared across the pipeline: closed date intervals,
ISO-week bucketing, and date parsing for CLI arguments and config files."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterator

ONE_DAY = dt.timedelta(days=1)


def parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise ValueError(f"invalid date {text!r}: expected YYYY-MM-DD") from exc


@dataclass(frozen=True, order=True)
class DateRange:
    """Closed interval of calendar days, start and end inclusive."""

    start: dt.date
    end: dt.date

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError(f"empty date range {self.start}..{self.end}")

    @classmethod
    def parse(cls, text: str) -> "DateRange":
        """Parse the CLI form "YYYY-MM-DD:YYYY-MM-DD"."""
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"invalid range {text!r}: expected START:END")
        return cls(parse_date(parts[0]), parse_date(parts[1]))

    def __contains__(self, d: object) -> bool:
        if not isinstance(d, dt.date):
            return False
        return self.start <= d <= self.end

    def __iter__(self) -> Iterator[dt.date]:
        d = self.start
        while d <= self.end:
            yield d
            d += ONE_DAY

    def __len__(self) -> int:
        return (self.end - self.start).days + 1

    def __str__(self) -> str:
        return f"{self.start.isoformat()}:{self.end.isoformat()}"

    def overlaps(self, other: "DateRange") -> bool:
        return self.start <= other.end and other.start <= self.end

    def shift(self, days: int) -> "DateRange":
        delta = dt.timedelta(days=days)
        return DateRange(self.start + delta, self.end + delta)

    def intersect(self, other: "DateRange") -> "DateRange | None":
        lo = max(self.start, other.start)
        hi = min(self.end, other.end)
        return DateRange(lo, hi) if lo <= hi else None


def iso_week_monday(d: dt.date) -> dt.date:
    """Monday of the ISO week containing d (weeks run Mon..Sun)."""
    return d - dt.timedelta(days=d.isoweekday() - 1)


def iso_week_label(d: dt.date) -> str:
    year, week, _ = d.isocalendar()
    return f"{year}-W{week:02d}"


def week_mondays(window: DateRange) -> list[dt.date]:
    """Mondays of all ISO weeks fully contained in the window."""
    mondays = []
    m = iso_week_monday(window.start)
    if m < window.start:
        m += dt.timedelta(days=7)
    while m + dt.timedelta(days=6) <= window.end:
        mondays.append(m)
        m += dt.timedelta(days=7)
    return mondays
