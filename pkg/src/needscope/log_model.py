"""Interaction records, their tab-separated file format, and the per-ZIP
anonymity filter applied before any analysis.

A log line holds five tab-separated fields:

    timestamp \t query \t clicked_url \t zip \t client_hash

Timestamps are ISO-8601 at second resolution. The clicked_url field is empty
when the interaction had no click. Files may carry an optional header line
and may be gzip-compressed (.gz suffix).
"""

from __future__ import annotations

import datetime as dt
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .dates import DateRange
from .util import atomic_write, open_text

HEADER_COLUMNS = ("timestamp", "query", "clicked_url", "zip", "client_hash")
HEADER_LINE = "\t".join(HEADER_COLUMNS)

_ZIP_RE = re.compile(r"^\d{5}$")
_WS_RUN = re.compile(r"\s+")


class ParseError(ValueError):
    """Malformed log line; carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


def normalize_query(text: str) -> str:
    """Lowercase and collapse runs of whitespace; applied once at ingest."""
    return _WS_RUN.sub(" ", text.strip()).lower()


@dataclass(frozen=True)
class SearchInteraction:
    timestamp: dt.datetime
    query: str
    clicked_url: str | None
    zip: str
    client_hash: str

    @property
    def date(self) -> dt.date:
        return self.timestamp.date()

    @property
    def month_key(self) -> tuple[str, int, int]:
        """Grouping key for the anonymity filter: (zip, year, month)."""
        return (self.zip, self.timestamp.year, self.timestamp.month)


def parse_interaction(line: str, line_no: int | None = None) -> SearchInteraction:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}", line_no)
    raw_ts, raw_query, raw_url, raw_zip, client_hash = fields
    try:
        timestamp = dt.datetime.fromisoformat(raw_ts)
    except ValueError:
        raise ParseError(f"malformed timestamp {raw_ts!r}", line_no) from None
    timestamp = timestamp.replace(microsecond=0)
    query = normalize_query(raw_query)
    if not query:
        raise ParseError("query empty after whitespace trimming", line_no)
    if not _ZIP_RE.match(raw_zip):
        raise ParseError(f"invalid ZIP {raw_zip!r}: expected 5 decimal digits", line_no)
    client_hash = client_hash.strip()
    if not client_hash:
        raise ParseError("empty client_hash", line_no)
    url = raw_url.strip() or None
    return SearchInteraction(timestamp, query, url, raw_zip, client_hash)


def serialize_interaction(x: SearchInteraction) -> str:
    return "\t".join(
        (
            x.timestamp.isoformat(timespec="seconds"),
            x.query,
            x.clicked_url or "",
            x.zip,
            x.client_hash,
        )
    )


def read_log(path: str | Path) -> Iterator[SearchInteraction]:
    """Stream records from one log file, skipping an optional header line."""
    with open_text(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            if line_no == 1 and line.rstrip("\n") == HEADER_LINE:
                continue
            yield parse_interaction(line, line_no)


def read_logs(paths: Iterable[str | Path]) -> Iterator[SearchInteraction]:
    for path in paths:
        yield from read_log(path)


def write_log(path: str | Path, records: Iterable[SearchInteraction], header: bool = True) -> int:
    n = 0
    with atomic_write(path) as handle:
        if header:
            handle.write(HEADER_LINE + "\n")
        for record in records:
            handle.write(serialize_interaction(record) + "\n")
            n += 1
    return n


_DEFAULT_2019 = DateRange(dt.date(2019, 1, 1), dt.date(2019, 8, 2))
_DEFAULT_2020 = DateRange(dt.date(2020, 1, 1), dt.date(2020, 8, 2))


@dataclass(frozen=True)
class ObservationConfig:
    """Observed date ranges for the two compared years plus the privacy floor."""

    range_2019: DateRange = _DEFAULT_2019
    range_2020: DateRange = _DEFAULT_2020
    anonymity_threshold: int = 100

    def __post_init__(self) -> None:
        if self.range_2019.overlaps(self.range_2020):
            raise ValueError("observation ranges must not overlap")
        if self.anonymity_threshold < 1:
            raise ValueError("anonymity_threshold must be >= 1")

    def in_range(self, d: dt.date) -> bool:
        return d in self.range_2019 or d in self.range_2020


def count_zip_months(records: Iterable[SearchInteraction]) -> Counter:
    """First pass of the two-phase anonymity filter: group sizes per (zip, month)."""
    counts: Counter = Counter()
    for record in records:
        counts[record.month_key] += 1
    return counts


def filter_with_counts(
    records: Iterable[SearchInteraction],
    counts: Counter,
    threshold: int,
) -> Iterator[SearchInteraction]:
    """Second pass: keep records whose (zip, month) group met the threshold.

    Counts must come from the same population of records or a superset pass;
    splitting one group across count passes would under-count and over-drop.
    """
    for record in records:
        if counts[record.month_key] >= threshold:
            yield record


def apply_anonymity_filter(
    records: Iterable[SearchInteraction],
    cfg: ObservationConfig,
) -> list[SearchInteraction]:
    """Drop all records of any (zip, calendar month) group smaller than the
    configured threshold. Order of surviving records is preserved.

    Buffers the input; for file-backed streams use count_zip_months plus
    filter_with_counts to keep memory flat.
    """
    buffered = list(records)
    counts = count_zip_months(buffered)
    return list(filter_with_counts(buffered, counts, cfg.anonymity_threshold))
