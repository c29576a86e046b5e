"""Tagging interactions with need subcategories and corpus-level coverage.

An interaction can carry any number of tags (multi-label). A detector fires
when its logic is satisfied: Q needs a query match, D needs a click with a
URL match, KD needs both. Records without a click can never receive D or KD
tags.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .log_model import SearchInteraction, parse_interaction, serialize_interaction, HEADER_LINE
from .taxonomy import CompiledMatcherSet, NeedTaxonomy
from .util import atomic_write, open_text

TAGGED_HEADER = HEADER_LINE + "\ttags"


@dataclass(frozen=True, order=True)
class NeedTag:
    detector_id: str
    category: str
    subcategory: str


@dataclass(frozen=True)
class TaggedInteraction:
    interaction: SearchInteraction
    tags: tuple[NeedTag, ...]  # deduplicated by detector id, taxonomy order

    @property
    def matched(self) -> bool:
        return bool(self.tags)

    def categories(self) -> set[str]:
        return {tag.category for tag in self.tags}


def _tags_from_ids(ids: Iterable[str], taxonomy: NeedTaxonomy) -> tuple[NeedTag, ...]:
    tags = []
    seen = set()
    for det_id in ids:
        if det_id in seen:
            continue
        seen.add(det_id)
        det = taxonomy.by_id(det_id)
        tags.append(NeedTag(det.id, det.category, det.subcategory))
    return tuple(tags)


def classify(x: SearchInteraction, matcher: CompiledMatcherSet) -> tuple[NeedTag, ...]:
    """All tags firing on one interaction; empty tuple when nothing matches."""
    return _tags_from_ids(matcher.match_ids(x.query, x.clicked_url), matcher.taxonomy)


def classify_text(query: str, clicked_url: str | None, matcher: CompiledMatcherSet) -> tuple[NeedTag, ...]:
    """Classify bare (query, url) text, for callers without full records."""
    return _tags_from_ids(matcher.match_ids(query, clicked_url), matcher.taxonomy)


class CorpusClassification:
    """Iterator over tagged records that tracks coverage as it goes.

    Coverage = fraction of records carrying at least one tag; read it after
    the stream is exhausted.
    """

    def __init__(self, records: Iterable[SearchInteraction], matcher: CompiledMatcherSet):
        self._records = records
        self._matcher = matcher
        self.total = 0
        self.matched = 0

    def __iter__(self) -> Iterator[TaggedInteraction]:
        for record in self._records:
            tags = classify(record, self._matcher)
            self.total += 1
            if tags:
                self.matched += 1
            yield TaggedInteraction(record, tags)

    @property
    def coverage(self) -> float:
        return self.matched / self.total if self.total else 0.0


def classify_corpus(
    records: Iterable[SearchInteraction], matcher: CompiledMatcherSet
) -> tuple[list[TaggedInteraction], float]:
    """Classify a whole corpus; returns (tagged records, coverage)."""
    stream = CorpusClassification(records, matcher)
    tagged = list(stream)
    return tagged, stream.coverage


def serialize_tagged(t: TaggedInteraction) -> str:
    ids = ";".join(tag.detector_id for tag in t.tags)
    return serialize_interaction(t.interaction) + "\t" + ids


def write_tagged(
    path: str | Path, tagged: Iterable[TaggedInteraction], header: bool = True
) -> int:
    n = 0
    with atomic_write(path) as handle:
        if header:
            handle.write(TAGGED_HEADER + "\n")
        for t in tagged:
            handle.write(serialize_tagged(t) + "\n")
            n += 1
    return n


def read_tagged(path: str | Path, taxonomy: NeedTaxonomy) -> Iterator[TaggedInteraction]:
    """Stream a tagged TSV written by write_tagged; resolves ids via taxonomy."""
    with open_text(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line_no == 1 and line == TAGGED_HEADER:
                continue
            base, _, id_field = line.rpartition("\t")
            interaction = parse_interaction(base, line_no)
            ids = [part for part in id_field.split(";") if part]
            yield TaggedInteraction(interaction, _tags_from_ids(ids, taxonomy))
