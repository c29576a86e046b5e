"""Need-taxonomy file format and its compilation into a fast matcher set.

Taxonomy grammar (one directive per line, "#" starts a comment):

    version <tag>
    macro <NAME> <regex>
    detector <id>
        category <one of the five need categories>
        subcategory <free text>
        logic Q | D | KD
        query <regex>          (Q and KD detectors)
        url <regex>            (D and KD detectors)

Detector blocks are introduced by an unindented "detector" line and consist
of the indented key/value lines that follow. Macros are named URL or query
fragments referenced as @NAME inside later patterns; each reference expands
to a non-capturing group. Patterns use the portable regex subset: no
backreferences and no lookaround, so the whole set can be folded into one
alternation for scanning.

Compilation builds, per field (query, url), a single union regex over all
detector patterns plus per-detector compiled patterns. The union serves as
an exact prefilter: it matches a string iff at least one branch does, so a
union miss proves no detector can fire on that field and the per-detector
confirmation loop runs only on the minority of records that hit. Matching
is case-insensitive substring search.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

CATEGORIES = (
    "SelfActualization",
    "Cognitive",
    "LoveBelonging",
    "Safety",
    "Physiological",
)
LOGICS = ("Q", "D", "KD")

# need_key namespace in aggregates is shared by detector ids, categories, and ALL
RESERVED_IDS = frozenset(CATEGORIES) | {"ALL"}

_ID_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
_MACRO_NAME_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")
_MACRO_REF_RE = re.compile(r"@([A-Z][A-Z0-9_]*)")
_FORBIDDEN_RE = re.compile(r"\(\?[=!<]|\\[1-9]")  # lookaround or backreference


class TaxonomyError(ValueError):
    """Validation failure; names the offending detector when one is known."""

    def __init__(self, message: str, detector_id: str | None = None):
        self.detector_id = detector_id
        prefix = f"detector {detector_id}: " if detector_id else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class NeedDetector:
    id: str
    category: str
    subcategory: str
    logic: str
    query_pattern: str | None = None
    url_pattern: str | None = None

    def validate(self) -> None:
        if not _ID_RE.match(self.id):
            raise TaxonomyError(f"invalid id {self.id!r}", self.id)
        if self.id in RESERVED_IDS:
            raise TaxonomyError("id collides with a reserved aggregate key", self.id)
        if self.category not in CATEGORIES:
            raise TaxonomyError(
                f"unknown category {self.category!r}; expected one of {', '.join(CATEGORIES)}",
                self.id,
            )
        if self.logic not in LOGICS:
            raise TaxonomyError(f"unknown logic {self.logic!r}", self.id)
        if not self.subcategory:
            raise TaxonomyError("missing subcategory", self.id)
        if self.logic == "Q" and (self.query_pattern is None or self.url_pattern is not None):
            raise TaxonomyError("logic Q requires a query pattern and no url pattern", self.id)
        if self.logic == "D" and (self.url_pattern is None or self.query_pattern is not None):
            raise TaxonomyError("logic D requires a url pattern and no query pattern", self.id)
        if self.logic == "KD" and (self.query_pattern is None or self.url_pattern is None):
            raise TaxonomyError("logic KD requires both query and url patterns", self.id)
        for label, pattern in (("query", self.query_pattern), ("url", self.url_pattern)):
            if pattern is None:
                continue
            if _FORBIDDEN_RE.search(pattern):
                raise TaxonomyError(
                    f"{label} pattern uses lookaround or backreferences, "
                    "which the portable subset forbids",
                    self.id,
                )
            try:
                re.compile(pattern, re.IGNORECASE)
            except re.error as exc:
                raise TaxonomyError(f"invalid {label} regex: {exc}", self.id) from None


@dataclass(frozen=True)
class NeedTaxonomy:
    version: str
    detectors: tuple[NeedDetector, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for det in self.detectors:
            det.validate()
            if det.id in seen:
                raise TaxonomyError("duplicate id", det.id)
            seen.add(det.id)

    def by_id(self, detector_id: str) -> NeedDetector:
        for det in self.detectors:
            if det.id == detector_id:
                return det
        raise KeyError(detector_id)

    def categories_present(self) -> set[str]:
        return {det.category for det in self.detectors}

    def stats(self) -> dict[str, object]:
        per_category: dict[str, int] = {name: 0 for name in CATEGORIES}
        per_logic: dict[str, int] = {name: 0 for name in LOGICS}
        for det in self.detectors:
            per_category[det.category] += 1
            per_logic[det.logic] += 1
        return {
            "version": self.version,
            "detectors": len(self.detectors),
            "per_category": per_category,
            "per_logic": per_logic,
        }


def _expand_macros(pattern: str, macros: dict[str, str], detector_id: str) -> str:
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in macros:
            raise TaxonomyError(f"unknown macro @{name}", detector_id)
        return f"(?:{macros[name]})"

    return _MACRO_REF_RE.sub(substitute, pattern)


def loads_taxonomy(text: str, source: str = "<string>") -> NeedTaxonomy:
    version = ""
    macros: dict[str, str] = {}
    detectors: list[NeedDetector] = []
    current: dict[str, str] | None = None

    def finish_current() -> None:
        nonlocal current
        if current is None:
            return
        det_id = current.pop("detector")
        det = NeedDetector(
            id=det_id,
            category=current.pop("category", ""),
            subcategory=current.pop("subcategory", ""),
            logic=current.pop("logic", ""),
            query_pattern=current.pop("query", None),
            url_pattern=current.pop("url", None),
        )
        if current:
            raise TaxonomyError(f"unknown fields {sorted(current)}", det_id)
        detectors.append(det)
        current = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indented = line[0] in (" ", "\t")
        word, _, rest = line.strip().partition(" ")
        rest = rest.strip()
        if indented:
            if current is None:
                raise TaxonomyError(f"{source}:{line_no}: field outside a detector block")
            if word in current:
                raise TaxonomyError(f"repeated field {word!r}", current["detector"])
            if word in ("query", "url"):
                rest = _expand_macros(rest, macros, current["detector"])
            current[word] = rest
            continue
        finish_current()
        if word == "version":
            version = rest
        elif word == "macro":
            name, _, body = rest.partition(" ")
            if not _MACRO_NAME_RE.match(name):
                raise TaxonomyError(f"{source}:{line_no}: invalid macro name {name!r}")
            if not body.strip():
                raise TaxonomyError(f"{source}:{line_no}: macro {name} has no pattern")
            macros[name] = _expand_macros(body.strip(), macros, f"macro {name}")
        elif word == "detector":
            if not rest:
                raise TaxonomyError(f"{source}:{line_no}: detector without an id")
            current = {"detector": rest}
        else:
            raise TaxonomyError(f"{source}:{line_no}: unknown directive {word!r}")
    finish_current()
    if not version:
        raise TaxonomyError(f"{source}: missing version directive")
    return NeedTaxonomy(version=version, detectors=tuple(detectors))


def load_taxonomy(path: str | Path) -> NeedTaxonomy:
    path = Path(path)
    return loads_taxonomy(path.read_text(encoding="utf-8"), source=str(path))


def reference_taxonomy_path() -> Path:
    """Location of the bundled reference taxonomy."""
    return Path(str(resources.files("needscope").joinpath("data/reference.needs")))


def load_reference_taxonomy() -> NeedTaxonomy:
    return load_taxonomy(reference_taxonomy_path())


class CompiledMatcherSet:
    """Immutable compiled form of a taxonomy for simultaneous evaluation.

    Guarantees observational equivalence with evaluating every detector's
    regexes independently; the union regexes only short-circuit the common
    no-match case and never change the outcome.
    """

    def __init__(self, taxonomy: NeedTaxonomy):
        self.taxonomy = taxonomy
        self._order = {det.id: i for i, det in enumerate(taxonomy.detectors)}
        self._query_detectors: list[tuple[NeedDetector, re.Pattern, re.Pattern | None]] = []
        self._url_only_detectors: list[tuple[NeedDetector, re.Pattern]] = []
        query_branches: list[str] = []
        url_branches: list[str] = []
        for det in taxonomy.detectors:
            q = re.compile(det.query_pattern, re.IGNORECASE) if det.query_pattern else None
            u = re.compile(det.url_pattern, re.IGNORECASE) if det.url_pattern else None
            if det.logic in ("Q", "KD"):
                assert q is not None
                self._query_detectors.append((det, q, u))
                query_branches.append(f"(?:{det.query_pattern})")
            else:
                assert u is not None
                self._url_only_detectors.append((det, u))
            if det.url_pattern:
                url_branches.append(f"(?:{det.url_pattern})")
        self._query_union = (
            re.compile("|".join(query_branches), re.IGNORECASE) if query_branches else None
        )
        self._url_union = (
            re.compile("|".join(url_branches), re.IGNORECASE) if url_branches else None
        )

    def match_ids(self, query: str, clicked_url: str | None) -> list[str]:
        """Detector ids firing on (query, clicked_url), in taxonomy order."""
        hits: list[str] = []
        url_may_match = bool(
            clicked_url and self._url_union and self._url_union.search(clicked_url)
        )
        if self._query_union is not None and self._query_union.search(query):
            for det, q_pat, u_pat in self._query_detectors:
                if not q_pat.search(query):
                    continue
                if det.logic == "Q":
                    hits.append(det.id)
                elif url_may_match and clicked_url and u_pat and u_pat.search(clicked_url):
                    hits.append(det.id)
        if url_may_match and clicked_url:
            for det, u_pat in self._url_only_detectors:
                if u_pat.search(clicked_url):
                    hits.append(det.id)
        hits.sort(key=self._order.__getitem__)
        return hits

    def match_ids_naive(self, query: str, clicked_url: str | None) -> list[str]:
        """Reference implementation: evaluate every detector independently.

        Kept as the differential oracle for the compiled path; do not fold
        the two routes together.
        """
        hits: list[str] = []
        for det in self.taxonomy.detectors:
            q_ok = det.query_pattern is None or bool(
                re.search(det.query_pattern, query, re.IGNORECASE)
            )
            u_ok = det.url_pattern is None or bool(
                clicked_url and re.search(det.url_pattern, clicked_url, re.IGNORECASE)
            )
            if det.logic == "Q" and q_ok and det.query_pattern is not None:
                hits.append(det.id)
            elif det.logic == "D" and u_ok and det.url_pattern is not None:
                hits.append(det.id)
            elif det.logic == "KD" and q_ok and u_ok:
                hits.append(det.id)
        return hits


def compile_detectors(taxonomy: NeedTaxonomy) -> CompiledMatcherSet:
    return CompiledMatcherSet(taxonomy)
