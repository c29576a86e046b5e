"""Validation metrics: example-based multi-label precision over a labeled
corpus, agreement between normalized trend series, and client-rate versus
demographics correlations."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .classifier import classify_text
from .correlate import CorrelationError, CorrelationResult, pearson
from .log_model import SearchInteraction
from .taxonomy import CATEGORIES, CompiledMatcherSet
from .util import open_text


class EvaluationError(ValueError):
    pass


# -- example-based precision -------------------------------------------------


def example_based_precision(
    predicted: Sequence[set[str]],
    truth: Sequence[set[str]],
    weights: Sequence[float] | None = None,
) -> float:
    """Weighted mean of |predicted & true| / |predicted| over examples with a
    non-empty prediction. Examples the classifier stayed silent on do not
    count against precision (that is recall's job, out of scope here).
    """
    if len(predicted) != len(truth):
        raise EvaluationError("predicted and truth lengths differ")
    if weights is None:
        weights = [1.0] * len(predicted)
    elif len(weights) != len(predicted):
        raise EvaluationError("weights length differs from examples")
    num = 0.0
    den = 0.0
    for pred, true, w in zip(predicted, truth, weights):
        if not pred:
            continue
        if w <= 0:
            raise EvaluationError("weights must be positive")
        num += w * (len(pred & true) / len(pred))
        den += w
    if den == 0.0:
        raise EvaluationError("no non-empty predictions to score")
    return num / den


@dataclass(frozen=True)
class LabeledTuple:
    query: str
    clicked_url: str | None
    true_categories: frozenset[str]
    weight: int

    def __post_init__(self) -> None:
        if self.weight < 1:
            raise ValueError("weight must be >= 1")
        unknown = self.true_categories - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown categories {sorted(unknown)}")


def load_labeled_corpus(path: str | Path) -> list[LabeledTuple]:
    """Labeled corpus TSV: query, clicked_url, categories (semicolon list), weight."""
    out: list[LabeledTuple] = []
    with open_text(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if line_no == 1 and fields[0] == "query":
                continue
            if len(fields) != 4:
                raise EvaluationError(f"{path}:{line_no}: expected 4 columns")
            query, url, categories_text, weight_text = fields
            categories = frozenset(c for c in categories_text.split(";") if c)
            out.append(
                LabeledTuple(query.strip().lower(), url.strip() or None, categories, int(weight_text))
            )
    if not out:
        raise EvaluationError(f"{path}: empty labeled corpus")
    return out


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("needscope").joinpath("data/labeled_corpus.tsv")))


def evaluate_precision(
    corpus: Sequence[LabeledTuple], matcher: CompiledMatcherSet
) -> tuple[float, list[dict[str, object]]]:
    """Classify each labeled tuple and score example-based precision.

    Returns the weighted precision and per-example detail rows for reporting.
    """
    predicted: list[set[str]] = []
    truth: list[set[str]] = []
    weights: list[float] = []
    details: list[dict[str, object]] = []
    for item in corpus:
        tags = classify_text(item.query, item.clicked_url, matcher)
        pred_categories = {tag.category for tag in tags}
        predicted.append(pred_categories)
        truth.append(set(item.true_categories))
        weights.append(float(item.weight))
        score = (
            len(pred_categories & item.true_categories) / len(pred_categories)
            if pred_categories
            else None
        )
        details.append(
            {
                "query": item.query,
                "clicked_url": item.clicked_url or "",
                "predicted": ";".join(sorted(pred_categories)),
                "truth": ";".join(sorted(item.true_categories)),
                "weight": item.weight,
                "precision": score,
            }
        )
    return example_based_precision(predicted, truth, weights), details


# -- trend agreement ----------------------------------------------------------


def max_normalize(values: Sequence[float]) -> list[float]:
    """Scale so the maximum is 1.0; requires a positive maximum."""
    peak = max(values, default=0.0)
    if peak <= 0:
        raise EvaluationError("max-normalization needs a positive maximum")
    return [v / peak for v in values]


def trend_agreement(
    internal: Sequence[float], external: Sequence[float]
) -> CorrelationResult:
    """Pearson correlation between two series after peak-scaling each.

    Each series is divided by its largest magnitude, which for the usual
    all-positive count series is exactly max-normalization. Scaling by a
    positive constant never changes r; it is done so intermediate values
    line up with the normalized series written to reports.
    """
    if len(internal) != len(external):
        raise EvaluationError("series lengths differ")
    if len(internal) < 3:
        raise EvaluationError("need at least 3 points")

    def _scale(values: Sequence[float]) -> list[float]:
        peak = max(abs(v) for v in values)
        if peak == 0:
            raise EvaluationError("series is identically zero")
        return [v / peak for v in values]

    return pearson(_scale(internal), _scale(external))


# -- client rate vs demographics ----------------------------------------------


@dataclass(frozen=True)
class ZipProfile:
    zip: str
    client_rate: float
    demographics: dict[str, float]

    def __post_init__(self) -> None:
        if self.client_rate < 0:
            raise ValueError("client_rate must be >= 0")


def load_demographics(path: str | Path) -> dict[str, dict[str, float]]:
    """Demographics CSV: zip plus numeric columns; returns zip -> column -> value."""
    out: dict[str, dict[str, float]] = {}
    with open_text(path) as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0].strip() != "zip":
            raise EvaluationError(f"{path}: first column must be zip")
        columns = [c.strip() for c in header[1:]]
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            zip_code = row[0].strip()
            values = {}
            for name, text in zip(columns, row[1:]):
                text = text.strip()
                if text:
                    values[name] = float(text)
            out[zip_code] = values
    if not out:
        raise EvaluationError(f"{path}: empty demographics file")
    return out


def compute_client_rates(
    records: Iterable[SearchInteraction], populations: dict[str, float]
) -> dict[str, float]:
    """Distinct clients per ZIP divided by its population column."""
    clients: dict[str, set[str]] = {}
    for record in records:
        clients.setdefault(record.zip, set()).add(record.client_hash)
    rates: dict[str, float] = {}
    for zip_code, hashes in clients.items():
        population = populations.get(zip_code)
        if population is None or population <= 0:
            continue
        rates[zip_code] = len(hashes) / population
    return rates


def build_zip_profiles(
    client_rates: dict[str, float], demographics: dict[str, dict[str, float]]
) -> list[ZipProfile]:
    profiles = []
    for zip_code in sorted(client_rates):
        if zip_code in demographics:
            profiles.append(
                ZipProfile(zip_code, client_rates[zip_code], dict(demographics[zip_code]))
            )
    return profiles


def client_rate_correlations(
    profiles: Sequence[ZipProfile],
) -> tuple[dict[str, CorrelationResult], list[str]]:
    """Pearson r between client_rate and each demographic column.

    Columns with zero variance (or too few paired values) are skipped and
    reported rather than failing the whole run.
    """
    if len(profiles) < 3:
        raise EvaluationError("need at least 3 zip profiles")
    columns: set[str] = set()
    for profile in profiles:
        columns.update(profile.demographics)
    results: dict[str, CorrelationResult] = {}
    skipped: list[str] = []
    for column in sorted(columns):
        pairs = [
            (p.client_rate, p.demographics[column])
            for p in profiles
            if column in p.demographics
        ]
        if len(pairs) < 3:
            skipped.append(column)
            continue
        try:
            results[column] = pearson([a for a, _ in pairs], [b for _, b in pairs])
        except CorrelationError:
            skipped.append(column)
    return results, skipped
