"""Policy-timing correlations and external-series comparison.

Per-state relative changes are correlated against shelter-in-place timing
covariates (start day-of-year for the short term, mandate duration for the
long term). External weekly series are converted to relative change with the
same formula and baseline as internal series, then compared week by week.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .aggregation import AggregateTable, GeoKey
from .dates import DateRange, iso_week_monday, parse_date, week_mondays
from .log_model import ObservationConfig
from .trend import (
    UndefinedChangeError,
    Windows,
    window_point_change,
    _daily_e,
    _YEAR_OFFSET,
)
from .util import open_text


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p: float
    n: int

    def __post_init__(self) -> None:
        if abs(self.r) > 1.0 + 1e-12:
            raise ValueError(f"|r| > 1: {self.r}")
        if self.n < 3:
            raise ValueError("correlation needs n >= 3")


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Sample Pearson correlation with a two-sided t-test p-value (n-2 df)."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise CorrelationError("inputs must be equal-length vectors")
    n = xa.size
    if n < 3:
        raise CorrelationError("correlation needs n >= 3")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise CorrelationError("zero variance input")
    r = float(np.dot(dx, dy) / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(scipy_stats.t.sf(abs(t), n - 2))
    return CorrelationResult(r, p, n)


# -- policy analyses ---------------------------------------------------------


@dataclass(frozen=True)
class PolicyRecord:
    state: str
    shelter_start: dt.date
    shelter_end: dt.date | None

    def __post_init__(self) -> None:
        if self.shelter_end is not None and self.shelter_end < self.shelter_start:
            raise ValueError(f"{self.state}: shelter_end before shelter_start")

    @property
    def duration_days(self) -> int | None:
        if self.shelter_end is None:
            return None
        return (self.shelter_end - self.shelter_start).days


def load_policies(path: str | Path) -> list[PolicyRecord]:
    """Policy CSV: state,shelter_start,shelter_end; the end date may be blank."""
    records: list[PolicyRecord] = []
    with open_text(path) as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [c.strip() for c in header][:3] != [
            "state",
            "shelter_start",
            "shelter_end",
        ]:
            raise CorrelationError(f"{path}: expected header state,shelter_start,shelter_end")
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            state = row[0].strip().upper()
            start = parse_date(row[1])
            end_text = row[2].strip() if len(row) > 2 else ""
            end = parse_date(end_text) if end_text else None
            records.append(PolicyRecord(state, start, end))
    return records


@dataclass(frozen=True)
class PolicyAnalysis:
    need_key: str
    covariate: str
    per_state: tuple[tuple[str, float, float], ...]  # (state, covariate value, c)
    corr: CorrelationResult
    excluded: tuple[tuple[str, str], ...]  # (state, reason)


def _states_in_cube(cube: AggregateTable) -> set[str]:
    return {geo.code for _, geo in cube.volume if geo.level == "state"}


def policy_short_term(
    cube: AggregateTable,
    policies: Iterable[PolicyRecord],
    need_key: str,
    cfg: ObservationConfig | None = None,
) -> PolicyAnalysis:
    """Per-state c for the two weeks after the mandate against the week before
    it, correlated with the mandate's start day-of-year across states.
    """
    cfg = cfg or ObservationConfig()
    if cube.geo_level != "state":
        raise CorrelationError("policy analyses need a state-level cube")
    present = _states_in_cube(cube)
    rows: list[tuple[str, float, float]] = []
    excluded: list[tuple[str, str]] = []
    for policy in sorted(policies, key=lambda p: p.state):
        if policy.state not in present:
            excluded.append((policy.state, "no data in cube"))
            continue
        t1 = DateRange(
            policy.shelter_start - dt.timedelta(days=7),
            policy.shelter_start - dt.timedelta(days=1),
        )
        t2 = DateRange(policy.shelter_start, policy.shelter_start + dt.timedelta(days=13))
        try:
            c = window_point_change(
                cube, need_key, GeoKey("state", policy.state), t1, t2, cfg=cfg
            )
        except (UndefinedChangeError, ValueError) as exc:
            excluded.append((policy.state, str(exc)))
            continue
        day_of_year = float(policy.shelter_start.timetuple().tm_yday)
        rows.append((policy.state, day_of_year, c))
    if len(rows) < 3:
        raise CorrelationError(f"only {len(rows)} usable states; need at least 3")
    corr = pearson([row[1] for row in rows], [row[2] for row in rows])
    return PolicyAnalysis(need_key, "start_day_of_year", tuple(rows), corr, tuple(excluded))


def policy_long_term(
    cube: AggregateTable,
    policies: Iterable[PolicyRecord],
    need_key: str,
    windows: Windows | None = None,
    cfg: ObservationConfig | None = None,
) -> PolicyAnalysis:
    """Per-state c for the long-term window against the pre-pandemic baseline,
    correlated with mandate duration. States without an end date are dropped.
    """
    cfg = cfg or ObservationConfig()
    windows = windows or Windows()
    if cube.geo_level != "state":
        raise CorrelationError("policy analyses need a state-level cube")
    present = _states_in_cube(cube)
    rows: list[tuple[str, float, float]] = []
    excluded: list[tuple[str, str]] = []
    for policy in sorted(policies, key=lambda p: p.state):
        if policy.duration_days is None:
            excluded.append((policy.state, "no shelter_end date"))
            continue
        if policy.state not in present:
            excluded.append((policy.state, "no data in cube"))
            continue
        try:
            c = window_point_change(
                cube,
                need_key,
                GeoKey("state", policy.state),
                windows.baseline_2020,
                windows.longterm_window,
                cfg=cfg,
            )
        except (UndefinedChangeError, ValueError) as exc:
            excluded.append((policy.state, str(exc)))
            continue
        rows.append((policy.state, float(policy.duration_days), c))
    if len(rows) < 3:
        raise CorrelationError(f"only {len(rows)} usable states; need at least 3")
    corr = pearson([row[1] for row in rows], [row[2] for row in rows])
    return PolicyAnalysis(need_key, "duration_days", tuple(rows), corr, tuple(excluded))


# -- external series ---------------------------------------------------------


@dataclass(frozen=True)
class ExternalSeries:
    label: str
    points: tuple[tuple[dt.date, float], ...]

    def __post_init__(self) -> None:
        dates = [d for d, _ in self.points]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError(f"{self.label}: dates must be strictly increasing")

    @classmethod
    def load(cls, path: str | Path, label: str | None = None) -> "ExternalSeries":
        points: list[tuple[dt.date, float]] = []
        with open_text(path) as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [c.strip() for c in header][:2] != ["date", "value"]:
                raise CorrelationError(f"{path}: expected header date,value")
            for row in reader:
                if not row or not "".join(row).strip():
                    continue
                points.append((parse_date(row[0]), float(row[1])))
        return cls(label or Path(path).stem, tuple(points))

    def weekly(self) -> dict[dt.date, float]:
        """Values keyed by ISO-week Monday; within-week duplicates summed."""
        out: dict[dt.date, float] = {}
        for d, v in self.points:
            monday = iso_week_monday(d)
            out[monday] = out.get(monday, 0.0) + v
        return out


def weekly_change_series(
    cube: AggregateTable,
    need_key: str,
    geo: GeoKey,
    windows: Windows | None = None,
    cfg: ObservationConfig | None = None,
    laplace: float = 0.0,
) -> dict[dt.date, float]:
    """Relative change per ISO week of 2020, keyed by the week's Monday.

    Weekly expression is the mean of daily expression rates over the week;
    the baseline is the mean over baseline days, per year, as in the daily
    series. Weeks with undefined terms are omitted.
    """
    windows = windows or Windows()
    cfg = cfg or ObservationConfig()
    if cube.time_unit != "day":
        raise CorrelationError("weekly change series needs a day-resolution cube")

    def mean_e(days: list[dt.date], shift: bool) -> float | None:
        values = []
        for day in days:
            actual = day - _YEAR_OFFSET if shift else day
            e = _daily_e(cube, need_key, actual, geo, laplace)
            if e is not None:
                values.append(e)
        if not values:
            return None
        m = sum(values) / len(values)
        return m if m > 0 else None

    base_days = [
        b
        for b in windows.baseline_2020
        if b in cfg.range_2020 and (b - _YEAR_OFFSET) in cfg.range_2019
    ]
    base20 = mean_e(base_days, shift=False)
    base19 = mean_e(base_days, shift=True)
    if base20 is None or base19 is None:
        raise UndefinedChangeError("undefined baseline expression")

    series: dict[dt.date, float] = {}
    for monday in week_mondays(cfg.range_2020):
        days = [monday + dt.timedelta(days=i) for i in range(7)]
        aligned_ok = all((d - _YEAR_OFFSET) in cfg.range_2019 for d in days)
        if not aligned_ok:
            continue
        e20 = mean_e(days, shift=False)
        e19 = mean_e(days, shift=True)
        if e20 is None or e19 is None:
            continue
        series[monday] = (
            math.log2(e20) - math.log2(base20) - math.log2(e19) + math.log2(base19)
        )
    return series


@dataclass(frozen=True)
class ExternalComparison:
    corr: CorrelationResult
    gaps: tuple[tuple[dt.date, float], ...]  # (week Monday, internal c - external c)
    mode: str  # "did" (two-year) or "ratio" (within-2020)
    external_change: tuple[tuple[dt.date, float], ...]


def external_change_series(
    external: ExternalSeries,
    baseline_weeks: Sequence[dt.date],
    comparison_weeks: Sequence[dt.date],
) -> tuple[dict[dt.date, float], str]:
    """Convert a raw external weekly series to relative change.

    Uses the two-year formula when the series has values for the aligned 2019
    weeks of both the baseline and every requested comparison week, otherwise
    falls back to the within-2020 ratio against the baseline mean. Returns the
    change series and the mode used.
    """
    weekly = external.weekly()
    base20_values = [weekly[w] for w in baseline_weeks if w in weekly]
    if len(base20_values) != len(baseline_weeks):
        raise CorrelationError("external series does not cover the baseline weeks")
    base20 = sum(base20_values) / len(base20_values)
    if base20 <= 0:
        raise CorrelationError("external baseline mean must be positive")

    aligned = {w: w - _YEAR_OFFSET for w in comparison_weeks}
    base19_weeks = [w - _YEAR_OFFSET for w in baseline_weeks]
    have_2019 = all(w in weekly for w in base19_weeks) and all(
        aligned[w] in weekly for w in comparison_weeks if w in weekly
    )
    out: dict[dt.date, float] = {}
    if have_2019:
        base19 = sum(weekly[w] for w in base19_weeks) / len(base19_weeks)
        if base19 <= 0:
            raise CorrelationError("external 2019 baseline mean must be positive")
        for w in comparison_weeks:
            v20 = weekly.get(w)
            v19 = weekly.get(aligned[w])
            if v20 is None or v19 is None or v20 <= 0 or v19 <= 0:
                continue
            out[w] = math.log2(v20) - math.log2(base20) - math.log2(v19) + math.log2(base19)
        return out, "did"
    for w in comparison_weeks:
        v20 = weekly.get(w)
        if v20 is None or v20 <= 0:
            continue
        out[w] = math.log2(v20) - math.log2(base20)
    return out, "ratio"


def compare_external(
    internal: dict[dt.date, float],
    external: ExternalSeries,
    windows: Windows | None = None,
    cfg: ObservationConfig | None = None,
) -> ExternalComparison:
    """Correlate an internal weekly change series with an external series.

    The external series is converted to relative change with the same
    baseline weeks (ISO weeks fully inside the baseline window); the gap per
    overlapping week is internal minus external, in log2 units.
    """
    windows = windows or Windows()
    cfg = cfg or ObservationConfig()
    baseline_weeks = week_mondays(windows.baseline_2020)
    if not baseline_weeks:
        raise CorrelationError("baseline window contains no whole ISO weeks")
    comparison_weeks = sorted(internal)
    ext_change, mode = external_change_series(external, baseline_weeks, comparison_weeks)
    overlap = [w for w in comparison_weeks if w in ext_change]
    if len(overlap) < 3:
        raise CorrelationError(f"only {len(overlap)} overlapping weeks; need at least 3")
    corr = pearson([internal[w] for w in overlap], [ext_change[w] for w in overlap])
    gaps = tuple((w, internal[w] - ext_change[w]) for w in overlap)
    return ExternalComparison(
        corr, gaps, mode, tuple((w, ext_change[w]) for w in overlap)
    )
