"""Year-aligned difference-in-differences trend estimation.

The relative-change statistic compares how a need's expression rate moved
between two periods in 2020 against how it moved between the day-aligned
periods one year earlier:

    c = [log2 E(t2, 2020) - log2 E(t1, 2020)] - [log2 E(t2, 2019) - log2 E(t1, 2019)]

Alignment subtracts exactly 364 days (52 weeks), which preserves the ISO
weekday, so weekday cycles and annual seasonality shared by both years
cancel. c is in log2 units: +1 means the need doubled relative to what the
prior year implies, and percent_change converts to a multiplicative effect.

Window expression terms are means of daily expression rates, which makes c
invariant to any per-day rescaling of total volume. The statistic is kept as
an explicit sum of four log2 terms so that swapping t1 and t2 negates it
exactly in floating point.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import AggregateTable, GeoKey, NATIONAL
from .dates import DateRange
from .log_model import ObservationConfig

YEAR_OFFSET_DAYS = 364
_YEAR_OFFSET = dt.timedelta(days=YEAR_OFFSET_DAYS)


class AlignmentError(ValueError):
    pass


class UndefinedChangeError(ValueError):
    pass


def align_to_prior_year(d: dt.date, cfg: ObservationConfig | None = None) -> dt.date:
    """The date 364 days earlier; same ISO weekday by construction.

    When an observation config is supplied the result must fall inside its
    2019 range. Spans containing Feb 29 land 364 days back regardless, which
    is a documented limitation of fixed-offset alignment.
    """
    aligned = d - _YEAR_OFFSET
    if cfg is not None and aligned not in cfg.range_2019:
        raise AlignmentError(
            f"{d.isoformat()} aligns to {aligned.isoformat()}, outside the 2019 range"
        )
    return aligned


def relative_change(
    e_t2_2020: float, e_t1_2020: float, e_t2_2019: float, e_t1_2019: float
) -> float:
    """The c statistic from four expression rates; all must be positive.

    Written as a sum of individual log2 terms: exchanging the t1 and t2
    arguments within both years flips every term's sign, so the swapped call
    returns the exact IEEE negation.
    """
    for name, value in (
        ("e_t2_2020", e_t2_2020),
        ("e_t1_2020", e_t1_2020),
        ("e_t2_2019", e_t2_2019),
        ("e_t1_2019", e_t1_2019),
    ):
        if not value > 0 or not math.isfinite(value):
            raise UndefinedChangeError(f"{name} = {value!r}; all four rates must be positive")
    # grouping matters: fl(a - b) == -fl(b - a) exactly, so each year's part
    # negates exactly under a t1/t2 swap, and so does their difference
    part_2020 = math.log2(e_t2_2020) - math.log2(e_t1_2020)
    part_2019 = math.log2(e_t2_2019) - math.log2(e_t1_2019)
    return part_2020 - part_2019


def percent_change(c: float) -> float:
    """Multiplicative effect implied by c: 2**c - 1 (0.5 means +50%)."""
    return 2.0**c - 1.0


_DEFAULT_BASELINE = DateRange(dt.date(2020, 1, 6), dt.date(2020, 2, 23))
_DEFAULT_INITIAL = DateRange(dt.date(2020, 3, 16), dt.date(2020, 4, 12))
_DEFAULT_LONGTERM = DateRange(dt.date(2020, 7, 6), dt.date(2020, 8, 2))


@dataclass(frozen=True)
class Windows:
    """Default analysis windows for the 2020 observation range."""

    baseline_2020: DateRange = _DEFAULT_BASELINE
    pandemic_start: dt.date = dt.date(2020, 3, 16)
    initial_window: DateRange = _DEFAULT_INITIAL
    longterm_window: DateRange = _DEFAULT_LONGTERM

    def validate_within(self, cfg: ObservationConfig) -> None:
        for name, window in (
            ("baseline_2020", self.baseline_2020),
            ("initial_window", self.initial_window),
            ("longterm_window", self.longterm_window),
        ):
            if window.start not in cfg.range_2020 or window.end not in cfg.range_2020:
                raise ValueError(f"{name} {window} outside the 2020 observation range")
        if self.pandemic_start not in cfg.range_2020:
            raise ValueError("pandemic_start outside the 2020 observation range")


@dataclass(frozen=True)
class RelativeChange:
    need_key: str
    t1: DateRange
    t2: DateRange
    c: float
    ci_low: float
    ci_high: float
    n_boot: int

    def __post_init__(self) -> None:
        if not (self.ci_low <= self.c <= self.ci_high):
            raise ValueError("confidence interval must contain the point estimate")


@dataclass(frozen=True)
class DailyPoint:
    date: dt.date
    c: float | None
    ci_low: float | None = None
    ci_high: float | None = None


def _daily_e(
    cube: AggregateTable, need_key: str, day: dt.date, geo: GeoKey, laplace: float
) -> float | None:
    """Expression rate for one day; None when the cell has no volume."""
    volume = cube.volume_at(day, geo)
    if volume <= 0:
        return None
    return (cube.matched(need_key, day, geo) + laplace) / volume


def _baseline_day_pairs(
    cube: AggregateTable,
    need_key: str,
    geo: GeoKey,
    baseline: DateRange,
    cfg: ObservationConfig,
    laplace: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Daily expression rates over the baseline window, as aligned year pairs.

    Only days observed in both years enter; zero-match days stay in (the
    baseline is a mean, which only needs to be positive overall).
    """
    e20: list[float] = []
    e19: list[float] = []
    for day in baseline:
        aligned = day - _YEAR_OFFSET
        if aligned not in cfg.range_2019 or day not in cfg.range_2020:
            continue
        v20 = _daily_e(cube, need_key, day, geo, laplace)
        v19 = _daily_e(cube, need_key, aligned, geo, laplace)
        if v20 is None or v19 is None:
            continue
        e20.append(v20)
        e19.append(v19)
    if not e20:
        raise UndefinedChangeError(f"no observed baseline day pairs in {baseline}")
    b20 = np.asarray(e20)
    b19 = np.asarray(e19)
    if b20.mean() <= 0 or b19.mean() <= 0:
        raise UndefinedChangeError("baseline expression is zero in at least one year")
    return b20, b19


def daily_series(
    cube: AggregateTable,
    need_key: str,
    geo: GeoKey = NATIONAL,
    windows: Windows | None = None,
    cfg: ObservationConfig | None = None,
    laplace: float = 0.0,
) -> list[DailyPoint]:
    """Per-day c against the pre-pandemic baseline, for every day of the 2020
    range. Days with a zero or unobserved expression term in either year are
    emitted as missing points, never as zeros.
    """
    windows = windows or Windows()
    cfg = cfg or ObservationConfig()
    if cube.time_unit != "day":
        raise ValueError("daily series needs a day-resolution cube")
    b20, b19 = _baseline_day_pairs(cube, need_key, geo, windows.baseline_2020, cfg, laplace)
    base20 = float(b20.mean())
    base19 = float(b19.mean())
    points: list[DailyPoint] = []
    for day in cfg.range_2020:
        aligned = day - _YEAR_OFFSET
        if aligned not in cfg.range_2019:
            points.append(DailyPoint(day, None))
            continue
        e20 = _daily_e(cube, need_key, day, geo, laplace)
        e19 = _daily_e(cube, need_key, aligned, geo, laplace)
        if not e20 or not e19:
            points.append(DailyPoint(day, None))
            continue
        points.append(DailyPoint(day, relative_change(e20, base20, e19, base19)))
    return points


def moving_average(
    values: Sequence[float | None], half_width: int = 3
) -> list[float | None]:
    """Centered moving mean over consecutive positions, [i-h, i+h].

    Missing values are excluded from each window's mean; edge windows use the
    positions that exist. A window with no available values stays missing.
    """
    if half_width < 0:
        raise ValueError("half_width must be >= 0")
    n = len(values)
    out: list[float | None] = []
    for i in range(n):
        window = [
            values[j]
            for j in range(max(0, i - half_width), min(n, i + half_width + 1))
            if values[j] is not None
        ]
        out.append(sum(window) / len(window) if window else None)
    return out


def smooth_daily_series(points: list[DailyPoint], half_width: int = 3) -> list[float | None]:
    return moving_average([p.c for p in points], half_width)


def bootstrap_percentile_ci(
    values: np.ndarray,
    n_boot: int,
    level: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean of a sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    stats = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


def window_mean_change(
    cube: AggregateTable,
    need_key: str,
    geo: GeoKey = NATIONAL,
    t1: DateRange | None = None,
    t2: DateRange | None = None,
    n_boot: int = 500,
    level: float = 0.95,
    seed: int | None = 0,
    cfg: ObservationConfig | None = None,
    resample_baseline: bool = True,
    laplace: float = 0.0,
) -> RelativeChange:
    """Mean daily c over the comparison window t2, with a percentile bootstrap CI.

    The point estimate is the mean of the valid daily c values. The bootstrap
    resamples aligned day pairs with replacement, by default in both the
    comparison window and the baseline window, because the baseline terms are
    shared by every daily c value: resampling only the daily values would
    ignore baseline sampling noise and understate the interval. Pass
    resample_baseline=False to hold the baseline fixed and resample the daily
    c values alone. Deterministic for a fixed seed. The interval is widened,
    if needed, to contain the point estimate.
    """
    windows = Windows()
    t1 = t1 or windows.baseline_2020
    t2 = t2 or windows.initial_window
    cfg = cfg or ObservationConfig()
    if cube.time_unit != "day":
        raise ValueError("window means need a day-resolution cube")
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")

    b20, b19 = _baseline_day_pairs(cube, need_key, geo, t1, cfg, laplace)
    rho: list[float] = []  # per-day log2 ratio across years
    for day in t2:
        aligned = day - _YEAR_OFFSET
        if aligned not in cfg.range_2019 or day not in cfg.range_2020:
            continue
        e20 = _daily_e(cube, need_key, day, geo, laplace)
        e19 = _daily_e(cube, need_key, aligned, geo, laplace)
        if not e20 or not e19:
            continue
        rho.append(math.log2(e20) - math.log2(e19))
    if not rho:
        raise UndefinedChangeError(f"no valid daily values in window {t2}")

    rho_arr = np.asarray(rho)
    k_hat = math.log2(b20.mean()) - math.log2(b19.mean())
    c_hat = float(rho_arr.mean()) - k_hat

    rng = np.random.default_rng(seed)
    j = rng.integers(0, rho_arr.size, size=(n_boot, rho_arr.size))
    stats = rho_arr[j].mean(axis=1)
    if resample_baseline:
        i = rng.integers(0, b20.size, size=(n_boot, b20.size))
        with np.errstate(divide="ignore"):
            k_star = np.log2(b20[i].mean(axis=1)) - np.log2(b19[i].mean(axis=1))
        stats = stats - k_star
    else:
        stats = stats - k_hat
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    ci_low = min(float(lo), c_hat)
    ci_high = max(float(hi), c_hat)
    return RelativeChange(need_key, t1, t2, c_hat, ci_low, ci_high, n_boot)


def window_point_change(
    cube: AggregateTable,
    need_key: str,
    geo: GeoKey,
    t1: DateRange,
    t2: DateRange,
    cfg: ObservationConfig | None = None,
    laplace: float = 0.0,
) -> float:
    """Point estimate only; the policy analyses use this across many geos."""
    return window_mean_change(
        cube, need_key, geo, t1, t2, n_boot=1, seed=0, cfg=cfg, laplace=laplace
    ).c


def daily_series_with_ci(
    cube: AggregateTable,
    need_key: str,
    geo_level_target: str = "national",
    windows: Windows | None = None,
    cfg: ObservationConfig | None = None,
    n_boot: int = 500,
    level: float = 0.95,
    seed: int | None = 0,
    laplace: float = 0.0,
) -> tuple[list[DailyPoint], dict[str, object]]:
    """Daily series with per-day CIs from a cluster bootstrap over ZIP cells.

    Needs a zip-resolution daily cube; the point series is the plain
    national (or requested rollup) series and each day's interval comes from
    resampling ZIP codes with replacement, recomputing that day's c and the
    baseline means per resample. Returns (points, metadata) where metadata
    records the resampling unit and parameters.
    """
    windows = windows or Windows()
    cfg = cfg or ObservationConfig()
    if cube.geo_level != "zip" or cube.time_unit != "day":
        raise ValueError("zip-cell bootstrap needs a zip-resolution daily cube")
    if geo_level_target != "national":
        raise ValueError("only the national series supports the zip-cell bootstrap")

    zips = cube.geos()
    z_count = len(zips)
    if z_count < 2:
        raise ValueError("zip-cell bootstrap needs at least 2 ZIP cells")

    days20 = [d for d in cfg.range_2020 if (d - _YEAR_OFFSET) in cfg.range_2019]
    base_days = [
        b
        for b in windows.baseline_2020
        if b in cfg.range_2020 and (b - _YEAR_OFFSET) in cfg.range_2019
    ]
    if not base_days:
        raise UndefinedChangeError("baseline window has no aligned days")

    def cell_arrays(days: list[dt.date], year_shift: bool) -> tuple[np.ndarray, np.ndarray]:
        matched = np.zeros((z_count, len(days)))
        volume = np.zeros((z_count, len(days)))
        for zi, geo in enumerate(zips):
            for di, day in enumerate(days):
                actual = day - _YEAR_OFFSET if year_shift else day
                matched[zi, di] = cube.matched(need_key, actual, geo) + laplace
                volume[zi, di] = cube.volume_at(actual, geo)
        return matched, volume

    m20, v20 = cell_arrays(days20, year_shift=False)
    m19, v19 = cell_arrays(days20, year_shift=True)
    mb20, vb20 = cell_arrays(base_days, year_shift=False)
    mb19, vb19 = cell_arrays(base_days, year_shift=True)

    with np.errstate(divide="ignore", invalid="ignore"):
        base20 = np.nanmean(mb20.sum(axis=0) / vb20.sum(axis=0))
        base19 = np.nanmean(mb19.sum(axis=0) / vb19.sum(axis=0))
    if not (base20 > 0 and base19 > 0):
        raise UndefinedChangeError(f"baseline expression undefined for {need_key}")

    def series_from(idx: np.ndarray) -> np.ndarray:
        """c per day for one resampled multiset of zips (idx shape (Z,))."""
        with np.errstate(divide="ignore", invalid="ignore"):
            e20 = m20[idx].sum(axis=0) / v20[idx].sum(axis=0)
            e19 = m19[idx].sum(axis=0) / v19[idx].sum(axis=0)
            eb20 = mb20[idx].sum(axis=0) / vb20[idx].sum(axis=0)
            eb19 = mb19[idx].sum(axis=0) / vb19[idx].sum(axis=0)
            base20 = np.nanmean(eb20)
            base19 = np.nanmean(eb19)
            c = np.log2(e20) - np.log2(base20) - np.log2(e19) + np.log2(base19)
        c[~np.isfinite(c)] = np.nan
        return c

    point_c = series_from(np.arange(z_count))
    rng = np.random.default_rng(seed)
    draws = np.empty((n_boot, len(days20)))
    for r in range(n_boot):
        draws[r] = series_from(rng.integers(0, z_count, size=z_count))
    alpha = (1.0 - level) / 2.0
    valid_share = np.mean(np.isfinite(draws), axis=0)
    # nanpercentile warns on all-NaN columns; compute only where something is finite
    lo = np.full(len(days20), np.nan)
    hi = np.full(len(days20), np.nan)
    usable = valid_share > 0.0
    if usable.any():
        with np.errstate(invalid="ignore"):
            lo[usable] = np.nanpercentile(draws[:, usable], 100.0 * alpha, axis=0)
            hi[usable] = np.nanpercentile(draws[:, usable], 100.0 * (1.0 - alpha), axis=0)

    by_day = {day: i for i, day in enumerate(days20)}
    points: list[DailyPoint] = []
    for day in cfg.range_2020:
        i = by_day.get(day)
        if i is None or not np.isfinite(point_c[i]):
            points.append(DailyPoint(day, None))
            continue
        if valid_share[i] >= 0.5 and np.isfinite(lo[i]) and np.isfinite(hi[i]):
            c = float(point_c[i])
            points.append(DailyPoint(day, c, min(float(lo[i]), c), max(float(hi[i]), c)))
        else:
            points.append(DailyPoint(day, float(point_c[i])))
    meta = {
        "ci_unit": "zip-cell cluster bootstrap",
        "n_boot": n_boot,
        "level": level,
        "zips": z_count,
        "seed": seed,
    }
    return points, meta
