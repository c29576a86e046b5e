from __future__ import annotations

import datetime as dt
import math

import numpy as np
import pytest

from needscope.aggregation import GeoKey
from needscope.dates import DateRange
from needscope.log_model import ObservationConfig
from needscope.trend import (
    DailyPoint,
    RelativeChange,
    UndefinedChangeError,
    Windows,
    daily_series,
    daily_series_with_ci,
    moving_average,
    percent_change,
    relative_change,
    smooth_daily_series,
    window_mean_change,
    window_point_change,
)

from conftest import flat_two_year_cube, set_need_on_days

Z = GeoKey("zip", "98105")
INITIAL = Windows().initial_window


class TestRelativeChange:
    def test_doubling_against_flat_prior_year(self):
        assert relative_change(0.02, 0.01, 0.01, 0.01) == pytest.approx(1.0)

    def test_matched_move_in_both_years_cancels(self):
        assert relative_change(0.02, 0.01, 0.04, 0.02) == pytest.approx(0.0)

    def test_seasonal_pattern_cancels_exactly(self):
        # identical multiplicative pattern in both years -> identical log terms
        assert relative_change(0.03, 0.01, 0.03, 0.01) == 0.0

    def test_antisymmetry_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b, c, d = np.exp(rng.uniform(math.log(1e-6), math.log(0.5), size=4))
            assert relative_change(a, b, c, d) + relative_change(b, a, d, c) == 0.0

    @pytest.mark.parametrize("bad", [0.0, -0.01, float("nan"), float("inf")])
    def test_nonpositive_rate_rejected(self, bad):
        with pytest.raises(UndefinedChangeError):
            relative_change(bad, 0.01, 0.01, 0.01)


class TestPercentChange:
    def test_zero(self):
        assert percent_change(0.0) == 0.0

    def test_halving(self):
        assert percent_change(-1.0) == pytest.approx(-0.5)

    def test_doubling(self):
        assert percent_change(1.0) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "c,pct",
        [(7.00, 126.911), (8.17, 286.019), (-1.76, -0.704)],
    )
    def test_reported_rows_within_rounding(self, c, pct):
        # inputs are 2-decimal rounded, so allow 1.5% relative slack
        assert percent_change(c) == pytest.approx(pct, rel=0.015)

    def test_monotone(self):
        xs = np.linspace(-5, 5, 101)
        ys = [percent_change(x) for x in xs]
        assert all(b > a for a, b in zip(ys, ys[1:]))


class TestMovingAverage:
    def test_constant_series_unchanged(self):
        assert moving_average([2.0] * 10) == [2.0] * 10

    def test_unit_impulse_spreads_to_one_seventh(self):
        values = [0.0] * 15
        values[7] = 1.0
        smoothed = moving_average(values)
        for i in range(4, 11):
            assert smoothed[i] == pytest.approx(1 / 7)
        assert smoothed[3] == 0.0 and smoothed[11] == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        values = list(rng.normal(size=40))
        smoothed = moving_average(values)
        for i in range(40):
            window = values[max(0, i - 3) : i + 4]
            assert smoothed[i] == pytest.approx(sum(window) / len(window))

    def test_missing_values_excluded(self):
        values = [1.0, None, 3.0]
        assert moving_average(values, half_width=1) == [1.0, 2.0, 3.0]
        assert moving_average([None, None], half_width=1) == [None, None]

    def test_half_width_zero_is_identity(self):
        values = [1.0, None, 3.0]
        assert moving_average(values, half_width=0) == values

    def test_mass_preserved_on_interior(self):
        rng = np.random.default_rng(2)
        series = [5.0] * 7 + list(rng.normal(size=20)) + [5.0] * 7
        smoothed = moving_average(series)
        interior = slice(3, len(series) - 3)
        assert sum(smoothed[interior]) == pytest.approx(sum(series[interior]))


class TestDailySeries:
    def test_flat_cube_is_exactly_zero(self):
        cube = flat_two_year_cube({"S3": 10})
        points = daily_series(cube, "S3", geo=Z)
        defined = [p.c for p in points if p.c is not None]
        assert defined and all(c == 0.0 for c in defined)

    def test_planted_step_recovered(self):
        cube = flat_two_year_cube({"S3": 10})
        set_need_on_days(cube, "S3", INITIAL, 40)
        by_date = {p.date: p.c for p in daily_series(cube, "S3", geo=Z)}
        for day in INITIAL:
            assert by_date[day] == pytest.approx(2.0, abs=1e-9)
        assert by_date[dt.date(2020, 2, 1)] == pytest.approx(0.0, abs=1e-12)

    def test_days_aligned_outside_2019_are_missing(self):
        cube = flat_two_year_cube({"S3": 10})
        by_date = {p.date: p for p in daily_series(cube, "S3", geo=Z)}
        # 364 days before Aug 1-2, 2020 falls past the 2019 range end
        assert by_date[dt.date(2020, 7, 31)].c is not None
        assert by_date[dt.date(2020, 8, 1)].c is None
        assert by_date[dt.date(2020, 8, 2)].c is None

    def test_zero_match_day_is_missing_not_zero(self):
        cube = flat_two_year_cube({"S3": 10})
        day = dt.date(2020, 5, 4)
        set_need_on_days(cube, "S3", [day], 0)
        by_date = {p.date: p.c for p in daily_series(cube, "S3", geo=Z)}
        assert by_date[day] is None
        assert by_date[day + dt.timedelta(days=1)] == 0.0

    def test_laplace_offset_defines_zero_days(self):
        cube = flat_two_year_cube({"S3": 10})
        day = dt.date(2020, 5, 4)
        set_need_on_days(cube, "S3", [day], 0)
        by_date = {p.date: p.c for p in daily_series(cube, "S3", geo=Z, laplace=0.5)}
        assert by_date[day] is not None

    def test_unknown_need_has_zero_baseline(self):
        cube = flat_two_year_cube({"S3": 10})
        with pytest.raises(UndefinedChangeError):
            daily_series(cube, "NOPE", geo=Z)

    def test_weekly_cube_rejected(self):
        from needscope.aggregation import rollup

        weekly = rollup(flat_two_year_cube({"S3": 10}), time_to="week")
        with pytest.raises(ValueError):
            daily_series(weekly, "S3", geo=Z)

    def test_smooth_daily_series_matches_moving_average(self):
        cube = flat_two_year_cube({"S3": 10})
        set_need_on_days(cube, "S3", INITIAL, 40)
        points = daily_series(cube, "S3", geo=Z)
        assert smooth_daily_series(points) == moving_average([p.c for p in points])


class TestWindowMeanChange:
    def test_constant_window_gives_degenerate_interval(self):
        cube = flat_two_year_cube({"S3": 10})
        set_need_on_days(cube, "S3", INITIAL, 40)
        result = window_mean_change(cube, "S3", geo=Z, n_boot=200, seed=5)
        assert result.c == pytest.approx(2.0, abs=1e-9)
        assert result.ci_low == pytest.approx(result.c, abs=1e-12)
        assert result.ci_high == pytest.approx(result.c, abs=1e-12)
        assert result.n_boot == 200

    def test_point_change_equals_mean_change_point(self):
        cube = flat_two_year_cube({"S3": 10})
        set_need_on_days(cube, "S3", INITIAL, 40)
        c = window_point_change(cube, "S3", Z, Windows().baseline_2020, INITIAL)
        assert c == window_mean_change(cube, "S3", geo=Z).c

    def _noisy_cube(self, seed: int):
        cube = flat_two_year_cube({"S3": 10})
        rng = np.random.default_rng(seed)
        for day in INITIAL:
            set_need_on_days(cube, "S3", [day], int(rng.integers(25, 60)))
        return cube

    def test_seeded_determinism(self):
        cube = self._noisy_cube(0)
        a = window_mean_change(cube, "S3", geo=Z, seed=42)
        b = window_mean_change(cube, "S3", geo=Z, seed=42)
        assert (a.c, a.ci_low, a.ci_high) == (b.c, b.ci_low, b.ci_high)
        other = window_mean_change(cube, "S3", geo=Z, seed=43)
        assert (a.ci_low, a.ci_high) != (other.ci_low, other.ci_high)

    def test_interval_contains_point(self):
        cube = self._noisy_cube(1)
        for resample_baseline in (True, False):
            r = window_mean_change(
                cube, "S3", geo=Z, seed=3, resample_baseline=resample_baseline
            )
            assert r.ci_low <= r.c <= r.ci_high

    def test_empty_window_rejected(self):
        cube = flat_two_year_cube({"S3": 10})
        t2 = DateRange(dt.date(2020, 8, 1), dt.date(2020, 8, 2))  # aligns past 2019 end
        with pytest.raises(UndefinedChangeError):
            window_mean_change(cube, "S3", geo=Z, t2=t2)

    def test_bad_parameters_rejected(self):
        cube = flat_two_year_cube({"S3": 10})
        with pytest.raises(ValueError):
            window_mean_change(cube, "S3", geo=Z, n_boot=0)
        with pytest.raises(ValueError):
            window_mean_change(cube, "S3", geo=Z, level=1.0)


class TestDailySeriesWithCI:
    def test_point_series_matches_plain_national_series(self):
        cube = flat_two_year_cube({"S3": 10}, zips=("98105", "98052", "10025"))
        set_need_on_days(cube, "S3", INITIAL, 40, zips=("98105", "98052", "10025"))
        from needscope.aggregation import rollup, NATIONAL

        plain = daily_series(rollup(cube, "national"), "S3", geo=NATIONAL)
        points, meta = daily_series_with_ci(cube, "S3", n_boot=50, seed=0)
        assert [p.date for p in points] == [p.date for p in plain]
        for with_ci, base in zip(points, plain):
            if base.c is None:
                assert with_ci.c is None
            else:
                assert with_ci.c == pytest.approx(base.c, abs=1e-12)
                assert with_ci.ci_low <= with_ci.c <= with_ci.ci_high
        assert meta["zips"] == 3
        assert meta["n_boot"] == 50

    def test_identical_zips_give_degenerate_intervals(self):
        cube = flat_two_year_cube({"S3": 10}, zips=("98105", "98052"))
        points, _ = daily_series_with_ci(cube, "S3", n_boot=20, seed=1)
        defined = [p for p in points if p.c is not None]
        assert defined
        for p in defined:
            assert p.ci_low == pytest.approx(0.0, abs=1e-12)
            assert p.ci_high == pytest.approx(0.0, abs=1e-12)

    def test_requires_zip_cube_and_two_zips(self):
        from needscope.aggregation import rollup

        cube = flat_two_year_cube({"S3": 10}, zips=("98105", "98052"))
        with pytest.raises(ValueError):
            daily_series_with_ci(rollup(cube, "national"), "S3")
        with pytest.raises(ValueError):
            daily_series_with_ci(flat_two_year_cube({"S3": 10}), "S3")


def test_relative_change_interval_must_contain_point():
    t1 = DateRange(dt.date(2020, 1, 6), dt.date(2020, 2, 23))
    t2 = DateRange(dt.date(2020, 3, 16), dt.date(2020, 4, 12))
    with pytest.raises(ValueError):
        RelativeChange("S3", t1, t2, c=1.0, ci_low=2.0, ci_high=3.0, n_boot=10)


def test_windows_validate_within():
    cfg = ObservationConfig(
        range_2019=DateRange(dt.date(2019, 1, 1), dt.date(2019, 8, 2)),
        range_2020=DateRange(dt.date(2020, 1, 1), dt.date(2020, 3, 1)),
    )
    with pytest.raises(ValueError, match="initial_window"):
        Windows().validate_within(cfg)
    Windows().validate_within(ObservationConfig())  # defaults fit


def test_daily_point_is_lightweight():
    p = DailyPoint(dt.date(2020, 3, 16), 1.5)
    assert p.ci_low is None and p.ci_high is None
