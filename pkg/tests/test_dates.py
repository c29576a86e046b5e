from __future__ import annotations

import datetime as dt

import pytest

from needscope.dates import (
    DateRange,
    iso_week_label,
    iso_week_monday,
    parse_date,
    week_mondays,
)
from needscope.log_model import ObservationConfig
from needscope.trend import AlignmentError, align_to_prior_year


def test_parse_date():
    assert parse_date("2020-03-16") == dt.date(2020, 3, 16)
    assert parse_date(" 2020-03-16 ") == dt.date(2020, 3, 16)


@pytest.mark.parametrize("bad", ["2020-13-01", "03/16/2020", "20200316", ""])
def test_parse_date_rejects(bad):
    with pytest.raises(ValueError):
        parse_date(bad)


class TestDateRange:
    def test_contains_and_len(self):
        r = DateRange(dt.date(2020, 3, 16), dt.date(2020, 4, 12))
        assert dt.date(2020, 3, 16) in r
        assert dt.date(2020, 4, 12) in r
        assert dt.date(2020, 4, 13) not in r
        assert len(r) == 28

    def test_iteration_in_order(self):
        r = DateRange(dt.date(2020, 1, 6), dt.date(2020, 1, 8))
        assert list(r) == [dt.date(2020, 1, 6), dt.date(2020, 1, 7), dt.date(2020, 1, 8)]

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            DateRange(dt.date(2020, 2, 1), dt.date(2020, 1, 1))

    def test_parse_cli_form(self):
        r = DateRange.parse("2020-01-06:2020-02-23")
        assert r.start == dt.date(2020, 1, 6)
        assert r.end == dt.date(2020, 2, 23)
        with pytest.raises(ValueError):
            DateRange.parse("2020-01-06")

    def test_shift_and_intersect(self):
        r = DateRange(dt.date(2020, 1, 6), dt.date(2020, 2, 23))
        back = r.shift(-364)
        assert back.start == dt.date(2019, 1, 7)
        assert back.end == dt.date(2019, 2, 24)
        other = DateRange(dt.date(2020, 2, 1), dt.date(2020, 3, 1))
        overlap = r.intersect(other)
        assert overlap == DateRange(dt.date(2020, 2, 1), dt.date(2020, 2, 23))
        assert r.overlaps(other)
        assert r.intersect(DateRange(dt.date(2021, 1, 1), dt.date(2021, 1, 2))) is None


def test_iso_week_monday():
    # 2020-03-16 is a Monday; the whole week maps back to it
    monday = dt.date(2020, 3, 16)
    for offset in range(7):
        assert iso_week_monday(monday + dt.timedelta(days=offset)) == monday


def test_iso_week_label():
    assert iso_week_label(dt.date(2020, 3, 16)) == "2020-W12"
    # ISO year boundary: Jan 1, 2021 belongs to 2020-W53
    assert iso_week_label(dt.date(2021, 1, 1)) == "2020-W53"


def test_week_mondays_whole_weeks_only():
    baseline = DateRange(dt.date(2020, 1, 6), dt.date(2020, 2, 23))
    mondays = week_mondays(baseline)
    assert len(mondays) == 7
    assert mondays[0] == dt.date(2020, 1, 6)
    assert mondays[-1] == dt.date(2020, 2, 17)
    # trailing partial week is excluded
    partial = DateRange(dt.date(2020, 1, 6), dt.date(2020, 2, 25))
    assert week_mondays(partial) == mondays


class TestAlignment:
    def test_anchor_date(self):
        assert align_to_prior_year(dt.date(2020, 1, 6)) == dt.date(2019, 1, 7)

    def test_pandemic_start_alignment(self):
        aligned = align_to_prior_year(dt.date(2020, 3, 16))
        assert aligned == dt.date(2019, 3, 18)
        assert aligned.isoweekday() == 1  # both Mondays

    def test_weekday_preserved_across_full_range(self):
        day = dt.date(2020, 1, 6)
        while day <= dt.date(2020, 8, 2):
            assert align_to_prior_year(day).isoweekday() == day.isoweekday()
            day += dt.timedelta(days=1)

    def test_out_of_range_with_config(self):
        # 2020-08-02 lands on 2019-08-04, past the 2019 observation end
        cfg = ObservationConfig()
        with pytest.raises(AlignmentError):
            align_to_prior_year(dt.date(2020, 8, 2), cfg)
        # without a config the raw shift is returned
        assert align_to_prior_year(dt.date(2020, 8, 2)) == dt.date(2019, 8, 4)
