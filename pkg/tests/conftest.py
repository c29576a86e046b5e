from __future__ import annotations

import datetime as dt

import pytest

from needscope import (
    AggregateTable,
    GeoKey,
    SearchInteraction,
    compile_detectors,
    load_reference_taxonomy,
)


@pytest.fixture(scope="session")
def taxonomy():
    return load_reference_taxonomy()


@pytest.fixture(scope="session")
def matcher(taxonomy):
    return compile_detectors(taxonomy)


def make_interaction(
    query: str,
    url: str | None = None,
    when: str = "2020-03-16T08:00:00",
    zip_code: str = "98105",
    client: str = "A1b2",
) -> SearchInteraction:
    return SearchInteraction(dt.datetime.fromisoformat(when), query, url, zip_code, client)


def flat_two_year_cube(
    needs: dict[str, int],
    volume: int = 1000,
    zips: tuple[str, ...] = ("98105",),
) -> AggregateTable:
    """Zip/day cube with the same counts on every observed day of both years.

    Constant rates make every relative-change statistic exactly zero, which
    is a convenient base to perturb from.
    """
    table = AggregateTable("zip", "day")
    ranges = (
        (dt.date(2019, 1, 1), dt.date(2019, 8, 2)),
        (dt.date(2020, 1, 1), dt.date(2020, 8, 2)),
    )
    for start, end in ranges:
        day = start
        while day <= end:
            for z in zips:
                geo = GeoKey("zip", z)
                table.add_counts("ALL", day, geo, sum(needs.values()), volume)
                for need, matched in needs.items():
                    table.add_counts(need, day, geo, matched, 0)
            day += dt.timedelta(days=1)
    return table


def set_need_on_days(
    table: AggregateTable,
    need: str,
    days,
    matched: int,
    zips: tuple[str, ...] = ("98105",),
) -> None:
    """Overwrite one need's count on the given days (volume untouched)."""
    for day in days:
        for z in zips:
            table.cells[(need, day, GeoKey("zip", z))] = matched
