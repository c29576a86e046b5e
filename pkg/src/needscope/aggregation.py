"""The (need x time x geography) count cube with total-volume denominators.

Cells count matched interactions per need key; the volume map counts all
interactions per (date, geo) cell and is the denominator for expression
rates. Need keys share one namespace: detector ids, category names, and the
synthetic key ALL (interactions matching at least one detector). Category
cells deduplicate multi-tag interactions within the category, so every cell
satisfies matched <= volume.

Tables roll up zip -> county -> state -> national via a crosswalk, and
day -> ISO week (Mon..Sun). Rollups are plain sums, which makes them
path-independent and partition-additive by construction.
"""

from __future__ import annotations

import csv
import datetime as dt
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .classifier import TaggedInteraction
from .dates import DateRange, iso_week_monday, parse_date
from .util import atomic_write, open_text

ALL_KEY = "ALL"

GEO_LEVELS = ("zip", "county", "state", "national")
_LEVEL_ORDER = {level: i for i, level in enumerate(GEO_LEVELS)}
TIME_UNITS = ("day", "week")

_CODE_RES = {
    "zip": re.compile(r"^\d{5}$"),
    "county": re.compile(r"^\d{5}$"),
    "state": re.compile(r"^[A-Z]{2}$"),
    "national": re.compile(r"^US$"),
}

NATIONAL = None  # assigned after GeoKey is defined


class AggregationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GeoKey:
    level: str
    code: str

    def __post_init__(self) -> None:
        pattern = _CODE_RES.get(self.level)
        if pattern is None:
            raise AggregationError(f"unknown geo level {self.level!r}")
        if not pattern.match(self.code):
            raise AggregationError(f"malformed {self.level} code {self.code!r}")


NATIONAL = GeoKey("national", "US")


class GeoCrosswalk:
    """zip -> county -> state mapping loaded from a three-column CSV.

    Each ZIP maps to exactly one county and state; real ZIPs occasionally
    straddle counties, which this format deliberately ignores.
    """

    def __init__(self, rows: Iterable[tuple[str, str, str]]):
        self.zip_to_county: dict[str, str] = {}
        self.zip_to_state: dict[str, str] = {}
        self.county_to_state: dict[str, str] = {}
        for zip_code, county, state in rows:
            GeoKey("zip", zip_code)
            GeoKey("county", county)
            GeoKey("state", state)
            if zip_code in self.zip_to_county and (
                self.zip_to_county[zip_code] != county or self.zip_to_state[zip_code] != state
            ):
                raise AggregationError(f"conflicting crosswalk rows for ZIP {zip_code}")
            if county in self.county_to_state and self.county_to_state[county] != state:
                raise AggregationError(f"county {county} mapped to two states")
            self.zip_to_county[zip_code] = county
            self.zip_to_state[zip_code] = state
            self.county_to_state[county] = state

    @classmethod
    def load(cls, path: str | Path) -> "GeoCrosswalk":
        with open_text(path) as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [col.strip() for col in header] != ["zip", "county_fips", "state"]:
                raise AggregationError(
                    f"{path}: expected header zip,county_fips,state, got {header}"
                )
            return cls((row[0], row[1], row[2]) for row in reader if row)

    def map_geo(self, geo: GeoKey, target_level: str) -> GeoKey:
        if target_level == "national":
            return NATIONAL
        if geo.level == "zip":
            if geo.code not in self.zip_to_county:
                raise KeyError(geo.code)
            if target_level == "county":
                return GeoKey("county", self.zip_to_county[geo.code])
            if target_level == "state":
                return GeoKey("state", self.zip_to_state[geo.code])
        if geo.level == "county" and target_level == "state":
            if geo.code not in self.county_to_state:
                raise KeyError(geo.code)
            return GeoKey("state", self.county_to_state[geo.code])
        raise AggregationError(f"cannot map {geo.level} to {target_level}")


class AggregateTable:
    def __init__(self, geo_level: str = "zip", time_unit: str = "day"):
        if geo_level not in GEO_LEVELS:
            raise AggregationError(f"unknown geo level {geo_level!r}")
        if time_unit not in TIME_UNITS:
            raise AggregationError(f"unknown time unit {time_unit!r}")
        self.geo_level = geo_level
        self.time_unit = time_unit
        self.cells: dict[tuple[str, dt.date, GeoKey], int] = {}
        self.volume: dict[tuple[dt.date, GeoKey], int] = {}

    # -- construction ------------------------------------------------------

    def add_record(self, tagged: TaggedInteraction) -> None:
        record = tagged.interaction
        if self.geo_level != "zip" or self.time_unit != "day":
            raise AggregationError("records aggregate into zip/day tables; roll up afterwards")
        key = (record.date, GeoKey("zip", record.zip))
        self.volume[key] = self.volume.get(key, 0) + 1
        if not tagged.tags:
            return
        date, geo = key
        for tag in tagged.tags:
            self._bump(tag.detector_id, date, geo)
        for category in tagged.categories():
            self._bump(category, date, geo)
        self._bump(ALL_KEY, date, geo)

    def _bump(self, need_key: str, date: dt.date, geo: GeoKey, n: int = 1) -> None:
        cell = (need_key, date, geo)
        self.cells[cell] = self.cells.get(cell, 0) + n

    def add_counts(
        self, need_key: str, date: dt.date, geo: GeoKey, matched: int = 0, volume: int = 0
    ) -> None:
        """Bulk entry point for count-level construction (generators, readers)."""
        if matched:
            self._bump(need_key, date, geo, matched)
        if volume:
            vkey = (date, geo)
            self.volume[vkey] = self.volume.get(vkey, 0) + volume

    def merge(self, other: "AggregateTable") -> "AggregateTable":
        if (self.geo_level, self.time_unit) != (other.geo_level, other.time_unit):
            raise AggregationError("cannot merge tables with different resolutions")
        out = AggregateTable(self.geo_level, self.time_unit)
        for table in (self, other):
            for cell, count in table.cells.items():
                out.cells[cell] = out.cells.get(cell, 0) + count
            for vkey, count in table.volume.items():
                out.volume[vkey] = out.volume.get(vkey, 0) + count
        return out

    # -- access ------------------------------------------------------------

    def matched(self, need_key: str, date: dt.date, geo: GeoKey) -> int:
        return self.cells.get((need_key, date, geo), 0)

    def volume_at(self, date: dt.date, geo: GeoKey) -> int:
        return self.volume.get((date, geo), 0)

    def need_keys(self) -> list[str]:
        return sorted({cell[0] for cell in self.cells})

    def dates(self) -> list[dt.date]:
        return sorted({vkey[0] for vkey in self.volume})

    def geos(self) -> list[GeoKey]:
        return sorted({vkey[1] for vkey in self.volume})

    def total_volume(self) -> int:
        return sum(self.volume.values())


def aggregate(tagged: Iterable[TaggedInteraction]) -> AggregateTable:
    """Count tagged records into a zip-level daily table."""
    table = AggregateTable("zip", "day")
    for t in tagged:
        table.add_record(t)
    return table


def merge_tables(tables: Iterable[AggregateTable]) -> AggregateTable:
    result: AggregateTable | None = None
    for table in tables:
        result = table if result is None else result.merge(table)
    if result is None:
        raise AggregationError("no tables to merge")
    return result


def rollup(
    table: AggregateTable,
    geo_to: str | None = None,
    time_to: str | None = None,
    xwalk: GeoCrosswalk | None = None,
) -> AggregateTable:
    """Sum the table into a coarser geography and/or time unit."""
    geo_to = geo_to or table.geo_level
    time_to = time_to or table.time_unit
    if _LEVEL_ORDER[geo_to] < _LEVEL_ORDER[table.geo_level]:
        raise AggregationError(f"cannot roll {table.geo_level} down to {geo_to}")
    if time_to == "day" and table.time_unit == "week":
        raise AggregationError("cannot roll weeks back to days")
    needs_xwalk = geo_to != table.geo_level and not (geo_to == "national")
    if needs_xwalk and xwalk is None:
        raise AggregationError(f"rollup to {geo_to} requires a crosswalk")

    geo_map: dict[GeoKey, GeoKey] = {}
    missing: list[str] = []
    for _, geo in table.volume:
        if geo in geo_map:
            continue
        if geo.level == geo_to:
            geo_map[geo] = geo
        elif geo_to == "national":
            geo_map[geo] = NATIONAL
        else:
            try:
                geo_map[geo] = xwalk.map_geo(geo, geo_to)  # type: ignore[union-attr]
            except KeyError:
                missing.append(geo.code)
    if missing:
        raise AggregationError(
            f"crosswalk missing {len(missing)} {table.geo_level} code(s): "
            + ", ".join(sorted(missing)[:20])
        )

    def map_date(d: dt.date) -> dt.date:
        return iso_week_monday(d) if (time_to == "week" and table.time_unit == "day") else d

    out = AggregateTable(geo_to, time_to)
    for (need, date, geo), count in table.cells.items():
        out._bump(need, map_date(date), geo_map[geo], count)
    for (date, geo), count in table.volume.items():
        vkey = (map_date(date), geo_map[geo])
        out.volume[vkey] = out.volume.get(vkey, 0) + count
    return out


class UndefinedRateError(ValueError):
    pass


def expression_rate(table: AggregateTable, need_key: str, window: DateRange, geo: GeoKey) -> float:
    """Share of the window's query volume matching the need: sum/sum over days."""
    vol = 0
    hit = 0
    for (date, g), count in table.volume.items():
        if g == geo and date in window:
            vol += count
    if vol == 0:
        raise UndefinedRateError(f"no volume for {geo.level} {geo.code} in {window}")
    for (need, date, g), count in table.cells.items():
        if need == need_key and g == geo and date in window:
            hit += count
    return hit / vol


# -- cube persistence -------------------------------------------------------

CUBE_COLUMNS = ("need_key", "date", "geo_level", "geo_code", "matched", "volume")


def write_cube(table: AggregateTable, path: str | Path) -> int:
    """Serialize to TSV. Every (date, geo) cell emits an ALL row even with
    zero matches so volume denominators survive the round trip; other need
    rows appear only when matched > 0.
    """
    rows: list[tuple[str, dt.date, GeoKey, int]] = []
    for (date, geo) in table.volume:
        rows.append((ALL_KEY, date, geo, table.matched(ALL_KEY, date, geo)))
    for (need, date, geo), count in table.cells.items():
        if need != ALL_KEY and count > 0:
            rows.append((need, date, geo, count))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    n = 0
    with atomic_write(path) as handle:
        handle.write(f"# time_unit={table.time_unit} geo_level={table.geo_level}\n")
        handle.write("\t".join(CUBE_COLUMNS) + "\n")
        for need, date, geo, matched in rows:
            volume = table.volume_at(date, geo)
            handle.write(
                f"{need}\t{date.isoformat()}\t{geo.level}\t{geo.code}\t{matched}\t{volume}\n"
            )
            n += 1
    return n


def read_cube(path: str | Path) -> AggregateTable:
    table: AggregateTable | None = None
    seen_volume: dict[tuple[dt.date, GeoKey], int] = {}
    with open_text(path) as handle:
        meta = {"time_unit": "day", "geo_level": None}
        line_no = 0
        for line in handle:
            line_no += 1
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    key, _, value = part.partition("=")
                    if key in meta and value:
                        meta[key] = value
                continue
            fields = line.split("\t")
            if fields == list(CUBE_COLUMNS):
                continue
            if len(fields) != len(CUBE_COLUMNS):
                raise AggregationError(f"{path}:{line_no}: expected {len(CUBE_COLUMNS)} columns")
            need, date_text, level, code, matched_text, volume_text = fields
            geo = GeoKey(level, code)
            date = parse_date(date_text)
            matched = int(matched_text)
            volume = int(volume_text)
            if table is None:
                table = AggregateTable(meta["geo_level"] or level, meta["time_unit"])
            vkey = (date, geo)
            if vkey in seen_volume:
                if seen_volume[vkey] != volume:
                    raise AggregationError(
                        f"{path}:{line_no}: inconsistent volume for {code} on {date_text}"
                    )
            else:
                seen_volume[vkey] = volume
                table.volume[vkey] = volume
            if matched > 0:
                table.cells[(need, date, geo)] = matched
    if table is None:
        raise AggregationError(f"{path}: empty cube")
    return table
