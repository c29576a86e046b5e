"""Seeded synthetic-log generator: the ground-truth oracle for the pipeline.

Generation is count-first. For every (zip, day) cell the generator computes
an expected total volume W and an expected matched count per configured
detector, draws integer counts (Poisson around the expectation, or
deterministic rounding in exact mode), and only then materializes that many
records from per-detector template pools. Ground truth therefore equals the
emitted counts exactly, never an estimate.

Expectations factor as:

    W(zip, d)      = base_volume * weekday[d] * season(phase(d)) * drift(d)
    matched(n, d)  = W * rate_n(phase(d)) * shock_multiplier(n, zip, d)
    background     = W - sum_n matched(n, d)

phase(d) counts days since Jan 1, 2019 modulo 364, so dates that are 364
days apart share the same seasonal and weekday factors in both years. Only
the volume drift references the absolute date, and it scales matched counts
and volume together, which leaves expression rates untouched. A planted
shock with multiplier m is then the only year-asymmetric signal in a need's
expression rate, and the implied relative change over its window is exactly
log2(m).

Randomness is drawn from per-(zip, year, month) substreams, so parallel and
serial generation emit identical files for one seed.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # py3.10
    import tomli as tomllib

from .aggregation import ALL_KEY, AggregateTable, GeoKey
from .dates import DateRange
from .log_model import ObservationConfig
from .taxonomy import (
    CompiledMatcherSet,
    NeedTaxonomy,
    compile_detectors,
    load_reference_taxonomy,
    load_taxonomy,
)
from .util import ConfigError, atomic_write, open_text

PHASE_EPOCH = dt.date(2019, 1, 1)
PHASE_PERIOD = 364
BACKGROUND = "BACKGROUND"
VOLUME_KEY = "VOLUME"

_MAX_TOTAL_SHARE = 0.95


@dataclass(frozen=True)
class ZipSpec:
    zip: str
    county: str
    state: str
    base_volume: float


@dataclass(frozen=True)
class NeedSpec:
    detector: str
    rate: float


@dataclass(frozen=True)
class Shock:
    need: str
    window: DateRange
    multiplier: float
    zips: frozenset[str] | None = None  # None means every zip

    def applies(self, need: str, zip_code: str, day: dt.date) -> bool:
        if need != self.need or day not in self.window:
            return False
        return self.zips is None or zip_code in self.zips


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    zips: tuple[ZipSpec, ...]
    needs: tuple[NeedSpec, ...]
    observation: ObservationConfig = ObservationConfig()
    weekday_multipliers: tuple[float, ...] = (1.0,) * 7
    volume_amplitude: float = 0.0
    rate_amplitude: float = 0.0
    phase_shift_days: float = 0.0
    daily_growth: float = 0.0
    shocks: tuple[Shock, ...] = ()
    exact: bool = False
    taxonomy_path: str | None = None  # None selects the bundled taxonomy
    templates_path: str | None = None

    def validate(self, taxonomy: NeedTaxonomy) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.zips:
            raise ConfigError("at least one zip is required")
        if len({z.zip for z in self.zips}) != len(self.zips):
            raise ConfigError("duplicate zip entries")
        for z in self.zips:
            GeoKey("zip", z.zip)
            GeoKey("county", z.county)
            GeoKey("state", z.state)
            if z.base_volume <= 0:
                raise ConfigError(f"zip {z.zip}: base_volume must be positive")
        if not self.needs:
            raise ConfigError("at least one need is required")
        if len({n.detector for n in self.needs}) != len(self.needs):
            raise ConfigError("duplicate need entries")
        known = {det.id for det in taxonomy.detectors}
        for need in self.needs:
            if need.detector not in known:
                raise ConfigError(f"need {need.detector} not in the taxonomy")
            if not 0.0 < need.rate < 1.0:
                raise ConfigError(f"need {need.detector}: rate must be in (0, 1)")
        if len(self.weekday_multipliers) != 7:
            raise ConfigError("weekday_multipliers must have 7 entries (Mon..Sun)")
        if any(m <= 0 for m in self.weekday_multipliers):
            raise ConfigError("weekday multipliers must be positive")
        for name, amp in (
            ("volume_amplitude", self.volume_amplitude),
            ("rate_amplitude", self.rate_amplitude),
        ):
            if not 0.0 <= amp < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.daily_growth <= -1.0:
            raise ConfigError("daily_growth must exceed -1")
        zips_present = {z.zip for z in self.zips}
        max_mult: dict[str, float] = {n.detector: 1.0 for n in self.needs}
        for shock in self.shocks:
            if shock.need not in max_mult:
                raise ConfigError(f"shock references unconfigured need {shock.need}")
            if shock.multiplier <= 0:
                raise ConfigError(f"shock on {shock.need}: multiplier must be positive")
            window = shock.window
            rng_2020 = self.observation.range_2020
            if window.start not in rng_2020 or window.end not in rng_2020:
                raise ConfigError(f"shock on {shock.need}: window outside the 2020 range")
            if shock.zips is not None and not shock.zips <= zips_present:
                unknown = ", ".join(sorted(shock.zips - zips_present))
                raise ConfigError(f"shock on {shock.need}: unknown zips {unknown}")
            max_mult[shock.need] = max(max_mult[shock.need], shock.multiplier)
        peak_share = sum(
            n.rate * (1.0 + self.rate_amplitude) * max_mult[n.detector] for n in self.needs
        )
        if peak_share > _MAX_TOTAL_SHARE:
            raise ConfigError(
                f"needs can claim up to {peak_share:.2f} of volume; keep below {_MAX_TOTAL_SHARE}"
            )

    # -- expectation model ---------------------------------------------------

    def phase(self, day: dt.date) -> float:
        return float((day - PHASE_EPOCH).days % PHASE_PERIOD)

    def _season(self, day: dt.date, amplitude: float, offset: float = 0.0) -> float:
        angle = 2.0 * math.pi * (self.phase(day) + self.phase_shift_days + offset) / PHASE_PERIOD
        return 1.0 + amplitude * math.sin(angle)

    def volume_expectation(self, spec: ZipSpec, day: dt.date) -> float:
        weekday = self.weekday_multipliers[day.isoweekday() - 1]
        season = self._season(day, self.volume_amplitude)
        drift = (1.0 + self.daily_growth) ** (day - PHASE_EPOCH).days
        return spec.base_volume * weekday * season * drift

    def rate_expectation(self, need_index: int, day: dt.date) -> float:
        # stagger per-need seasonal phase so needs do not move in lockstep
        offset = 37.0 * need_index
        return self.needs[need_index].rate * self._season(day, self.rate_amplitude, offset)

    def shock_multiplier(self, need: str, zip_code: str, day: dt.date) -> float:
        m = 1.0
        for shock in self.shocks:
            if shock.applies(need, zip_code, day):
                m *= shock.multiplier
        return m

    def matched_expectation(self, need_index: int, spec: ZipSpec, day: dt.date) -> float:
        need = self.needs[need_index]
        return (
            self.volume_expectation(spec, day)
            * self.rate_expectation(need_index, day)
            * self.shock_multiplier(need.detector, spec.zip, day)
        )


def _as_date(value: object, context: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if isinstance(value, str):
        return dt.date.fromisoformat(value)
    raise ConfigError(f"{context}: expected a date, got {value!r}")


def _as_range(value: object, context: str) -> DateRange:
    if isinstance(value, str) and ":" in value:
        return DateRange.parse(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return DateRange(_as_date(value[0], context), _as_date(value[1], context))
    raise ConfigError(f"{context}: expected [start, end] or 'START:END'")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> GeneratorConfig:
    try:
        observation = ObservationConfig()
        if "observation" in raw:
            obs = raw["observation"]
            observation = ObservationConfig(
                range_2019=_as_range(obs.get("range_2019", "2019-01-01:2019-08-02"), "range_2019"),
                range_2020=_as_range(obs.get("range_2020", "2020-01-01:2020-08-02"), "range_2020"),
                anonymity_threshold=int(obs.get("anonymity_threshold", 100)),
            )
        zips = tuple(
            ZipSpec(
                zip=str(z["zip"]),
                county=str(z["county"]),
                state=str(z["state"]).upper(),
                base_volume=float(z["base_volume"]),
            )
            for z in raw.get("zips", [])
        )
        needs = tuple(
            NeedSpec(detector=str(n["detector"]), rate=float(n["rate"]))
            for n in raw.get("needs", [])
        )
        zip_by_state: dict[str, set[str]] = {}
        for z in zips:
            zip_by_state.setdefault(z.state, set()).add(z.zip)
        shocks = []
        for s in raw.get("shocks", []):
            scope: frozenset[str] | None = None
            if "zips" in s:
                scope = frozenset(str(z) for z in s["zips"])
            elif "states" in s:
                members: set[str] = set()
                for state in s["states"]:
                    members |= zip_by_state.get(str(state).upper(), set())
                scope = frozenset(members)
            shocks.append(
                Shock(
                    need=str(s["need"]),
                    window=DateRange(_as_date(s["start"], "shock.start"), _as_date(s["end"], "shock.end")),
                    multiplier=float(s["multiplier"]),
                    zips=scope,
                )
            )
        season = raw.get("seasonality", {})
        drift = raw.get("drift", {})
        weekday = raw.get("weekday", {})
        # paths in a config file are relative to the file itself
        tax_path = raw.get("taxonomy")
        tpl_path = raw.get("templates")
        if base_dir is not None:
            tax_path = str(base_dir / tax_path) if tax_path else None
            tpl_path = str(base_dir / tpl_path) if tpl_path else None
        return GeneratorConfig(
            seed=int(raw.get("seed", 0)),
            zips=zips,
            needs=needs,
            observation=observation,
            weekday_multipliers=tuple(
                float(m) for m in weekday.get("multipliers", (1.0,) * 7)
            ),
            volume_amplitude=float(season.get("volume_amplitude", 0.0)),
            rate_amplitude=float(season.get("rate_amplitude", 0.0)),
            phase_shift_days=float(season.get("phase_shift_days", 0.0)),
            daily_growth=float(drift.get("daily_growth", 0.0)),
            shocks=tuple(shocks),
            exact=bool(raw.get("exact", False)),
            taxonomy_path=tax_path,
            templates_path=tpl_path,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid generator config: {exc}") from exc


def load_config(path: str | Path) -> GeneratorConfig:
    path = Path(path)
    with open(path, "rb") as handle:
        try:
            raw = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"generator config: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


# -- templates ----------------------------------------------------------------


@dataclass
class TemplatePools:
    queries: dict[str, list[str]]  # detector id (or BACKGROUND) -> query strings
    urls: dict[str, list[str]]  # detector id (or BACKGROUND) -> url strings

    @classmethod
    def load(cls, path: str | Path) -> "TemplatePools":
        queries: dict[str, list[str]] = {}
        urls: dict[str, list[str]] = {}
        with open_text(path) as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                fields = line.split("\t")
                if line_no == 1 and fields[0] == "detector":
                    continue
                if len(fields) != 3:
                    raise ConfigError(f"{path}:{line_no}: expected detector, kind, text")
                detector, kind, text = fields
                pool = {"query": queries, "url": urls}.get(kind)
                if pool is None:
                    raise ConfigError(f"{path}:{line_no}: kind must be query or url")
                pool.setdefault(detector, []).append(text)
        return cls(queries, urls)

    def validate(self, taxonomy: NeedTaxonomy, matcher: CompiledMatcherSet) -> None:
        """Every template must hit exactly its own detector; background
        templates must be inert under any pairing."""
        for q in self.queries.get(BACKGROUND, []):
            if matcher.match_ids(q, None):
                raise ConfigError(f"background query {q!r} matches a detector")
            if matcher._query_union is not None and matcher._query_union.search(q):
                raise ConfigError(f"background query {q!r} matches a detector query pattern")
        for u in self.urls.get(BACKGROUND, []):
            if matcher._url_union is not None and matcher._url_union.search(u):
                raise ConfigError(f"background url {u!r} matches a detector url pattern")
        for det in taxonomy.detectors:
            det_queries = self.queries.get(det.id, [])
            det_urls = self.urls.get(det.id, [])
            if det.logic in ("Q", "KD") and not det_queries:
                continue  # detector without templates is simply not generatable
            if det.logic == "Q":
                for q in det_queries:
                    if matcher.match_ids(q, None) != [det.id]:
                        raise ConfigError(
                            f"{det.id}: query template {q!r} does not map to exactly {det.id}"
                        )
            elif det.logic == "D":
                for u in det_urls:
                    if matcher.match_ids("00zqx00", u) != [det.id]:
                        raise ConfigError(
                            f"{det.id}: url template {u!r} does not map to exactly {det.id}"
                        )
            else:  # KD
                for q in det_queries:
                    for u in det_urls:
                        if matcher.match_ids(q, u) != [det.id]:
                            raise ConfigError(
                                f"{det.id}: templates {q!r} + {u!r} do not map to exactly {det.id}"
                            )

    def generatable(self, det_id: str, logic: str) -> bool:
        if logic == "Q":
            return bool(self.queries.get(det_id))
        if logic == "D":
            return bool(self.urls.get(det_id)) and bool(self.queries.get(BACKGROUND))
        return bool(self.queries.get(det_id)) and bool(self.urls.get(det_id))


def bundled_templates_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("needscope").joinpath("data/templates.tsv")))


# -- ground truth ---------------------------------------------------------------


class GroundTruth:
    """Exact bookkeeping emitted alongside generated logs.

    Holds, per (detector, date, zip), both the real-valued expectation and
    the integer emitted count, plus per-cell volumes. The emitted counts are
    exposed as a zip/day AggregateTable whose category and ALL cells follow
    the same counting rules as the classifier-side aggregation (each
    synthetic record matches exactly one detector).
    """

    def __init__(self, taxonomy: NeedTaxonomy):
        self.category_of = {det.id: det.category for det in taxonomy.detectors}
        self.expected: dict[tuple[str, dt.date, str], float] = {}
        self.expected_volume: dict[tuple[dt.date, str], float] = {}
        self.table = AggregateTable("zip", "day")

    def record_cell(
        self,
        day: dt.date,
        zip_code: str,
        expected_volume: float,
        volume: int,
        expected_matched: dict[str, float],
        matched: dict[str, int],
    ) -> None:
        geo = GeoKey("zip", zip_code)
        self.expected_volume[(day, zip_code)] = expected_volume
        self.table.add_counts(VOLUME_KEY, day, geo, 0, volume)
        for det_id, expectation in expected_matched.items():
            self.expected[(det_id, day, zip_code)] = expectation
        any_matched = 0
        for det_id, count in matched.items():
            if count <= 0:
                continue
            self.table.add_counts(det_id, day, geo, count, 0)
            self.table.add_counts(self.category_of[det_id], day, geo, count, 0)
            any_matched += count
        if any_matched:
            self.table.add_counts(ALL_KEY, day, geo, any_matched, 0)

    # -- oracle access -------------------------------------------------------

    def _detectors_for(self, need_key: str) -> list[str]:
        if need_key == ALL_KEY:
            return list(self.category_of)
        if need_key in self.category_of:
            return [need_key]
        return [d for d, cat in self.category_of.items() if cat == need_key]

    def expected_e(self, need_key: str, day: dt.date, zip_code: str | None = None) -> float | None:
        """Expected expression rate for one day (zip or national)."""
        detectors = self._detectors_for(need_key)
        zips = [zip_code] if zip_code else sorted({z for _, z in self.expected_volume})
        volume = sum(self.expected_volume.get((day, z), 0.0) for z in zips)
        if volume <= 0:
            return None
        matched = sum(
            self.expected.get((det, day, z), 0.0) for det in detectors for z in zips
        )
        return matched / volume

    def implied_c(
        self,
        need_key: str,
        t1: DateRange,
        t2: DateRange,
        zip_code: str | None = None,
    ) -> float:
        """Relative change implied by the expectations: mean daily expression
        over each window, both years, through the same four-term formula."""

        def mean_e(window: DateRange, shift_days: int) -> float:
            values = []
            for day in window:
                e = self.expected_e(need_key, day - dt.timedelta(days=shift_days), zip_code)
                if e is not None:
                    values.append(e)
            if not values:
                raise ValueError(f"no expectations in {window}")
            return sum(values) / len(values)

        e_t2_2020 = mean_e(t2, 0)
        e_t1_2020 = mean_e(t1, 0)
        e_t2_2019 = mean_e(t2, 364)
        e_t1_2019 = mean_e(t1, 364)
        return (math.log2(e_t2_2020) - math.log2(e_t1_2020)) - (
            math.log2(e_t2_2019) - math.log2(e_t1_2019)
        )

    def write(self, path: str | Path) -> None:
        rows = []
        for (day, zip_code), expectation in self.expected_volume.items():
            geo = GeoKey("zip", zip_code)
            rows.append((VOLUME_KEY, day, zip_code, expectation, self.table.volume_at(day, geo)))
        for (det, day, zip_code), expectation in self.expected.items():
            geo = GeoKey("zip", zip_code)
            rows.append((det, day, zip_code, expectation, self.table.matched(det, day, geo)))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        with atomic_write(path) as handle:
            handle.write("need_key\tdate\tzip\texpected\temitted\n")
            for key, day, zip_code, expectation, emitted in rows:
                handle.write(f"{key}\t{day.isoformat()}\t{zip_code}\t{expectation:.6f}\t{emitted}\n")


# -- generation -----------------------------------------------------------------


def _years_months(window: DateRange) -> list[tuple[int, int]]:
    months = []
    cursor = dt.date(window.start.year, window.start.month, 1)
    while cursor <= window.end:
        months.append((cursor.year, cursor.month))
        cursor = (cursor.replace(day=28) + dt.timedelta(days=4)).replace(day=1)
    return months


def _month_days(window: DateRange, year: int, month: int) -> list[dt.date]:
    return [d for d in window if d.year == year and d.month == month]


def _count_rng(cfg: GeneratorConfig, zip_code: str, year: int, month: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((cfg.seed, int(zip_code), year, month, 0))
    )


def _record_rng(cfg: GeneratorConfig, zip_code: str, year: int, month: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((cfg.seed, int(zip_code), year, month, 1))
    )


def _cell_counts(
    cfg: GeneratorConfig, spec: ZipSpec, days: list[dt.date], rng: np.random.Generator
) -> list[tuple[dt.date, float, int, dict[str, float], dict[str, int]]]:
    """Counts for one (zip, month): per day, expected/emitted volume and
    per-detector matched counts. Background absorbs the remainder so emitted
    volume tracks the full expectation, not just the matched slice."""
    out = []
    for day in days:
        w = cfg.volume_expectation(spec, day)
        expected_matched: dict[str, float] = {}
        for i, need in enumerate(cfg.needs):
            expected_matched[need.detector] = cfg.matched_expectation(i, spec, day)
        expected_bg = w - sum(expected_matched.values())
        if cfg.exact:
            matched = {d: int(math.floor(mu + 0.5)) for d, mu in expected_matched.items()}
            bg = int(math.floor(expected_bg + 0.5))
        else:
            matched = {
                d: int(rng.poisson(mu)) for d, mu in expected_matched.items()
            }
            bg = int(rng.poisson(expected_bg))
        volume = bg + sum(matched.values())
        out.append((day, w, volume, expected_matched, matched))
    return out


def generate_counts(
    cfg: GeneratorConfig, taxonomy: NeedTaxonomy | None = None
) -> GroundTruth:
    """Count-level generation only: the exact ground truth, no record files.

    Uses the same substreams as generate(), so the emitted counts here equal
    the counts materialized into log files for the same config and seed.
    """
    taxonomy = taxonomy or _taxonomy_for(cfg)
    cfg.validate(taxonomy)
    truth = GroundTruth(taxonomy)
    for window in (cfg.observation.range_2019, cfg.observation.range_2020):
        for year, month in _years_months(window):
            days = _month_days(window, year, month)
            for spec in cfg.zips:
                rng = _count_rng(cfg, spec.zip, year, month)
                for day, w, volume, expected, matched in _cell_counts(cfg, spec, days, rng):
                    truth.record_cell(day, spec.zip, w, volume, expected, matched)
    return truth


def _taxonomy_for(cfg: GeneratorConfig) -> NeedTaxonomy:
    if cfg.taxonomy_path:
        return load_taxonomy(cfg.taxonomy_path)
    return load_reference_taxonomy()


@dataclass(frozen=True)
class GenerationResult:
    log_2019: Path
    log_2020: Path
    groundtruth: Path
    crosswalk: Path
    truth: GroundTruth


def generate(
    cfg: GeneratorConfig,
    out_dir: str | Path,
    taxonomy: NeedTaxonomy | None = None,
    gzip_logs: bool = False,
) -> GenerationResult:
    """Write log files for both years plus ground truth and a crosswalk."""
    out_dir = Path(out_dir)
    taxonomy = taxonomy or _taxonomy_for(cfg)
    cfg.validate(taxonomy)
    matcher = compile_detectors(taxonomy)
    templates = TemplatePools.load(cfg.templates_path or bundled_templates_path())
    templates.validate(taxonomy, matcher)
    by_id = {det.id: det for det in taxonomy.detectors}
    for need in cfg.needs:
        det = by_id[need.detector]
        if not templates.generatable(det.id, det.logic):
            raise ConfigError(f"no templates for configured need {det.id}")
    if not templates.queries.get(BACKGROUND):
        raise ConfigError("background query templates are required")

    truth = GroundTruth(taxonomy)
    suffix = ".tsv.gz" if gzip_logs else ".tsv"
    paths = {
        2019: out_dir / f"logs_2019{suffix}",
        2020: out_dir / f"logs_2020{suffix}",
    }
    bg_queries = templates.queries[BACKGROUND]
    bg_urls = templates.urls.get(BACKGROUND, [])

    for window, year in ((cfg.observation.range_2019, 2019), (cfg.observation.range_2020, 2020)):
        with atomic_write(paths[year]) as handle:
            handle.write("timestamp\tquery\tclicked_url\tzip\tclient_hash\n")
            for ym_year, month in _years_months(window):
                days = _month_days(window, ym_year, month)
                for spec in cfg.zips:
                    count_rng = _count_rng(cfg, spec.zip, ym_year, month)
                    record_rng = _record_rng(cfg, spec.zip, ym_year, month)
                    cells = _cell_counts(cfg, spec, days, count_rng)
                    client_pool = max(50, int(spec.base_volume) // 3)
                    for day, w, volume, expected, matched in cells:
                        truth.record_cell(day, spec.zip, w, volume, expected, matched)
                        _write_cell_records(
                            handle,
                            record_rng,
                            day,
                            spec.zip,
                            client_pool,
                            matched,
                            volume,
                            by_id,
                            templates,
                            bg_queries,
                            bg_urls,
                        )

    truth_path = out_dir / "groundtruth.tsv"
    truth.write(truth_path)
    crosswalk_path = out_dir / "crosswalk.csv"
    with atomic_write(crosswalk_path) as handle:
        handle.write("zip,county_fips,state\n")
        for spec in sorted(cfg.zips, key=lambda z: z.zip):
            handle.write(f"{spec.zip},{spec.county},{spec.state}\n")
    return GenerationResult(paths[2019], paths[2020], truth_path, crosswalk_path, truth)


def _write_cell_records(
    handle,
    rng: np.random.Generator,
    day: dt.date,
    zip_code: str,
    client_pool: int,
    matched: dict[str, int],
    volume: int,
    by_id,
    templates: TemplatePools,
    bg_queries: list[str],
    bg_urls: list[str],
) -> None:
    day_iso = day.isoformat()
    total = volume
    seconds = rng.integers(0, 86400, size=total)
    clients = rng.integers(0, client_pool, size=total)
    row = 0

    def emit(query: str, url: str) -> None:
        nonlocal row
        s = int(seconds[row])
        h, rem = divmod(s, 3600)
        m, sec = divmod(rem, 60)
        handle.write(
            f"{day_iso}T{h:02d}:{m:02d}:{sec:02d}\t{query}\t{url}\t{zip_code}\t"
            f"{zip_code}h{int(clients[row]):05d}\n"
        )
        row += 1

    for det_id in matched:
        count = matched[det_id]
        if count <= 0:
            continue
        det = by_id[det_id]
        if det.logic == "Q":
            pool = templates.queries[det_id]
            picks = rng.integers(0, len(pool), size=count)
            for p in picks:
                emit(pool[int(p)], "")
        elif det.logic == "D":
            upool = templates.urls[det_id]
            qpicks = rng.integers(0, len(bg_queries), size=count)
            upicks = rng.integers(0, len(upool), size=count)
            for qp, up in zip(qpicks, upicks):
                emit(bg_queries[int(qp)], upool[int(up)])
        else:  # KD
            qpool = templates.queries[det_id]
            upool = templates.urls[det_id]
            qpicks = rng.integers(0, len(qpool), size=count)
            upicks = rng.integers(0, len(upool), size=count)
            for qp, up in zip(qpicks, upicks):
                emit(qpool[int(qp)], upool[int(up)])

    background = volume - sum(c for c in matched.values() if c > 0)
    if background > 0:
        qpicks = rng.integers(0, len(bg_queries), size=background)
        with_url = rng.random(size=background) < 0.25 if bg_urls else np.zeros(background, bool)
        upicks = (
            rng.integers(0, len(bg_urls), size=background)
            if bg_urls
            else np.zeros(background, int)
        )
        for i in range(background):
            url = bg_urls[int(upicks[i])] if with_url[i] else ""
            emit(bg_queries[int(qpicks[i])], url)
