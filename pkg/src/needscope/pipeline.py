"""Stage functions and the orchestrator behind the command-line tool.

Each stage (gen, classify, aggregate, trend, correlate, eval) is an ordinary
function over files, so running stages individually is exactly equivalent to
one orchestrated run_pipeline() call. All outputs are TSV/CSV with
self-describing headers and are written atomically; a run directory gets a
single manifest.json recording provenance. Reruns with the same inputs and
seeds are byte-identical except for the manifest timestamps.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # py3.10
    import tomli as tomllib

from . import __version__
from .aggregation import (
    ALL_KEY,
    NATIONAL,
    AggregateTable,
    GeoCrosswalk,
    GeoKey,
    aggregate,
    read_cube,
    rollup,
    write_cube,
)
from .classifier import TAGGED_HEADER, classify, read_tagged, serialize_tagged
from .correlate import (
    ExternalSeries,
    compare_external,
    load_policies,
    policy_long_term,
    policy_short_term,
    weekly_change_series,
)
from .dates import DateRange
from .evaluation import (
    bundled_corpus_path,
    build_zip_profiles,
    client_rate_correlations,
    evaluate_precision,
    load_demographics,
    load_labeled_corpus,
    max_normalize,
    trend_agreement,
)
from .log_model import (
    HEADER_LINE,
    ObservationConfig,
    SearchInteraction,
    count_zip_months,
    parse_interaction,
)
from .synthgen import GenerationResult, generate, load_config
from .taxonomy import (
    CompiledMatcherSet,
    NeedTaxonomy,
    compile_detectors,
    load_reference_taxonomy,
    load_taxonomy,
)
from .trend import Windows, daily_series, daily_series_with_ci, smooth_daily_series
from .util import ConfigError, atomic_write, fmt_float, open_text, sha256_file


class StageError(RuntimeError):
    """A pipeline stage failed at runtime; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def resolve_threads(requested: int | None) -> int:
    """Explicit flag wins, then NEEDSCOPE_THREADS, then single-threaded."""
    if requested is None:
        env = os.environ.get("NEEDSCOPE_THREADS", "").strip()
        if env:
            try:
                requested = int(env)
            except ValueError as exc:
                raise ConfigError(f"NEEDSCOPE_THREADS: {env!r} is not an integer") from exc
    if requested is None or requested <= 0:
        return 1
    return min(requested, os.cpu_count() or 1)


def _require_file(path: str | Path, field_name: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{field_name}: no such file {path}")
    return path


def load_taxonomy_arg(path: str | Path | None) -> NeedTaxonomy:
    if path is None:
        return load_reference_taxonomy()
    return load_taxonomy(_require_file(path, "taxonomy"))


# -- classify ------------------------------------------------------------------


def _classify_lines(
    lines: list[tuple[int, str]],
    matcher: CompiledMatcherSet,
    dropped_months: frozenset,
) -> tuple[list[str], int, int]:
    """Classify raw log lines; returns (output lines, kept, matched)."""
    out: list[str] = []
    matched = 0
    for line_no, line in lines:
        record = parse_interaction(line, line_no)
        if record.month_key in dropped_months:
            continue
        tags = classify(record, matcher)
        if tags:
            matched += 1
        ids = ";".join(tag.detector_id for tag in tags)
        out.append(f"{line}\t{ids}")
    return out, len(out), matched


_WORKER_STATE: dict = {}


def _worker_init(taxonomy_text: str, source: str, dropped: frozenset) -> None:
    from .taxonomy import loads_taxonomy

    tax = loads_taxonomy(taxonomy_text, source)
    _WORKER_STATE["matcher"] = compile_detectors(tax)
    _WORKER_STATE["dropped"] = dropped


def _worker_chunk(chunk: list[tuple[int, str]]) -> tuple[list[str], int, int]:
    return _classify_lines(chunk, _WORKER_STATE["matcher"], _WORKER_STATE["dropped"])


def _data_lines(path: Path):
    """Yield (line_no, line) for data rows, skipping the header and blanks."""
    with open_text(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line_no == 1 and line == HEADER_LINE:
                continue
            yield line_no, line


def run_classify(
    inputs: list[str | Path],
    output: str | Path,
    taxonomy_path: str | Path | None = None,
    anonymity_threshold: int = 100,
    threads: int | None = None,
    chunk_size: int = 20_000,
) -> dict[str, object]:
    """Two passes over the logs: count zip-months, then filter + classify.

    The anonymity guard drops every interaction from a (zip, month) whose
    total query count is below the threshold, counted across all inputs of
    this invocation; 0 disables the guard. Output rows keep input order.
    """
    paths = [_require_file(p, "input") for p in inputs]
    taxonomy = load_taxonomy_arg(taxonomy_path)
    matcher = compile_detectors(taxonomy)
    n_threads = resolve_threads(threads)

    dropped_months: frozenset = frozenset()
    total_seen = 0
    if anonymity_threshold > 0:
        counts: dict = {}
        for path in paths:
            for line_no, line in _data_lines(path):
                record = parse_interaction(line, line_no)
                counts[record.month_key] = counts.get(record.month_key, 0) + 1
                total_seen += 1
        dropped_months = frozenset(
            key for key, n in counts.items() if n < anonymity_threshold
        )

    kept = 0
    matched = 0
    with atomic_write(output) as out:
        out.write(TAGGED_HEADER + "\n")
        for path in paths:
            if n_threads <= 1:
                chunk: list[tuple[int, str]] = []
                for item in _data_lines(path):
                    chunk.append(item)
                    if len(chunk) >= chunk_size:
                        lines, k, m = _classify_lines(chunk, matcher, dropped_months)
                        out.write("\n".join(lines) + "\n" if lines else "")
                        kept += k
                        matched += m
                        chunk = []
                if chunk:
                    lines, k, m = _classify_lines(chunk, matcher, dropped_months)
                    out.write("\n".join(lines) + "\n" if lines else "")
                    kept += k
                    matched += m
            else:
                kept_m = _classify_parallel(
                    path, out, taxonomy_path, dropped_months, n_threads, chunk_size
                )
                kept += kept_m[0]
                matched += kept_m[1]
    if anonymity_threshold <= 0:
        total_seen = kept
    return {
        "inputs": [str(p) for p in paths],
        "output": str(output),
        "total": total_seen,
        "kept": kept,
        "matched": matched,
        "coverage": (matched / kept) if kept else 0.0,
        "anonymity_threshold": anonymity_threshold,
        "threads": n_threads,
    }


def _classify_parallel(
    path: Path,
    out,
    taxonomy_path: str | Path | None,
    dropped_months: frozenset,
    n_threads: int,
    chunk_size: int,
) -> tuple[int, int]:
    """Chunked worker pool with ordered reassembly; output equals the serial path."""
    import multiprocessing as mp

    from .taxonomy import reference_taxonomy_path

    source = Path(taxonomy_path) if taxonomy_path else reference_taxonomy_path()
    taxonomy_text = source.read_text(encoding="utf-8")

    def chunks():
        chunk: list[tuple[int, str]] = []
        for item in _data_lines(path):
            chunk.append(item)
            if len(chunk) >= chunk_size:
                yield chunk
                chunk = []
        if chunk:
            yield chunk

    kept = 0
    matched = 0
    ctx = mp.get_context("fork")
    with ctx.Pool(
        n_threads,
        initializer=_worker_init,
        initargs=(taxonomy_text, str(source), dropped_months),
    ) as pool:
        for lines, k, m in pool.imap(_worker_chunk, chunks()):
            if lines:
                out.write("\n".join(lines) + "\n")
            kept += k
            matched += m
    return kept, matched


# -- aggregate -----------------------------------------------------------------


def run_aggregate(
    tagged_path: str | Path,
    output: str | Path,
    taxonomy_path: str | Path | None = None,
    geo: str = "zip",
    time_unit: str = "day",
    crosswalk_path: str | Path | None = None,
) -> dict[str, object]:
    taxonomy = load_taxonomy_arg(taxonomy_path)
    _require_file(tagged_path, "tagged")
    table = aggregate(read_tagged(tagged_path, taxonomy))
    xwalk = None
    if crosswalk_path is not None:
        xwalk = GeoCrosswalk.load(_require_file(crosswalk_path, "crosswalk"))
    if (geo, time_unit) != ("zip", "day"):
        table = rollup(table, geo, time_unit, xwalk)
    write_cube(table, output)
    return {
        "output": str(output),
        "geo_level": geo,
        "time_unit": time_unit,
        "rows": len(table.cells),
        "volume": table.total_volume(),
    }


# -- trend ---------------------------------------------------------------------

TREND_COLUMNS = ("date", "c", "ci_low", "ci_high", "smoothed_c")


def run_trend(
    cube_path: str | Path,
    output: str | Path,
    need_key: str,
    geo: str = "national",
    baseline: str | DateRange | None = None,
    smooth: int = 3,
    n_boot: int = 500,
    seed: int = 0,
    crosswalk_path: str | Path | None = None,
    cfg: ObservationConfig | None = None,
) -> dict[str, object]:
    """Daily relative-change series for one need key, written as TSV.

    Columns are date, c, ci_low, ci_high, smoothed_c. Per-day intervals come
    from a cluster bootstrap over ZIP cells and therefore need a
    zip-resolution daily cube and the national series; any other combination
    leaves the interval columns empty. Days without a defined value (missing
    alignment or zero expression) keep their row with empty cells.
    """
    cube = read_cube(_require_file(cube_path, "cube"))
    cfg = cfg or ObservationConfig()
    if isinstance(baseline, str):
        baseline = DateRange.parse(baseline)
    windows = Windows(baseline_2020=baseline) if baseline else Windows()
    if cube.time_unit != "day":
        raise ConfigError("trend needs a day-resolution cube")

    geo_key = _resolve_geo(geo)
    meta: dict[str, object] = {}
    if cube.geo_level == "zip" and geo_key.level == "national" and n_boot > 0:
        points, meta = daily_series_with_ci(
            cube, need_key, windows=windows, cfg=cfg, n_boot=n_boot, seed=seed
        )
    else:
        table = cube
        if cube.geo_level != geo_key.level:
            xwalk = None
            if crosswalk_path is not None:
                xwalk = GeoCrosswalk.load(_require_file(crosswalk_path, "crosswalk"))
            table = rollup(cube, geo_key.level, "day", xwalk)
        points = daily_series(table, need_key, geo_key, windows, cfg)
    smoothed = smooth_daily_series(points, half_width=smooth)

    def cell(x: float | None) -> str:
        return "" if x is None else fmt_float(x)

    with atomic_write(output) as handle:
        handle.write(
            f"# need={need_key} geo={geo_key.level}:{geo_key.code} "
            f"baseline={windows.baseline_2020} smooth={smooth} boot={n_boot} seed={seed}\n"
        )
        handle.write("\t".join(TREND_COLUMNS) + "\n")
        for point, s in zip(points, smoothed):
            handle.write(
                f"{point.date.isoformat()}\t{cell(point.c)}\t{cell(point.ci_low)}"
                f"\t{cell(point.ci_high)}\t{cell(s)}\n"
            )
    valid = sum(1 for p in points if p.c is not None)
    return {"output": str(output), "days": len(points), "valid_days": valid, **meta}


def _resolve_geo(geo: str) -> GeoKey:
    """'national' or 'level:code' (e.g. state:WA, zip:98105)."""
    if geo in ("national", "US", "national:US"):
        return NATIONAL
    if ":" in geo:
        level, code = geo.split(":", 1)
        return GeoKey(level, code)
    raise ConfigError(f"geo: expected 'national' or 'level:code', got {geo!r}")


# -- correlate -------------------------------------------------------------------


def run_correlate_policy(
    cube_path: str | Path,
    policies_path: str | Path,
    need_key: str,
    output: str | Path,
    horizon: str = "short",
    cfg: ObservationConfig | None = None,
) -> dict[str, object]:
    """State-level policy analysis; the cube must be state/day resolution."""
    cube = read_cube(_require_file(cube_path, "cube"))
    policies = load_policies(_require_file(policies_path, "policies"))
    if horizon == "short":
        analysis = policy_short_term(cube, policies, need_key, cfg=cfg)
    elif horizon == "long":
        analysis = policy_long_term(cube, policies, need_key, cfg=cfg)
    else:
        raise ConfigError(f"horizon: expected short or long, got {horizon!r}")
    with atomic_write(output) as handle:
        handle.write(
            f"# need={need_key} horizon={horizon} covariate={analysis.covariate} "
            f"r={fmt_float(analysis.corr.r)} p={fmt_float(analysis.corr.p)} "
            f"n={analysis.corr.n}\n"
        )
        handle.write("state\tcovariate\tc\n")
        for state, covariate, c in analysis.per_state:
            handle.write(f"{state}\t{fmt_float(covariate)}\t{fmt_float(c)}\n")
        for state, reason in analysis.excluded:
            handle.write(f"# excluded {state}: {reason}\n")
    return {
        "output": str(output),
        "r": analysis.corr.r,
        "p": analysis.corr.p,
        "n": analysis.corr.n,
        "excluded": len(analysis.excluded),
    }


def run_correlate_external(
    cube_path: str | Path,
    external_path: str | Path,
    need_key: str,
    output: str | Path,
    geo: str = "national",
    cfg: ObservationConfig | None = None,
) -> dict[str, object]:
    """Weekly internal change vs. an external reference series."""
    cube = read_cube(_require_file(cube_path, "cube"))
    external = ExternalSeries.load(_require_file(external_path, "external"))
    cfg = cfg or ObservationConfig()
    windows = Windows()
    geo_key = _resolve_geo(geo)
    if cube.geo_level != geo_key.level:
        cube = rollup(cube, geo_key.level, "day")
    internal = weekly_change_series(cube, need_key, geo_key, windows, cfg)
    comparison = compare_external(internal, external, windows, cfg)
    external_by_week = dict(comparison.external_change)
    mean_gap = sum(g for _, g in comparison.gaps) / len(comparison.gaps)
    with atomic_write(output) as handle:
        handle.write(
            f"# need={need_key} mode={comparison.mode} r={fmt_float(comparison.corr.r)} "
            f"p={fmt_float(comparison.corr.p)} n={comparison.corr.n} "
            f"mean_gap={fmt_float(mean_gap)}\n"
        )
        handle.write("week_monday\tinternal_c\texternal_change\tgap\n")
        for monday, gap in comparison.gaps:
            handle.write(
                f"{monday.isoformat()}\t{fmt_float(internal[monday])}"
                f"\t{fmt_float(external_by_week[monday])}\t{fmt_float(gap)}\n"
            )
    return {
        "output": str(output),
        "r": comparison.corr.r,
        "n": comparison.corr.n,
        "mode": comparison.mode,
        "mean_gap": mean_gap,
    }


# -- eval ------------------------------------------------------------------------


def run_eval_precision(
    output: str | Path,
    corpus_path: str | Path | None = None,
    taxonomy_path: str | Path | None = None,
) -> dict[str, object]:
    taxonomy = load_taxonomy_arg(taxonomy_path)
    matcher = compile_detectors(taxonomy)
    path = Path(corpus_path) if corpus_path else bundled_corpus_path()
    corpus = load_labeled_corpus(_require_file(path, "corpus"))
    precision, details = evaluate_precision(corpus, matcher)
    with atomic_write(output) as handle:
        handle.write(f"# corpus={path.name} examples={len(corpus)} precision={fmt_float(precision)}\n")
        handle.write("query\tclicked_url\tpredicted\ttruth\tweight\tprecision\n")
        for row in details:
            score = row["precision"]
            handle.write(
                f"{row['query']}\t{row['clicked_url']}\t{row['predicted']}"
                f"\t{row['truth']}\t{row['weight']}\t"
                f"{'' if score is None else fmt_float(float(score))}\n"
            )
    return {"output": str(output), "precision": precision, "examples": len(corpus)}


def run_eval_trends(
    cube_path: str | Path,
    external_path: str | Path,
    need_key: str,
    output: str | Path,
    geo: str = "national",
    cfg: ObservationConfig | None = None,
) -> dict[str, object]:
    """Agreement between a detector's weekly volume-share trend and an
    external weekly series, after max-normalizing both."""
    from .aggregation import UndefinedRateError, expression_rate
    from .dates import week_mondays

    cube = read_cube(_require_file(cube_path, "cube"))
    external = ExternalSeries.load(_require_file(external_path, "external"))
    cfg = cfg or ObservationConfig()
    geo_key = _resolve_geo(geo)
    if cube.geo_level != geo_key.level:
        cube = rollup(cube, geo_key.level, "day")
    external_weekly = external.weekly()
    internal_weekly: dict[dt.date, float] = {}
    for monday in week_mondays(cfg.range_2020):
        window = DateRange(monday, monday + dt.timedelta(days=6))
        try:
            internal_weekly[monday] = expression_rate(cube, need_key, window, geo_key)
        except UndefinedRateError:
            continue
    common = sorted(set(internal_weekly) & set(external_weekly))
    if len(common) < 3:
        raise StageError("eval", "fewer than 3 overlapping weeks")
    internal_series = [internal_weekly[m] for m in common]
    external_series = [external_weekly[m] for m in common]
    corr = trend_agreement(internal_series, external_series)
    internal_norm = max_normalize(internal_series)
    external_norm = max_normalize(external_series)
    with atomic_write(output) as handle:
        handle.write(
            f"# need={need_key} r={fmt_float(corr.r)} p={fmt_float(corr.p)} n={corr.n}\n"
        )
        handle.write("week_monday\tinternal_norm\texternal_norm\n")
        for monday, a, b in zip(common, internal_norm, external_norm):
            handle.write(f"{monday.isoformat()}\t{fmt_float(a)}\t{fmt_float(b)}\n")
    return {"output": str(output), "r": corr.r, "p": corr.p, "n": corr.n}


def run_eval_clientrate(
    inputs: list[str | Path],
    demographics_path: str | Path,
    output: str | Path,
) -> dict[str, object]:
    """Distinct-client rates per ZIP correlated with demographic columns.

    The demographics CSV must include a 'population' column; every other
    numeric column is correlated against clients/population.
    """
    paths = [_require_file(p, "input") for p in inputs]
    demographics = load_demographics(_require_file(demographics_path, "demographics"))

    def records():
        for path in paths:
            for line_no, line in _data_lines(path):
                yield parse_interaction(line, line_no)

    profiles = build_zip_profiles(records(), demographics)
    correlations, skipped = client_rate_correlations(profiles)
    with atomic_write(output) as handle:
        handle.write(f"# zips={len(profiles)} skipped={';'.join(skipped) or '-'}\n")
        handle.write("column\tr\tp\tn\n")
        for column in sorted(correlations):
            corr = correlations[column]
            handle.write(
                f"{column}\t{fmt_float(corr.r)}\t{fmt_float(corr.p)}\t{corr.n}\n"
            )
    return {
        "output": str(output),
        "zips": len(profiles),
        "columns": sorted(correlations),
    }


# -- orchestrator ------------------------------------------------------------------


@dataclass
class RunManifest:
    tool: str
    version: str
    command: list[str]
    taxonomy_version: str
    seeds: dict[str, int]
    inputs: dict[str, str]
    outputs: dict[str, str]
    stages: list[str] = field(default_factory=list)
    created_utc: str = ""
    finished_utc: str = ""

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "taxonomy_version": self.taxonomy_version,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "stages": self.stages,
            "created_utc": self.created_utc,
            "finished_utc": self.finished_utc,
        }

    def write(self, path: str | Path) -> None:
        with atomic_write(path) as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")

    @staticmethod
    def comparable(manifest: dict) -> dict:
        """Manifest content with run timestamps stripped, for equality checks."""
        return {k: v for k, v in manifest.items() if not k.endswith("_utc")}


def _utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def load_pipeline_config(path: str | Path) -> dict:
    path = _require_file(path, "pipeline config")
    with open(path, "rb") as handle:
        try:
            raw = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"pipeline config: {exc}") from exc
    raw.setdefault("_base_dir", str(path.parent))
    return raw


def _resolve_path(raw: dict, value: str) -> Path:
    base = Path(raw.get("_base_dir", "."))
    path = Path(value)
    return path if path.is_absolute() else base / path


def run_pipeline(
    config: str | Path | dict,
    out_dir: str | Path,
    threads: int | None = None,
    argv: list[str] | None = None,
) -> RunManifest:
    """Run gen -> classify -> aggregate -> trend (-> correlate -> eval).

    The config is TOML. Either a [gen] table (synthetic inputs) or an
    [inputs] table (existing logs) must be present. Optional [correlate] and
    [eval] tables switch those stages on. Stage parameters mirror the CLI
    flags of the standalone subcommands.
    """
    raw = load_pipeline_config(config) if not isinstance(config, dict) else dict(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pipeline_tbl = raw.get("pipeline", {})
    taxonomy_path = pipeline_tbl.get("taxonomy")
    if taxonomy_path is not None:
        taxonomy_path = _resolve_path(raw, taxonomy_path)
        if not Path(taxonomy_path).is_file():
            raise ConfigError(f"pipeline.taxonomy: no such file {taxonomy_path}")
    taxonomy = load_taxonomy_arg(taxonomy_path)
    if threads is None and "threads" in pipeline_tbl:
        threads = int(pipeline_tbl["threads"])

    manifest = RunManifest(
        tool="needscope",
        version=__version__,
        command=list(argv or []),
        taxonomy_version=taxonomy.version,
        seeds={},
        inputs={},
        outputs={},
        created_utc=_utc_now(),
    )

    def note_output(path: str | Path) -> None:
        manifest.outputs[Path(path).name] = "sha256:" + sha256_file(path)

    # --- gen or existing inputs
    crosswalk_path: Path | None = None
    if "gen" in raw:
        stage = "gen"
        gen_tbl = raw["gen"]
        if "config" not in gen_tbl:
            raise ConfigError("gen.config: required")
        gen_cfg_path = _resolve_path(raw, gen_tbl["config"])
        if not gen_cfg_path.is_file():
            raise ConfigError(f"gen.config: no such file {gen_cfg_path}")
        gen_cfg = load_config(gen_cfg_path)
        manifest.inputs[gen_cfg_path.name] = "sha256:" + sha256_file(gen_cfg_path)
        manifest.seeds["gen"] = gen_cfg.seed
        try:
            result: GenerationResult = generate(
                gen_cfg, out_dir, gzip_logs=bool(gen_tbl.get("gzip", False))
            )
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        logs = [result.log_2019, result.log_2020]
        crosswalk_path = result.crosswalk
        for p in (result.log_2019, result.log_2020, result.groundtruth, result.crosswalk):
            note_output(p)
        manifest.stages.append(stage)
    elif "inputs" in raw:
        inputs_tbl = raw["inputs"]
        if "logs" not in inputs_tbl or not inputs_tbl["logs"]:
            raise ConfigError("inputs.logs: required")
        logs = [_resolve_path(raw, p) for p in inputs_tbl["logs"]]
        for p in logs:
            if not Path(p).is_file():
                raise ConfigError(f"inputs.logs: no such file {p}")
            manifest.inputs[Path(p).name] = "sha256:" + sha256_file(p)
        if "crosswalk" in inputs_tbl:
            crosswalk_path = _resolve_path(raw, inputs_tbl["crosswalk"])
            if not crosswalk_path.is_file():
                raise ConfigError(f"inputs.crosswalk: no such file {crosswalk_path}")
            manifest.inputs[crosswalk_path.name] = "sha256:" + sha256_file(crosswalk_path)
    else:
        raise ConfigError("config needs a [gen] or [inputs] table")

    # --- classify
    classify_tbl = raw.get("classify", {})
    tagged_path = out_dir / "tagged.tsv"
    try:
        classify_stats = run_classify(
            logs,
            tagged_path,
            taxonomy_path=taxonomy_path,
            anonymity_threshold=int(classify_tbl.get("anonymity_threshold", 100)),
            threads=threads,
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("classify", str(exc)) from exc
    note_output(tagged_path)
    manifest.stages.append("classify")

    # --- aggregate: base zip/day cube plus any requested rollup
    agg_tbl = raw.get("aggregate", {})
    cube_path = out_dir / "cube_zip_day.tsv"
    try:
        run_aggregate(tagged_path, cube_path, taxonomy_path=taxonomy_path)
        extra_geo = agg_tbl.get("geo", "national")
        extra_time = agg_tbl.get("time", "day")
        extra_path = None
        if (extra_geo, extra_time) != ("zip", "day"):
            extra_path = out_dir / f"cube_{extra_geo}_{extra_time}.tsv"
            run_aggregate(
                tagged_path,
                extra_path,
                taxonomy_path=taxonomy_path,
                geo=extra_geo,
                time_unit=extra_time,
                crosswalk_path=crosswalk_path,
            )
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("aggregate", str(exc)) from exc
    note_output(cube_path)
    if extra_path is not None:
        note_output(extra_path)
    manifest.stages.append("aggregate")

    # --- trend
    trend_tbl = raw.get("trend", {})
    needs = trend_tbl.get("needs", [ALL_KEY])
    trend_seed = int(trend_tbl.get("seed", 0))
    manifest.seeds["trend"] = trend_seed
    for need_key in needs:
        trend_path = out_dir / f"trend_{need_key}.tsv"
        try:
            run_trend(
                cube_path,
                trend_path,
                need_key,
                geo=trend_tbl.get("geo", "national"),
                baseline=trend_tbl.get("baseline"),
                smooth=int(trend_tbl.get("smooth", 3)),
                n_boot=int(trend_tbl.get("boot", 500)),
                seed=trend_seed,
                crosswalk_path=crosswalk_path,
            )
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError("trend", str(exc)) from exc
        note_output(trend_path)
    manifest.stages.append("trend")

    # --- correlate (optional)
    if "correlate" in raw:
        corr_tbl = raw["correlate"]
        try:
            if "policies" in corr_tbl:
                # rebuilt unconditionally: a stale file from an earlier run in
                # the same directory must not leak into this manifest
                state_cube = out_dir / "cube_state_day.tsv"
                run_aggregate(
                    tagged_path,
                    state_cube,
                    taxonomy_path=taxonomy_path,
                    geo="state",
                    crosswalk_path=crosswalk_path,
                )
                note_output(state_cube)
                policy_need = corr_tbl.get("policy_need", ALL_KEY)
                policy_path = out_dir / f"policy_{policy_need}.tsv"
                run_correlate_policy(
                    state_cube,
                    _resolve_path(raw, corr_tbl["policies"]),
                    policy_need,
                    policy_path,
                    horizon=corr_tbl.get("policy_horizon", "short"),
                )
                note_output(policy_path)
            if "external" in corr_tbl:
                external_need = corr_tbl.get("external_need", ALL_KEY)
                external_path = out_dir / f"external_{external_need}.tsv"
                run_correlate_external(
                    cube_path,
                    _resolve_path(raw, corr_tbl["external"]),
                    external_need,
                    external_path,
                )
                note_output(external_path)
        except ConfigError:
            raise
        except StageError:
            raise
        except Exception as exc:
            raise StageError("correlate", str(exc)) from exc
        manifest.stages.append("correlate")

    # --- eval (optional)
    if "eval" in raw:
        eval_tbl = raw["eval"]
        try:
            if eval_tbl.get("precision", True):
                corpus = eval_tbl.get("corpus")
                corpus_path = _resolve_path(raw, corpus) if corpus else None
                precision_path = out_dir / "eval_precision.tsv"
                run_eval_precision(
                    precision_path, corpus_path=corpus_path, taxonomy_path=taxonomy_path
                )
                note_output(precision_path)
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError("eval", str(exc)) from exc
        manifest.stages.append("eval")

    manifest.finished_utc = _utc_now()
    manifest.write(out_dir / "manifest.json")
    return manifest
