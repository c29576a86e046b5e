"""Command-line entry point.

Subcommands mirror the pipeline stages: gen, classify, aggregate, trend,
correlate, eval, taxonomy, pipeline. Exit codes: 0 success, 1 runtime
failure, 2 configuration error. `--threads` caps worker processes where a
stage supports them; the NEEDSCOPE_THREADS environment variable supplies a
default.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__
from .log_model import ParseError
from .taxonomy import TaxonomyError, load_taxonomy, reference_taxonomy_path
from .util import ConfigError
from . import pipeline as stages


def _fail(exc: BaseException) -> "click.exceptions.Exit":
    """Map an exception to the exit-code contract."""
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, (ConfigError, TaxonomyError)):
        return click.exceptions.Exit(2)
    return click.exceptions.Exit(1)


@click.group(name="needscope")
@click.version_option(version=__version__, prog_name="needscope")
def main() -> None:
    """Detect need expressions in search logs and quantify relative change."""


# -- gen -------------------------------------------------------------------------


@main.command("gen")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Generator TOML.")
@click.option("--out-dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--gzip", "gzip_logs", is_flag=True, help="Compress the log files.")
def gen_cmd(config_path: str, out_dir: str, gzip_logs: bool) -> None:
    """Generate a seeded synthetic corpus plus ground truth."""
    from .synthgen import generate, load_config

    try:
        cfg = load_config(stages._require_file(config_path, "config"))
        result = generate(cfg, out_dir, gzip_logs=gzip_logs)
    except (ConfigError, TaxonomyError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"wrote {result.log_2019.name}, {result.log_2020.name}")
    click.echo(f"wrote {result.groundtruth.name}, {result.crosswalk.name}")
    click.echo(f"total volume: {result.truth.table.total_volume()}")


# -- classify ----------------------------------------------------------------------


@main.command("classify")
@click.option("--taxonomy", "taxonomy_path", type=click.Path(), default=None,
              help="Taxonomy file (bundled reference when omitted).")
@click.option("--input", "inputs", multiple=True, required=True, type=click.Path(),
              help="Log TSV (repeatable; .gz allowed).")
@click.option("--output", required=True, type=click.Path(), help="Tagged TSV out.")
@click.option("--anonymity-threshold", default=100, show_default=True,
              help="Drop interactions from zip-months with fewer queries; 0 disables.")
@click.option("--threads", default=None, type=int, help="Worker processes.")
def classify_cmd(taxonomy_path, inputs, output, anonymity_threshold, threads) -> None:
    """Tag interactions with need detectors (anonymity filter first)."""
    try:
        result = stages.run_classify(
            list(inputs),
            output,
            taxonomy_path=taxonomy_path,
            anonymity_threshold=anonymity_threshold,
            threads=threads,
        )
    except (ConfigError, TaxonomyError, ParseError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(
        f"kept {result['kept']} of {result['total']} interactions; "
        f"coverage {result['coverage']:.4f}"
    )


# -- aggregate ---------------------------------------------------------------------


@main.command("aggregate")
@click.option("--tagged", "tagged_path", required=True, type=click.Path(), help="Tagged TSV.")
@click.option("--taxonomy", "taxonomy_path", type=click.Path(), default=None)
@click.option("--crosswalk", "crosswalk_path", type=click.Path(), default=None,
              help="zip,county_fips,state CSV (required for county/state rollups).")
@click.option("--geo", default="zip", show_default=True,
              type=click.Choice(["zip", "county", "state", "national"]))
@click.option("--time", "time_unit", default="day", show_default=True,
              type=click.Choice(["day", "week"]))
@click.option("--output", required=True, type=click.Path(), help="Cube TSV out.")
def aggregate_cmd(tagged_path, taxonomy_path, crosswalk_path, geo, time_unit, output) -> None:
    """Aggregate tagged records into a (need, time, geo) count cube."""
    try:
        result = stages.run_aggregate(
            tagged_path,
            output,
            taxonomy_path=taxonomy_path,
            geo=geo,
            time_unit=time_unit,
            crosswalk_path=crosswalk_path,
        )
    except (ConfigError, TaxonomyError, ParseError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"wrote {result['rows']} cells, volume {result['volume']}")


# -- trend -------------------------------------------------------------------------


@main.command("trend")
@click.option("--cube", "cube_path", required=True, type=click.Path(), help="Cube TSV.")
@click.option("--need", "need_key", required=True, help="Detector id, category, or ALL.")
@click.option("--geo", default="national", show_default=True,
              help="'national' or level:code (e.g. state:WA).")
@click.option("--baseline", default=None, help="Baseline window START:END (2020 dates).")
@click.option("--smooth", default=3, show_default=True,
              help="Moving-average half-width in days.")
@click.option("--boot", default=500, show_default=True, help="Bootstrap resamples (0 = none).")
@click.option("--seed", default=0, show_default=True, help="Bootstrap seed.")
@click.option("--crosswalk", "crosswalk_path", type=click.Path(), default=None)
@click.option("--output", required=True, type=click.Path(), help="Series TSV out.")
def trend_cmd(cube_path, need_key, geo, baseline, smooth, boot, seed, crosswalk_path, output) -> None:
    """Daily relative-change series with bootstrap intervals."""
    try:
        result = stages.run_trend(
            cube_path,
            output,
            need_key,
            geo=geo,
            baseline=baseline,
            smooth=smooth,
            n_boot=boot,
            seed=seed,
            crosswalk_path=crosswalk_path,
        )
    except (ConfigError, TaxonomyError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"wrote {result['days']} days ({result['valid_days']} with values)")


# -- correlate ---------------------------------------------------------------------


@main.group("correlate")
def correlate_group() -> None:
    """Correlate change with policies or external series."""


@correlate_group.command("policy")
@click.option("--cube", "cube_path", required=True, type=click.Path(),
              help="State-level daily cube TSV.")
@click.option("--policies", "policies_path", required=True, type=click.Path(),
              help="CSV: state,shelter_start,shelter_end.")
@click.option("--need", "need_key", required=True)
@click.option("--horizon", default="short", show_default=True,
              type=click.Choice(["short", "long"]))
@click.option("--output", required=True, type=click.Path())
def correlate_policy_cmd(cube_path, policies_path, need_key, horizon, output) -> None:
    """Per-state change around shelter-in-place mandates."""
    try:
        result = stages.run_correlate_policy(
            cube_path, policies_path, need_key, output, horizon=horizon
        )
    except (ConfigError, TaxonomyError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"r={result['r']:.4f} p={result['p']:.4g} n={result['n']}")


@correlate_group.command("external")
@click.option("--cube", "cube_path", required=True, type=click.Path())
@click.option("--external", "external_path", required=True, type=click.Path(),
              help="CSV: date,value.")
@click.option("--need", "need_key", required=True)
@click.option("--geo", default="national", show_default=True)
@click.option("--output", required=True, type=click.Path())
def correlate_external_cmd(cube_path, external_path, need_key, geo, output) -> None:
    """Weekly internal change vs. an external reference series."""
    try:
        result = stages.run_correlate_external(
            cube_path, external_path, need_key, output, geo=geo
        )
    except (ConfigError, TaxonomyError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(
        f"r={result['r']:.4f} n={result['n']} mode={result['mode']} "
        f"mean_gap={result['mean_gap']:.4f}"
    )


# -- eval --------------------------------------------------------------------------


@main.group("eval")
def eval_group() -> None:
    """Evaluate the classifier and derived trends."""


@eval_group.command("precision")
@click.option("--corpus", "corpus_path", type=click.Path(), default=None,
              help="Labeled TSV (bundled mini-corpus when omitted).")
@click.option("--taxonomy", "taxonomy_path", type=click.Path(), default=None)
@click.option("--output", required=True, type=click.Path())
def eval_precision_cmd(corpus_path, taxonomy_path, output) -> None:
    """Example-based precision on a labeled corpus."""
    try:
        result = stages.run_eval_precision(
            output, corpus_path=corpus_path, taxonomy_path=taxonomy_path
        )
    except (ConfigError, TaxonomyError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"precision={result['precision']:.4f} examples={result['examples']}")


@eval_group.command("trends")
@click.option("--cube", "cube_path", required=True, type=click.Path())
@click.option("--external", "external_path", required=True, type=click.Path())
@click.option("--need", "need_key", required=True)
@click.option("--geo", default="national", show_default=True)
@click.option("--output", required=True, type=click.Path())
def eval_trends_cmd(cube_path, external_path, need_key, geo, output) -> None:
    """Max-normalized weekly trend agreement with an external series."""
    try:
        result = stages.run_eval_trends(
            cube_path, external_path, need_key, output, geo=geo
        )
    except (ConfigError, TaxonomyError, OSError, ValueError, stages.StageError) as exc:
        raise _fail(exc)
    click.echo(f"r={result['r']:.4f} p={result['p']:.4g} n={result['n']}")


@eval_group.command("clientrate")
@click.option("--input", "inputs", multiple=True, required=True, type=click.Path(),
              help="Raw log TSV (repeatable).")
@click.option("--demographics", "demographics_path", required=True, type=click.Path(),
              help="CSV: zip plus numeric columns incl. population.")
@click.option("--output", required=True, type=click.Path())
def eval_clientrate_cmd(inputs, demographics_path, output) -> None:
    """Correlate distinct-client rates per ZIP with demographics."""
    try:
        result = stages.run_eval_clientrate(list(inputs), demographics_path, output)
    except (ConfigError, TaxonomyError, ParseError, OSError, ValueError) as exc:
        raise _fail(exc)
    click.echo(f"zips={result['zips']} columns={','.join(result['columns'])}")


# -- taxonomy ----------------------------------------------------------------------


@main.group("taxonomy")
def taxonomy_group() -> None:
    """Validate or describe a taxonomy file."""


@taxonomy_group.command("validate")
@click.argument("path", required=False, type=click.Path())
def taxonomy_validate_cmd(path) -> None:
    """Parse and validate; exit 2 with the offending detector on failure."""
    try:
        taxonomy = load_taxonomy(path or reference_taxonomy_path())
    except (TaxonomyError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"ok: version {taxonomy.version}, {len(taxonomy.detectors)} detectors")


@taxonomy_group.command("stats")
@click.argument("path", required=False, type=click.Path())
def taxonomy_stats_cmd(path) -> None:
    """Detector counts by category and logic."""
    try:
        taxonomy = load_taxonomy(path or reference_taxonomy_path())
    except (TaxonomyError, OSError) as exc:
        raise _fail(exc)
    info = taxonomy.stats()
    click.echo(f"version: {info['version']}")
    click.echo(f"detectors: {info['detectors']}")
    for category, n in info["per_category"].items():
        click.echo(f"  {category}: {n}")
    for logic, n in info["per_logic"].items():
        click.echo(f"  logic {logic}: {n}")


# -- pipeline ----------------------------------------------------------------------


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Pipeline TOML.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--threads", default=None, type=int)
def pipeline_cmd(config_path, out_dir, threads) -> None:
    """Run gen -> classify -> aggregate -> trend (-> correlate -> eval)."""
    try:
        manifest = stages.run_pipeline(
            config_path,
            out_dir,
            threads=threads,
            argv=sys.argv[1:],
        )
    except (ConfigError, TaxonomyError, ParseError, OSError, ValueError) as exc:
        raise _fail(exc)
    except stages.StageError as exc:
        raise _fail(exc)
    click.echo(f"stages: {' -> '.join(manifest.stages)}")
    click.echo(f"outputs: {len(manifest.outputs)} files in {out_dir}")
    click.echo(f"manifest: {Path(out_dir) / 'manifest.json'}")


if __name__ == "__main__":
    main()
