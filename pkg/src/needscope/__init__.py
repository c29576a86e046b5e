"""needscope: detect expressions of human needs in web-search logs and
quantify how much they changed against a seasonally aligned prior year.

The package turns raw interaction logs into need-tagged records, aggregates
them into privacy-safe count cubes, and estimates relative change per need
with bootstrap uncertainty, plus policy/external-series correlation and
classifier evaluation utilities. A seeded synthetic-log generator provides
ground truth for end-to-end checks.
"""

__version__ = "0.1.0"

from .aggregation import (
    ALL_KEY,
    NATIONAL,
    AggregateTable,
    AggregationError,
    GeoCrosswalk,
    GeoKey,
    aggregate,
    expression_rate,
    merge_tables,
    read_cube,
    rollup,
    write_cube,
)
from .classifier import (
    NeedTag,
    TaggedInteraction,
    classify,
    classify_corpus,
    classify_text,
    read_tagged,
    write_tagged,
)
from .correlate import (
    CorrelationResult,
    ExternalSeries,
    compare_external,
    load_policies,
    pearson,
    policy_long_term,
    policy_short_term,
    weekly_change_series,
)
from .dates import DateRange, iso_week_label, iso_week_monday, parse_date
from .evaluation import (
    LabeledTuple,
    evaluate_precision,
    example_based_precision,
    load_labeled_corpus,
    trend_agreement,
)
from .log_model import (
    ObservationConfig,
    ParseError,
    SearchInteraction,
    apply_anonymity_filter,
    parse_interaction,
    read_log,
    serialize_interaction,
    write_log,
)
from .synthgen import GeneratorConfig, GroundTruth, generate, generate_counts
from .taxonomy import (
    CATEGORIES,
    CompiledMatcherSet,
    NeedDetector,
    NeedTaxonomy,
    TaxonomyError,
    compile_detectors,
    load_reference_taxonomy,
    load_taxonomy,
)
from .trend import (
    AlignmentError,
    DailyPoint,
    RelativeChange,
    UndefinedChangeError,
    Windows,
    align_to_prior_year,
    daily_series,
    daily_series_with_ci,
    moving_average,
    percent_change,
    relative_change,
    window_mean_change,
)
from .util import ConfigError

__all__ = [
    "ALL_KEY",
    "AggregateTable",
    "AggregationError",
    "AlignmentError",
    "CATEGORIES",
    "CompiledMatcherSet",
    "ConfigError",
    "CorrelationResult",
    "DailyPoint",
    "DateRange",
    "ExternalSeries",
    "GeneratorConfig",
    "GeoCrosswalk",
    "GeoKey",
    "GroundTruth",
    "LabeledTuple",
    "NATIONAL",
    "NeedDetector",
    "NeedTag",
    "NeedTaxonomy",
    "ObservationConfig",
    "ParseError",
    "RelativeChange",
    "SearchInteraction",
    "TaggedInteraction",
    "TaxonomyError",
    "UndefinedChangeError",
    "Windows",
    "__version__",
    "aggregate",
    "align_to_prior_year",
    "apply_anonymity_filter",
    "classify",
    "classify_corpus",
    "classify_text",
    "compare_external",
    "compile_detectors",
    "daily_series",
    "daily_series_with_ci",
    "evaluate_precision",
    "example_based_precision",
    "expression_rate",
    "generate",
    "generate_counts",
    "iso_week_label",
    "iso_week_monday",
    "load_labeled_corpus",
    "load_policies",
    "load_reference_taxonomy",
    "load_taxonomy",
    "merge_tables",
    "moving_average",
    "parse_date",
    "parse_interaction",
    "pearson",
    "percent_change",
    "policy_long_term",
    "policy_short_term",
    "read_cube",
    "read_log",
    "read_tagged",
    "relative_change",
    "rollup",
    "serialize_interaction",
    "weekly_change_series",
    "window_mean_change",
    "write_cube",
    "write_log",
    "write_tagged",
]
