from __future__ import annotations

import datetime as dt

import pytest

from needscope.aggregation import GeoKey
from needscope.classifier import classify_corpus
from needscope.dates import DateRange
from needscope.log_model import read_log
from needscope.synthgen import (
    BACKGROUND,
    GeneratorConfig,
    NeedSpec,
    Shock,
    TemplatePools,
    ZipSpec,
    bundled_templates_path,
    config_from_dict,
    generate,
    generate_counts,
    load_config,
)
from needscope.trend import Windows
from needscope.util import ConfigError

INITIAL = Windows().initial_window

ZIPS = (
    ZipSpec("98105", "53033", "WA", 60.0),
    ZipSpec("10025", "36061", "NY", 40.0),
)
NEEDS = (
    NeedSpec("P20", 0.05),
    NeedSpec("LB4", 0.02),
    NeedSpec("C1", 0.04),
)


def small_config(**overrides) -> GeneratorConfig:
    params = dict(
        seed=123,
        zips=ZIPS,
        needs=NEEDS,
        weekday_multipliers=(1.05, 1.0, 1.0, 1.02, 1.1, 0.88, 0.85),
        volume_amplitude=0.1,
        rate_amplitude=0.2,
        phase_shift_days=10.0,
        daily_growth=0.0005,
    )
    params.update(overrides)
    return GeneratorConfig(**params)


class TestConfigValidation:
    def test_valid_config_passes(self, taxonomy):
        small_config().validate(taxonomy)

    def test_rate_bounds(self, taxonomy):
        cfg = small_config(needs=(NeedSpec("P20", 1.5),))
        with pytest.raises(ConfigError):
            cfg.validate(taxonomy)

    def test_unknown_detector(self, taxonomy):
        cfg = small_config(needs=(NeedSpec("NOPE", 0.01),))
        with pytest.raises(ConfigError, match="NOPE"):
            cfg.validate(taxonomy)

    def test_shock_outside_2020_range(self, taxonomy):
        window = DateRange(dt.date(2020, 9, 1), dt.date(2020, 9, 10))
        cfg = small_config(shocks=(Shock("P20", window, 4.0),))
        with pytest.raises(ConfigError):
            cfg.validate(taxonomy)

    def test_shock_scope_must_name_known_zip(self, taxonomy):
        cfg = small_config(shocks=(Shock("P20", INITIAL, 4.0, frozenset({"99999"})),))
        with pytest.raises(ConfigError, match="99999"):
            cfg.validate(taxonomy)

    def test_peak_matched_share_capped(self, taxonomy):
        # a x30 shock on a 0.05-rate need pushes the cell past total volume
        cfg = small_config(shocks=(Shock("P20", INITIAL, 30.0),))
        with pytest.raises(ConfigError):
            cfg.validate(taxonomy)

    def test_duplicate_need_rejected(self, taxonomy):
        cfg = small_config(needs=(NeedSpec("P20", 0.01), NeedSpec("P20", 0.02)))
        with pytest.raises(ConfigError):
            cfg.validate(taxonomy)


class TestSeasonalStructure:
    def test_phase_repeats_every_364_days(self):
        cfg = small_config()
        for day in (dt.date(2019, 1, 1), dt.date(2019, 3, 18), dt.date(2019, 7, 4)):
            assert cfg.phase(day) == cfg.phase(day + dt.timedelta(days=364))

    def test_aligned_rates_are_identical(self):
        # the whole point of the 364-day phase: rates cancel across years
        cfg = small_config()
        for i in range(len(NEEDS)):
            for day in DateRange(dt.date(2020, 1, 6), dt.date(2020, 1, 20)):
                aligned = day - dt.timedelta(days=364)
                assert cfg.rate_expectation(i, day) == cfg.rate_expectation(i, aligned)

    def test_volume_differs_only_by_drift(self):
        cfg = small_config()
        day = dt.date(2020, 3, 16)
        aligned = day - dt.timedelta(days=364)
        ratio = cfg.volume_expectation(ZIPS[0], day) / cfg.volume_expectation(ZIPS[0], aligned)
        assert ratio == pytest.approx((1.0 + cfg.daily_growth) ** 364)

    def test_weekday_multiplier_applied(self):
        cfg = small_config(volume_amplitude=0.0, daily_growth=0.0)
        monday = dt.date(2020, 3, 16)
        friday = dt.date(2020, 3, 20)
        v_mon = cfg.volume_expectation(ZIPS[0], monday)
        v_fri = cfg.volume_expectation(ZIPS[0], friday)
        assert v_fri / v_mon == pytest.approx(1.1 / 1.05)

    def test_shock_multiplier_scoped(self):
        shock = Shock("P20", INITIAL, 4.0, frozenset({"98105"}))
        cfg = small_config(shocks=(shock,))
        inside = dt.date(2020, 3, 20)
        assert cfg.shock_multiplier("P20", "98105", inside) == 4.0
        assert cfg.shock_multiplier("P20", "10025", inside) == 1.0
        assert cfg.shock_multiplier("LB4", "98105", inside) == 1.0
        assert cfg.shock_multiplier("P20", "98105", dt.date(2020, 5, 1)) == 1.0


class TestGroundTruthOracle:
    def test_no_shock_implies_zero_change(self, taxonomy):
        truth = generate_counts(small_config(), taxonomy)
        c = truth.implied_c("P20", Windows().baseline_2020, INITIAL)
        assert c == pytest.approx(0.0, abs=1e-12)

    def test_planted_multiplier_recovered_exactly(self, taxonomy):
        shock = Shock("P20", INITIAL, 4.0, frozenset({"98105"}))
        truth = generate_counts(small_config(shocks=(shock,)), taxonomy)
        c_shocked = truth.implied_c("P20", Windows().baseline_2020, INITIAL, zip_code="98105")
        assert c_shocked == pytest.approx(2.0, abs=1e-9)  # log2(4)
        c_other = truth.implied_c("P20", Windows().baseline_2020, INITIAL, zip_code="10025")
        assert c_other == pytest.approx(0.0, abs=1e-12)
        # unshocked needs stay flat even in the shocked zip
        assert truth.implied_c(
            "LB4", Windows().baseline_2020, INITIAL, zip_code="98105"
        ) == pytest.approx(0.0, abs=1e-12)

    def test_category_key_also_tracked(self, taxonomy):
        truth = generate_counts(small_config(), taxonomy)
        day = dt.date(2020, 3, 16)
        assert truth.expected_e("Physiological", day) is not None
        assert truth.expected_e("ALL", day) is not None

    def test_counts_deterministic_per_seed(self, taxonomy):
        cfg = small_config()
        a = generate_counts(cfg, taxonomy)
        b = generate_counts(cfg, taxonomy)
        assert a.table.cells == b.table.cells
        assert a.table.volume == b.table.volume
        different = generate_counts(small_config(seed=124), taxonomy)
        assert different.table.cells != a.table.cells

    def test_exact_mode_rounds_expectations(self, taxonomy):
        # matched counts round each expectation to nearest; volume differs
        # from its own expectation only by the accumulated rounding
        truth = generate_counts(small_config(exact=True), taxonomy)
        geo = GeoKey("zip", "98105")
        for day in DateRange(dt.date(2020, 3, 16), dt.date(2020, 3, 22)):
            for need in NEEDS:
                mu = truth.expected[(need.detector, day, "98105")]
                assert truth.table.matched(need.detector, day, geo) == int(mu + 0.5)
            expected = truth.expected_volume[(day, "98105")]
            assert abs(truth.table.volume_at(day, geo) - expected) <= len(NEEDS) + 1


class TestTemplates:
    def test_bundled_pools_cover_taxonomy(self, taxonomy, matcher):
        pools = TemplatePools.load(bundled_templates_path())
        pools.validate(taxonomy, matcher)
        assert BACKGROUND in pools.queries
        for det in taxonomy.detectors:
            assert pools.generatable(det.id, det.logic), det.id

    def test_background_is_inert(self, matcher):
        pools = TemplatePools.load(bundled_templates_path())
        for query in pools.queries[BACKGROUND]:
            assert matcher.match_ids(query, None) == []
        for query in pools.queries[BACKGROUND]:
            for url in pools.urls[BACKGROUND]:
                assert matcher.match_ids(query, url) == []

    def test_validate_rejects_cross_matching_pool(self, taxonomy, matcher):
        pools = TemplatePools.load(bundled_templates_path())
        # a Safety query planted in the Physiological pool must be caught
        polluted = TemplatePools(
            {**pools.queries, "P20": pools.queries["P20"] + ["i feel depressed"]},
            pools.urls,
        )
        with pytest.raises(ConfigError):
            polluted.validate(taxonomy, matcher)


@pytest.fixture(scope="module")
def result(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    cfg = small_config(
        zips=(ZipSpec("98105", "53033", "WA", 25.0), ZipSpec("10025", "36061", "NY", 20.0)),
        shocks=(Shock("P20", INITIAL, 4.0, frozenset({"98105"})),),
    )
    return cfg, generate(cfg, out)


class TestMaterializedLogs:
    def test_logs_classify_back_to_ground_truth(self, result, matcher):
        cfg, res = result
        records = list(read_log(res.log_2019)) + list(read_log(res.log_2020))
        tagged, coverage = classify_corpus(records, matcher)
        from needscope.aggregation import aggregate

        observed = aggregate(tagged)
        assert observed.cells == res.truth.table.cells
        assert observed.volume == res.truth.table.volume
        assert 0.0 < coverage < 1.0

    def test_regeneration_is_byte_identical(self, result, tmp_path):
        cfg, res = result
        again = generate(cfg, tmp_path)
        assert again.log_2020.read_bytes() == res.log_2020.read_bytes()
        assert again.log_2019.read_bytes() == res.log_2019.read_bytes()
        assert again.groundtruth.read_bytes() == res.groundtruth.read_bytes()
        assert again.crosswalk.read_bytes() == res.crosswalk.read_bytes()

    def test_crosswalk_matches_config(self, result):
        _, res = result
        lines = res.crosswalk.read_text().splitlines()
        assert lines[0] == "zip,county_fips,state"
        assert set(lines[1:]) == {"98105,53033,WA", "10025,36061,NY"}

    def test_records_stay_in_observation_ranges(self, result):
        cfg, res = result
        for path, span in ((res.log_2019, cfg.observation.range_2019),
                           (res.log_2020, cfg.observation.range_2020)):
            dates = {r.date for r in read_log(path)}
            assert dates <= {d for d in span}

    def test_shock_recovered_from_classified_logs(self, result, matcher):
        cfg, res = result
        from needscope.aggregation import aggregate
        from needscope.trend import window_mean_change

        records = list(read_log(res.log_2019)) + list(read_log(res.log_2020))
        tagged, _ = classify_corpus(records, matcher)
        cube = aggregate(tagged)
        change = window_mean_change(cube, "P20", geo=GeoKey("zip", "98105"), seed=0)
        assert change.c == pytest.approx(2.0, abs=0.35)  # Poisson noise at this scale


def test_planted_coverage_rate(taxonomy, matcher, tmp_path):
    # rates sum to 0.091 with flat seasonality: observed coverage lands nearby
    cfg = GeneratorConfig(
        seed=7,
        zips=(ZipSpec("98105", "53033", "WA", 120.0), ZipSpec("10025", "36061", "NY", 120.0)),
        needs=(NeedSpec("P20", 0.04), NeedSpec("LB4", 0.03), NeedSpec("C1", 0.021)),
    )
    res = generate(cfg, tmp_path)
    records = list(read_log(res.log_2019)) + list(read_log(res.log_2020))
    assert len(records) > 80_000
    _, coverage = classify_corpus(records, matcher)
    assert coverage == pytest.approx(0.091, abs=0.005)


class TestConfigFile:
    def test_round_trip_from_toml_dict(self):
        raw = {
            "seed": 5,
            "observation": {"anonymity_threshold": 50},
            "zips": [
                {"zip": "98105", "county": "53033", "state": "WA", "base_volume": 30},
            ],
            "needs": [{"detector": "P20", "rate": 0.01}],
            "seasonality": {"volume_amplitude": 0.1, "rate_amplitude": 0.2},
            "shocks": [
                {
                    "need": "P20",
                    "start": "2020-03-16",
                    "end": "2020-04-12",
                    "multiplier": 4.0,
                    "states": ["WA"],
                }
            ],
        }
        cfg = config_from_dict(raw)
        assert cfg.seed == 5
        assert cfg.observation.anonymity_threshold == 50
        assert cfg.zips[0].base_volume == 30.0
        assert cfg.shocks[0].zips == frozenset({"98105"})
        assert cfg.shocks[0].window == INITIAL

    def test_demo_config_loads(self):
        cfg = load_config("configs/demo/gen.toml")
        assert cfg.shocks
        assert len(cfg.zips) == 6

    def test_malformed_entry(self):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": 1, "zips": [{"zip": "98105"}]})

    def test_empty_zips_caught_at_validation(self, taxonomy):
        cfg = config_from_dict({"seed": 1, "needs": [{"detector": "P20", "rate": 0.01}]})
        with pytest.raises(ConfigError):
            cfg.validate(taxonomy)
