import json
import os

import pytest
from click.testing import CliRunner

from needscope.cli import main
from needscope.pipeline import (
    RunManifest,
    resolve_threads,
    run_aggregate,
    run_classify,
    run_pipeline,
    run_trend,
)
from needscope.util import ConfigError

GEN_TOML = """\
seed = 7

[[zips]]
zip = "98105"
county = "53033"
state = "WA"
base_volume = 22

[[zips]]
zip = "10025"
county = "36061"
state = "NY"
base_volume = 18

[[needs]]
detector = "P20"
rate = 0.05

[[needs]]
detector = "LB4"
rate = 0.03

[weekday]
multipliers = [1.05, 1.00, 1.00, 1.02, 1.10, 0.88, 0.85]

[seasonality]
volume_amplitude = 0.1
rate_amplitude = 0.2

[[shocks]]
need = "P20"
start = 2020-03-16
end = 2020-04-12
multiplier = 4.0
"""

PIPELINE_TOML = """\
[gen]
config = "gen.toml"

[trend]
needs = ["ALL", "P20"]
boot = 50
seed = 0

[eval]
precision = true
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    (root / "gen.toml").write_text(GEN_TOML)
    (root / "pipeline.toml").write_text(PIPELINE_TOML)
    return root


@pytest.fixture(scope="module")
def piperun(workdir):
    out = workdir / "run1"
    manifest = run_pipeline(workdir / "pipeline.toml", out)
    return out, manifest


DATA_FILES = (
    "logs_2019.tsv",
    "logs_2020.tsv",
    "groundtruth.tsv",
    "crosswalk.csv",
    "tagged.tsv",
    "cube_zip_day.tsv",
    "cube_national_day.tsv",
    "trend_ALL.tsv",
    "trend_P20.tsv",
    "eval_precision.tsv",
)


class TestRunPipeline:
    def test_stage_order_and_outputs(self, piperun):
        out, manifest = piperun
        assert manifest.stages == ["gen", "classify", "aggregate", "trend", "eval"]
        for name in DATA_FILES:
            assert (out / name).is_file(), name
            assert manifest.outputs[name].startswith("sha256:")
        assert manifest.seeds == {"gen": 7, "trend": 0}
        assert (out / "manifest.json").is_file()

    def test_rerun_is_byte_identical(self, workdir, piperun):
        out1, manifest1 = piperun
        out2 = workdir / "run2"
        manifest2 = run_pipeline(workdir / "pipeline.toml", out2)
        for name in DATA_FILES:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert RunManifest.comparable(m1) == RunManifest.comparable(m2)
        assert manifest1.outputs == manifest2.outputs

    def test_stages_compose_to_same_bytes(self, workdir, piperun):
        out, _ = piperun
        solo = workdir / "solo"
        solo.mkdir()
        run_classify([out / "logs_2019.tsv", out / "logs_2020.tsv"], solo / "tagged.tsv")
        assert (solo / "tagged.tsv").read_bytes() == (out / "tagged.tsv").read_bytes()
        run_aggregate(solo / "tagged.tsv", solo / "cube.tsv")
        assert (solo / "cube.tsv").read_bytes() == (out / "cube_zip_day.tsv").read_bytes()
        run_trend(solo / "cube.tsv", solo / "trend.tsv", "ALL", n_boot=50, seed=0)
        assert (solo / "trend.tsv").read_bytes() == (out / "trend_ALL.tsv").read_bytes()

    def test_parallel_classify_matches_serial(self, workdir, piperun):
        out, _ = piperun
        threaded = workdir / "threaded.tsv"
        run_classify(
            [out / "logs_2019.tsv", out / "logs_2020.tsv"], threaded, threads=2
        )
        assert threaded.read_bytes() == (out / "tagged.tsv").read_bytes()

    def test_classify_stats(self, piperun):
        out, _ = piperun
        stats = run_classify(
            [out / "logs_2019.tsv", out / "logs_2020.tsv"], out / "restats.tsv"
        )
        assert stats["kept"] > 0
        assert 0.0 < stats["coverage"] < 1.0

    def test_missing_gen_config(self, tmp_path):
        cfg = tmp_path / "p.toml"
        cfg.write_text('[gen]\nconfig = "nope.toml"\n')
        with pytest.raises(ConfigError, match="gen.config"):
            run_pipeline(cfg, tmp_path / "out")

    def test_config_needs_gen_or_inputs(self, tmp_path):
        cfg = tmp_path / "p.toml"
        cfg.write_text('[trend]\nneeds = ["ALL"]\n')
        with pytest.raises(ConfigError, match=r"\[gen\] or \[inputs\]"):
            run_pipeline(cfg, tmp_path / "out")

    def test_inputs_table_accepts_existing_logs(self, workdir, piperun, tmp_path):
        out, _ = piperun
        cfg = tmp_path / "p.toml"
        cfg.write_text(
            "[inputs]\n"
            f'logs = ["{out / "logs_2019.tsv"}", "{out / "logs_2020.tsv"}"]\n'
            f'crosswalk = "{out / "crosswalk.csv"}"\n'
            "[trend]\n"
            'needs = ["ALL"]\n'
            "boot = 50\n"
        )
        manifest = run_pipeline(cfg, tmp_path / "out")
        assert manifest.stages == ["classify", "aggregate", "trend"]
        tagged = (tmp_path / "out" / "tagged.tsv").read_bytes()
        assert tagged == (out / "tagged.tsv").read_bytes()


class TestResolveThreads:
    def test_default_is_serial(self, monkeypatch):
        monkeypatch.delenv("NEEDSCOPE_THREADS", raising=False)
        assert resolve_threads(None) == 1

    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv("NEEDSCOPE_THREADS", "4")
        assert resolve_threads(1) == 1

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("NEEDSCOPE_THREADS", "2")
        assert resolve_threads(None) == min(2, os.cpu_count() or 1)

    def test_env_must_be_integer(self, monkeypatch):
        monkeypatch.setenv("NEEDSCOPE_THREADS", "lots")
        with pytest.raises(ConfigError, match="NEEDSCOPE_THREADS"):
            resolve_threads(None)

    def test_nonpositive_means_serial(self):
        assert resolve_threads(0) == 1
        assert resolve_threads(-3) == 1

    def test_capped_at_cpu_count(self):
        assert resolve_threads(10_000) <= (os.cpu_count() or 1)


class TestCli:
    def setup_method(self):
        self.runner = CliRunner()

    def test_help(self):
        result = self.runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ("gen", "classify", "aggregate", "trend", "correlate",
                        "eval", "taxonomy", "pipeline"):
            assert command in result.output

    def test_taxonomy_validate_bundled(self):
        result = self.runner.invoke(main, ["taxonomy", "validate"])
        assert result.exit_code == 0
        assert result.output.startswith("ok:")

    def test_taxonomy_stats(self):
        result = self.runner.invoke(main, ["taxonomy", "stats"])
        assert result.exit_code == 0
        assert "detectors:" in result.output

    def test_taxonomy_validate_bad_file(self, tmp_path):
        bad = tmp_path / "bad.needs"
        bad.write_text("version 1.0\ndetector X1\n")
        result = self.runner.invoke(main, ["taxonomy", "validate", str(bad)])
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_classify_missing_input_is_config_error(self, tmp_path):
        result = self.runner.invoke(
            main,
            ["classify", "--input", str(tmp_path / "nope.tsv"),
             "--output", str(tmp_path / "out.tsv")],
        )
        assert result.exit_code == 2
        assert "no such file" in result.output

    def test_gen_bad_toml(self, tmp_path):
        cfg = tmp_path / "gen.toml"
        cfg.write_text("seed = [broken\n")
        result = self.runner.invoke(
            main, ["gen", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]
        )
        assert result.exit_code == 2

    def test_pipeline_missing_taxonomy_file(self, tmp_path):
        cfg = tmp_path / "p.toml"
        cfg.write_text('[pipeline]\ntaxonomy = "missing.needs"\n[gen]\nconfig = "g.toml"\n')
        result = self.runner.invoke(
            main, ["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        assert "pipeline.taxonomy" in result.output

    def test_trend_unknown_need_is_runtime_error(self, piperun, tmp_path):
        out, _ = piperun
        result = self.runner.invoke(
            main,
            ["trend", "--cube", str(out / "cube_zip_day.tsv"), "--need", "X99",
             "--output", str(tmp_path / "t.tsv")],
        )
        assert result.exit_code == 1
        assert "error:" in result.output

    def test_pipeline_end_to_end_matches_library_run(self, workdir, piperun, tmp_path):
        out, _ = piperun
        cli_out = tmp_path / "cli_run"
        result = self.runner.invoke(
            main,
            ["pipeline", "--config", str(workdir / "pipeline.toml"),
             "--out-dir", str(cli_out)],
        )
        assert result.exit_code == 0, result.output
        for name in DATA_FILES:
            assert (cli_out / name).read_bytes() == (out / name).read_bytes(), name
