import json
import shutil
import warnings

import numpy as np
import pandas as pd
import pytest

from qfluct import io as qio
from qfluct.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from qfluct.emulator import (
    ExperimentPlan,
    NoiseParams,
    NoiseSchedule,
    TimestampFallbackWarning,
    emulate_experiment,
)
from qfluct.pipeline import STAGES, ConfigError, PipelineConfig, run_pipeline

SMALL = {
    "seed": 11,
    "emulate": {"plan": {"n_repetitions": 800}},
    "fit": {"n_bootstrap": 5},
    "hdfa": {"n_lambda_candidates": 10, "spread": False},
    "psd": {"segment_length": 64},
}


def small_config(out, **extra):
    d = json.loads(json.dumps(SMALL))
    d.update(extra)
    d["output_dir"] = str(out)
    return PipelineConfig.from_dict(d)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config(out)
    return cfg, run_pipeline(cfg)


def plan_small(n=30, **kw):
    return ExperimentPlan(idle_times=np.linspace(0, 20e-6, 5), n_repetitions=n, **kw)


def numeric_outputs(manifest):
    return {k: v for k, v in manifest.output_digests().items() if "manifest" not in k}


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_config(tmp_path)
        p = tmp_path / "c.json"
        p.write_text(cfg.to_json())
        back = PipelineConfig.load(p)
        assert back.data == cfg.data and back.digest() == cfg.digest()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            PipelineConfig.from_dict({"average": {"widht": 3}})

    def test_set_and_validate(self):
        cfg = PipelineConfig.defaults()
        cfg.set("average.width", 3)
        assert cfg.width(0) == 3.0
        cfg.set("average.kind", "median")
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_per_qubit_width(self):
        cfg = PipelineConfig.from_dict({"average": {"width": {"0": 2, "2": 3, "default": 4}}})
        assert [cfg.width(q) for q in (0, 2, 4)] == [2.0, 3.0, 4.0]

    def test_typed_views(self):
        cfg = PipelineConfig.defaults()
        assert cfg.plan().n_tau == 33
        assert cfg.fit_config().seed == 0
        assert cfg.hierarchy_config().lam is None

    def test_cache_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv("QFLUCT_CACHE_DIR", str(tmp_path))
        cfg = PipelineConfig.defaults()
        assert cfg.output_dir.parent == tmp_path


class TestRecordsIo:
    def test_round_trip_bit_identical(self, tmp_path):
        plan = plan_small()
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(1e4, 8e3, 8e3), 30), seed=1)
        p = qio.write_records(rt, tmp_path / "r.csv")
        back = qio.read_records(p)[0]
        assert np.array_equal(back.outcomes, rt.outcomes)
        assert np.array_equal(back.times, rt.times)

    def test_three_qubits(self, tmp_path):
        plan = plan_small()
        tables = {q: emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(q * 1e4, 8e3, 8e3), 30),
                                        seed=q) for q in (0, 2, 4)}
        back = qio.read_records(qio.write_records(tables, tmp_path / "r.csv"))
        assert sorted(back) == [0, 2, 4]
        for q in (0, 2, 4):
            assert np.array_equal(back[q].outcomes, tables[q].outcomes)

    def test_schema_violation_line_number(self, tmp_path):
        plan = plan_small(n=4)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 8e3, 8e3), 4), seed=0)
        p = qio.write_records(rt, tmp_path / "r.csv")
        df = pd.read_csv(p)
        df.loc[6, "outcome"] = 2
        df.to_csv(p, index=False)
        with pytest.raises(qio.DataError, match="line 8"):
            qio.read_records(p)

    def test_missing_rows(self, tmp_path):
        plan = plan_small(n=4)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 8e3, 8e3), 4), seed=0)
        p = qio.write_records(rt, tmp_path / "r.csv")
        pd.read_csv(p).iloc[:-1].to_csv(p, index=False)
        with pytest.raises(qio.DataError, match="expected one record"):
            qio.read_records(p)

    def test_non_monotone_flagged(self, tmp_path):
        plan = plan_small(n=4)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 8e3, 8e3), 4), seed=0)
        p = qio.write_records(rt, tmp_path / "r.csv")
        df = pd.read_csv(p)
        df.iloc[::-1].to_csv(p, index=False)
        with pytest.warns(UserWarning, match="not monotone"):
            back = qio.read_records(p)[0]
        assert np.array_equal(back.outcomes, rt.outcomes)

    def test_missing_durations_fallback(self, tmp_path):
        plan = plan_small(n=10, n_scripts=2)
        rt = emulate_experiment(plan, NoiseSchedule.constant(NoiseParams(0, 8e3, 8e3), 20), seed=0)
        p = qio.write_records(rt, tmp_path / "r.csv")
        meta = qio.read_json(qio.meta_path(p))
        meta["plan"]["script_start_times"] = None
        meta["plan"]["script_durations"] = None
        with pytest.warns(TimestampFallbackWarning):
            back = qio.read_records(p, meta)[0]
        assert back.timestamp_fallback

    def test_table_schema_mismatch(self, tmp_path):
        p = qio.write_table(pd.DataFrame({"a": [1.0, 2.0]}), tmp_path / "t.csv")
        p.write_text("a\n1.0\nabc\n")
        with pytest.raises(qio.DataError, match="line 3"):
            qio.read_table(p)


class TestPipeline:
    def test_all_stages_ok(self, small_run):
        cfg, man = small_run
        assert man.ok and [s.name for s in man.stages] == list(STAGES)
        rep = qio.read_json(cfg.output_dir / "report" / "report.json")
        h = rep["qubits"]["0"]["hierarchy"]
        assert h[0]["active"] and h[0]["f_delta_mean"] == pytest.approx(30e3, rel=0.1)
        assert "transmon" in rep["physics"]

    def test_manifest_written(self, small_run):
        cfg, man = small_run
        m = qio.read_json(cfg.output_dir / "manifest.json")
        assert m["config_hash"] == cfg.digest()
        for s in m["stages"]:
            assert s["status"] == "ok" and s["wall_s"] >= 0
        for path, digest in man.output_digests().items():
            assert qio.file_digest(path) == digest

    def test_byte_identical_rerun(self, small_run, tmp_path):
        cfg, man = small_run
        man2 = run_pipeline(small_config(tmp_path))
        a = {k.replace(str(cfg.output_dir), ""): v for k, v in numeric_outputs(man).items()}
        b = {k.replace(str(tmp_path), ""): v for k, v in numeric_outputs(man2).items()}
        assert a == b

    def test_stage_isolation(self, small_run, tmp_path):
        cfg, man = small_run
        out = tmp_path / "iso"
        shutil.copytree(cfg.output_dir, out)
        for stage in ("rates", "physics", "report"):
            shutil.rmtree(out / stage)
        man2 = run_pipeline(small_config(out, stages=["rates", "physics", "report"]))
        assert man2.ok
        for path, digest in man2.output_digests().items():
            assert man.output_digests()[path.replace(str(out), str(cfg.output_dir))] == digest

    def test_no_stages(self, tmp_path):
        man = run_pipeline(small_config(tmp_path, stages=[]))
        assert man.ok and man.stages == []

    def test_missing_input_halts(self, tmp_path):
        man = run_pipeline(small_config(tmp_path, stages=["fit", "segment"]))
        assert [s.status for s in man.stages] == ["failed", "skipped"]
        assert isinstance(man.error, qio.DataError)
        assert qio.read_json(tmp_path / "manifest.json")["stages"][0]["status"] == "failed"


class TestCli:
    def test_config_init(self, capsys):
        assert main(["config", "init"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == PipelineConfig.defaults().data

    def test_config_error(self, tmp_path):
        assert main(["pipeline", "-o", str(tmp_path), "--set", "average.kind=median", "-q"]) == EXIT_CONFIG
        assert main(["pipeline", "-o", str(tmp_path), "--set", "nope=1", "-q"]) == EXIT_CONFIG

    def test_bad_config_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert main(["emulate", "-c", str(p)]) == EXIT_CONFIG

    def test_data_error(self, tmp_path):
        assert main(["average", "-o", str(tmp_path), "-q",
                     "--records", str(tmp_path / "missing.csv")]) == EXIT_DATA

    def test_empty_pipeline(self, tmp_path):
        assert main(["pipeline", "-o", str(tmp_path), "--stages", "", "-q"]) == EXIT_OK

    def test_single_stage_with_flags(self, tmp_path, capsys):
        args = ["-o", str(tmp_path), "--set", "emulate.plan.n_repetitions=50", "--seed", "3"]
        assert main(["emulate", *args]) == EXIT_OK
        assert main(["average", *args, "--width", "3", "--kind", "fixed"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "average" in out
        cfg = qio.read_json(tmp_path / "config.json")
        assert cfg["average"]["width"] == 3 and cfg["seed"] == 3
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            series = qio.read_probability_series(tmp_path / "average" / "q0.csv")
        assert series.kind == "fixed" and series.p.shape[0] == 50
