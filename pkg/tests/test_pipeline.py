import json
from pathlib import Path

import numpy as np
import pytest

from esncontrol import pipeline as pl
from esncontrol.mfe import Trajectory
from esncontrol.storage import load_dataset, save_dataset


def tiny_config(out_dir, **overrides):
    cfg = pl.RunConfig(
        seed=5,
        output_dir=str(out_dir),
        dataset=pl.DatasetConfig(n_train_series=2, n_val_series=1,
                                 length_lt=1.0, washout_lt=2.0),
        esn=pl.EsnConfig(n_reservoir=24, ridge_lambda=1e-6),
        evaluation=pl.EvaluationConfig(n_episodes=4, episode_length_lt=0.5,
                                       chunk_size=2, strategies=["NC", "AC"]),
        tuning=pl.TuningConfig(budget=2, n_val_episodes=2,
                               episode_length_lt=0.5),
    )
    return cfg.model_copy(update=overrides) if overrides else cfg


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = pl.RunConfig()
        again = pl.RunConfig.model_validate(cfg.model_dump())
        assert cfg == again

    def test_unknown_key_is_hard_error(self):
        with pytest.raises(Exception):
            pl.RunConfig.model_validate({"schema_version": 1, "bogus_key": 1})
        with pytest.raises(Exception):
            pl.RunConfig.model_validate({"mfe": {"re_basis": 400.0}})

    def test_hash_stable_and_sensitive(self):
        a, b = pl.RunConfig(), pl.RunConfig()
        assert pl.config_hash(a) == pl.config_hash(b)
        c = pl.RunConfig(seed=1)
        assert pl.config_hash(a) != pl.config_hash(c)

    def test_load_config_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 9}))
        assert pl.load_config(path).seed == 9


class TestInitialConditions:
    def test_deterministic(self):
        p = pl.MfeConfig().to_params()
        a = pl.make_initial_conditions(3, seed=42, p=p, washout_lt=2.0)
        b = pl.make_initial_conditions(3, seed=42, p=p, washout_lt=2.0)
        np.testing.assert_array_equal(a, b)

    def test_event_conditioning(self):
        p = pl.MfeConfig().to_params()
        ics = pl.make_initial_conditions(5, seed=1, p=p, washout_lt=2.0, k_max=0.1)
        k = 0.5 * np.sum(ics * ics, axis=1)
        assert np.all(k < 0.1)

    def test_unconditioned(self):
        p = pl.MfeConfig().to_params()
        ics = pl.make_initial_conditions(3, seed=2, p=p, washout_lt=2.0, k_max=None)
        assert ics.shape == (3, 9)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    gen = pl.op_generate(cfg, out)
    tr = pl.op_train(cfg, gen["train_path"], out, val_path=gen["val_path"])
    return out, cfg, gen, tr


class TestOps:
    def test_generate_outputs(self, run_dir):
        out, cfg, gen, _ = run_dir
        assert Path(gen["train_path"]).exists()
        series, params, seed, meta = load_dataset(gen["train_path"])
        assert len(series) == 2
        assert meta["role"] == "train"
        assert params.re_base == cfg.mfe.re_base

    def test_generate_manifest_reproducible(self, run_dir, tmp_path):
        out, cfg, gen, _ = run_dir
        again = pl.op_generate(cfg, tmp_path)
        assert again["manifest"]["files"] == gen["manifest"]["files"]
        assert again["manifest"]["config_hash"] == gen["manifest"]["config_hash"]

    def test_train_report(self, run_dir):
        _, _, _, tr = run_dir
        rep = tr["report"]
        assert rep["n_series"] == 2
        assert "one_step_validation" in rep
        assert rep["one_step_train"]["median_rel_error"] < 0.5

    def test_evaluate_outputs_and_identities(self, run_dir):
        out, cfg, gen, tr = run_dir
        ev = pl.op_evaluate(cfg, tr["model_path"], out / "eval", workers=1)
        rows = {r["strategy"]: r for r in ev["summary"]}
        assert rows["AC"]["p_control"] == 1.0
        assert rows["NC"]["p_control"] == 0.0
        # NC reward identity R = -P_e holds in aggregate per episode
        text = Path(ev["episodes_path"]).read_text().splitlines()
        header = text[0].split(",")
        for line in text[1:]:
            vals = dict(zip(header, line.split(",")))
            if vals["strategy"] == "NC":
                assert float(vals["avg_reward"]) == -float(vals["p_event"])

    def test_evaluate_worker_count_does_not_change_results(self, run_dir):
        out, cfg, gen, tr = run_dir
        a = pl.op_evaluate(cfg, tr["model_path"], out / "w1", workers=1)
        b = pl.op_evaluate(cfg, tr["model_path"], out / "w2", workers=3)
        assert (Path(a["episodes_path"]).read_bytes()
                == Path(b["episodes_path"]).read_bytes())

    def test_evaluate_requires_strategy(self, run_dir):
        out, cfg, _, tr = run_dir
        with pytest.raises(ValueError):
            pl.op_evaluate(cfg, tr["model_path"], out / "none", strategies=[])

    def test_evaluate_model_required_for_surrogate_strategies(self, run_dir):
        out, cfg, _, _ = run_dir
        with pytest.raises(ValueError):
            pl.op_evaluate(cfg, None, out / "m", strategies=["P_ESN"])

    def test_failure_rate_gate(self, run_dir, tmp_path, monkeypatch):
        out, cfg, _, tr = run_dir
        real = pl.run_episode_batch

        def sabotage(q0, spec, length_lt, p, rcfg, **kwargs):
            results = real(q0, spec, length_lt, p, rcfg, **kwargs)
            for r in results:
                r.failed = True
                r.failure_time = 0.0
            return results

        monkeypatch.setattr(pl, "run_episode_batch", sabotage)
        with pytest.raises(RuntimeError, match="failure rate"):
            pl.op_evaluate(cfg, tr["model_path"], tmp_path, strategies=["NC"])

    def test_empty_dataset_warns(self, tmp_path):
        cfg = tiny_config(tmp_path)
        cfg.dataset.n_train_series = 0
        cfg.dataset.n_val_series = 0
        with pytest.warns(UserWarning, match="empty"):
            res = pl.op_generate(cfg, tmp_path)
        series, _, _, _ = load_dataset(res["train_path"])
        assert series == []

    def test_traces_written_with_latency(self, run_dir, tmp_path):
        out, cfg, _, tr = run_dir
        cfg = cfg.model_copy(deep=True)
        cfg.evaluation.write_traces = True
        cfg.evaluation.n_episodes = 2
        pl.op_evaluate(cfg, tr["model_path"], tmp_path, strategies=["NC"])
        trace = tmp_path / "traces" / "NC_ep0000.csv"
        lines = trace.read_text().splitlines()
        assert lines[0] == "time,k,action,reward,latency_s"
        assert lines[-1].startswith("summary,")
        first = lines[1].split(",")
        assert float(first[4]) >= 0.0  # latency column populated

    def test_tune_writes_history(self, run_dir):
        out, cfg, _, tr = run_dir
        res = pl.op_tune(cfg, "PID_DIRECT", None, out / "tune")
        lines = Path(res["history_path"]).read_text().splitlines()
        assert lines[0] == "evaluation,k_c,k_d,k_i,tau_i,objective,seed,failed"
        assert len(lines) == 1 + 2
        assert (out / "tune" / "tuning_walltime.log").exists()
        assert set(res["gains"]) == {"k_p", "k_d", "k_i", "tau_i", "k_c"}


class TestPdf:
    def test_constant_trajectory_single_bin(self, tmp_path):
        p = pl.MfeConfig().to_params()
        states = np.zeros((50, 9))
        states[:, 0] = np.sqrt(2 * 0.2)  # k = 0.2 everywhere
        traj = Trajectory(times=np.arange(50) * 0.25, states=states,
                          re=np.full(50, 400.0))
        save_dataset(tmp_path / "d.json", [traj], p)
        cfg = tiny_config(tmp_path)
        res = pl.op_pdf(cfg, [tmp_path / "d.json"], tmp_path)
        rows = Path(res["pdf_path"]).read_text().splitlines()[1:]
        densities = np.array([float(r.split(",")[2]) for r in rows])
        widths = 0.3 / 100
        assert np.count_nonzero(densities) == 1
        assert densities.sum() * widths == pytest.approx(1.0, abs=1e-9)

    def test_density_integrates_to_one(self, tmp_path):
        p = pl.MfeConfig().to_params()
        rng = np.random.default_rng(0)
        states = rng.normal(0, 0.2, (400, 9))
        traj = Trajectory(times=np.arange(400) * 0.25, states=states,
                          re=np.full(400, 400.0))
        save_dataset(tmp_path / "d.json", [traj], p)
        cfg = tiny_config(tmp_path)
        cfg.pdf.k_max = 3.0
        res = pl.op_pdf(cfg, [tmp_path / "d.json"], tmp_path)
        rows = Path(res["pdf_path"]).read_text().splitlines()[1:]
        mass = sum(float(r.split(",")[2]) * (float(r.split(",")[1]) - float(r.split(",")[0]))
                   for r in rows)
        assert mass == pytest.approx(1.0, abs=1e-9)

    def test_requires_input(self, tmp_path):
        with pytest.raises(ValueError):
            pl.op_pdf(tiny_config(tmp_path), [], tmp_path)


class TestDeterminism:
    def test_full_pipeline_rerun_byte_identical(self, tmp_path):
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            cfg = tiny_config(out)
            gen = pl.op_generate(cfg, out)
            tr = pl.op_train(cfg, gen["train_path"], out, val_path=gen["val_path"])
            pl.op_evaluate(cfg, tr["model_path"], out, workers=2)
            pl.op_pdf(cfg, [gen["val_path"]], out)
            pl.op_tune(cfg, "PID_DIRECT", None, out)
            blob = {}
            for name in ["dataset_train.json", "dataset_val.json", "model.json",
                         "train_report.json", "episodes.csv", "summary.csv",
                         "pdf.csv", "tuning_history.csv", "tuned_gains.json",
                         "manifest_generate.json", "manifest_train.json",
                         "manifest_evaluate.json", "manifest_pdf.json",
                         "manifest_tune.json"]:
                blob[name] = (out / name).read_bytes()
            outputs.append(blob)
        for name, data in outputs[0].items():
            assert data == outputs[1][name], f"{name} differs between reruns"


class TestPairedStats:
    def test_pvalue_behavior(self):
        rng = np.random.default_rng(0)
        clearly_positive = rng.normal(1.0, 0.1, 50)
        assert pl.paired_greater_pvalue(clearly_positive) < 1e-10
        symmetric = rng.normal(0.0, 1.0, 50)
        assert pl.paired_greater_pvalue(symmetric) > 0.01
        assert pl.paired_greater_pvalue(np.full(10, 0.5)) == 0.0
        assert pl.paired_greater_pvalue(np.full(10, -0.5)) == 1.0
        assert pl.paired_greater_pvalue(np.array([1.0])) == 1.0
