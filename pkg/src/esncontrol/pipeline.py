"""Experiment orchestration: configs, pipeline operations, file outputs.

Every operation is a pure function of (RunConfig, input files, seed): reruns
with the same configuration produce byte-identical CSV/JSON outputs. Episode
evaluation advances fixed-size episode chunks in lockstep (the chunk size comes
from the config, not the worker count, so results do not depend on the degree
of parallelism), and all strategies in one evaluation share the same initial
conditions for paired comparisons.

Timing side-channels (decision latencies, tuning wall times) are written to
separate ``*.log`` sidecars so the deterministic outputs stay byte-stable.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal

from threadpoolctl import threadpool_limits

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .controllers import (ControllerSpec, HorizonConfig, PidGains,
                          run_episode_batch)
from .esn import EsnModel, EsnParams, _activations, build, train
from .mfe import (ActuationConfig, LAMINAR_STATE, MfeParams, N_MODES,
                  Trajectory, _integrate_states, generate_dataset,
                  kinetic_energy)
from .rewards import RewardConfig
from .storage import (file_sha256, load_dataset, load_model, save_dataset,
                      save_model, sha256_of, write_csv)
from .tuning import Dimension, SearchSpace, optimize

DESK_SCALE_NOTE = ("desk-scale run: episode counts are orders of magnitude below "
                   "production-scale statistics; treat ratios as qualitative")


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MfeConfig(_StrictModel):
    re_base: float = 400.0
    re_ctrl: float = 2000.0
    lx: float = 4.0 * math.pi
    lz: float = 2.0 * math.pi
    integrator_dt: float = 0.05
    sample_dt: float = 0.25
    blowup_bound: float = 1.0e3
    lyapunov_exponent: float = 0.0163

    def to_params(self) -> MfeParams:
        return MfeParams(**self.model_dump())


class DatasetConfig(_StrictModel):
    n_train_series: int = 50
    n_val_series: int = 20
    length_lt: float = 20.0
    washout_lt: float = 10.0
    perturbation_scale: float = 0.1
    # training series are excited with random interval actuation so the
    # surrogate sees both Reynolds regimes; validation series are uncontrolled
    train_actuation_p_on: float = 0.5
    train_actuation_interval: float = 10.0
    relaminarization_tol: float = 1e-6
    relaminarization_window_lt: float = 1.0
    max_retries: int = 20


class EsnConfig(_StrictModel):
    n_reservoir: int = 256
    sigma_in: float = 0.12
    sigma_c: float = 0.06
    rho: float = 0.0
    ridge_lambda: float = 1e-8
    density: float = 0.03
    bias: bool = True
    seed: int = 7

    def to_params(self, mfe: MfeConfig) -> EsnParams:
        return EsnParams(n_reservoir=self.n_reservoir, sigma_in=self.sigma_in,
                         sigma_c=self.sigma_c, rho=self.rho,
                         ridge_lambda=self.ridge_lambda, density=self.density,
                         bias=self.bias, seed=self.seed, esn_dt=mfe.sample_dt,
                         re_base=mfe.re_base, re_ctrl=mfe.re_ctrl)


class HorizonConfigModel(_StrictModel):
    tau_hor_lt: float = 4.0
    tau_opt_lt: float = 1.0
    control_interval: float = 10.0

    def to_horizon(self, mfe: MfeConfig) -> HorizonConfig:
        return HorizonConfig(tau_hor_lt=self.tau_hor_lt, tau_opt_lt=self.tau_opt_lt,
                             control_interval=self.control_interval,
                             action_set=(mfe.re_base, mfe.re_ctrl))


class RewardConfigModel(_StrictModel):
    k_e: float = 0.1
    r_event: float = -1.0
    r_control: float = -0.15

    def to_config(self) -> RewardConfig:
        return RewardConfig(**self.model_dump())


class PidGainsModel(_StrictModel):
    k_p: float = 1.0
    k_d: float = 0.0
    k_i: float = 0.0
    tau_i: float = 1.0
    k_c: float = 0.1

    def to_gains(self) -> PidGains:
        return PidGains(**self.model_dump())


class ControllersConfig(_StrictModel):
    # thresholds/gains pinned by the shipped tuning run; `tune` re-derives them
    p_esn: PidGainsModel = PidGainsModel(k_p=1.0, k_c=0.09)
    pid: PidGainsModel = PidGainsModel(k_p=1.0, k_d=1.0, k_i=0.0, tau_i=1.0, k_c=0.1)


class EvaluationConfig(_StrictModel):
    n_episodes: int = 200
    episode_length_lt: float = 20.0
    ic_washout_lt: float = 10.0
    # episodes start outside an extreme event; None disables the conditioning
    ic_k_max: float | None = 0.1
    chunk_size: int = 50
    strategies: list[str] = Field(default_factory=lambda: [
        "NC", "AC", "PID_DIRECT", "LIT_THRESHOLD", "P_ESN", "MPC"])
    max_failure_rate: float = 0.01
    write_traces: bool = False


class TuningDimModel(_StrictModel):
    low: float
    high: float
    scale: Literal["linear", "log"] = "linear"


def _default_spaces() -> dict:
    return {
        "P_ESN": {"k_c": TuningDimModel(low=0.02, high=0.1)},
        "PID_DIRECT": {
            "k_d": TuningDimModel(low=1e-2, high=1e2, scale="log"),
            "k_i": TuningDimModel(low=1e-4, high=1.0, scale="log"),
            "tau_i": TuningDimModel(low=1.0, high=100.0, scale="log"),
            "k_c": TuningDimModel(low=0.02, high=0.1),
        },
    }


class TuningConfig(_StrictModel):
    budget: int = 16
    n_val_episodes: int = 20
    episode_length_lt: float = 20.0
    mode: Literal["gp", "grid"] = "gp"
    spaces: dict[str, dict[str, TuningDimModel]] = Field(default_factory=_default_spaces)


class PdfConfig(_StrictModel):
    bins: int = 100
    k_min: float = 0.0
    k_max: float = 0.3


class RunConfig(_StrictModel):
    """Complete description of a run; everything downstream derives from it."""

    schema_version: Literal[1] = 1
    seed: int = 0
    output_dir: str = "runs/default"
    mfe: MfeConfig = MfeConfig()
    dataset: DatasetConfig = DatasetConfig()
    esn: EsnConfig = EsnConfig()
    horizon: HorizonConfigModel = HorizonConfigModel()
    reward: RewardConfigModel = RewardConfigModel()
    controllers: ControllersConfig = ControllersConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    tuning: TuningConfig = TuningConfig()
    pdf: PdfConfig = PdfConfig()


def config_hash(cfg: RunConfig) -> str:
    """Hash of the experiment definition; the output location does not matter."""
    payload = cfg.model_dump(mode="json")
    payload.pop("output_dir", None)
    return sha256_of(payload)


def load_config(path) -> RunConfig:
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


# seed stream offsets; one run seed fans out into disjoint generator streams
_SEED_TRAIN, _SEED_VAL, _SEED_ICS, _SEED_TUNE = 1, 2, 3, 4


def _derived_seed(cfg: RunConfig, stream: int) -> int:
    return cfg.seed * 1000 + stream


def _write_manifest(out_dir: Path, op: str, cfg: RunConfig, files: list[str],
                    extra: dict | None = None) -> dict:
    manifest = {
        "tool_version": __version__,
        "operation": op,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "scale_note": DESK_SCALE_NOTE,
        "files": {name: file_sha256(out_dir / name) for name in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"manifest_{op}.json"
    from .storage import canonical_json
    path.write_text(canonical_json(manifest), encoding="utf-8")
    manifest["manifest_path"] = str(path)
    return manifest


def op_generate(cfg: RunConfig, out_dir) -> dict:
    """Generate the training and validation datasets plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = cfg.mfe.to_params()
    d = cfg.dataset
    actuation = ActuationConfig(switch_interval=d.train_actuation_interval,
                                p_on=d.train_actuation_p_on)
    common = dict(length_lt=d.length_lt, p=p, washout_lt=d.washout_lt,
                  perturbation_scale=d.perturbation_scale,
                  relaminarization_tol=d.relaminarization_tol,
                  relaminarization_window_lt=d.relaminarization_window_lt,
                  max_retries=d.max_retries)
    train_set = generate_dataset(d.n_train_series, seed=_derived_seed(cfg, _SEED_TRAIN),
                                 actuation=actuation, **common)
    val_set = generate_dataset(d.n_val_series, seed=_derived_seed(cfg, _SEED_VAL),
                               actuation=None, **common)
    save_dataset(out_dir / "dataset_train.json", train_set, p,
                 seed=_derived_seed(cfg, _SEED_TRAIN),
                 meta={"role": "train", "actuated": True})
    save_dataset(out_dir / "dataset_val.json", val_set, p,
                 seed=_derived_seed(cfg, _SEED_VAL),
                 meta={"role": "validation", "actuated": False})
    if d.n_train_series == 0:
        import warnings
        warnings.warn("generated an empty training dataset", stacklevel=2)
    manifest = _write_manifest(out_dir, "generate", cfg,
                               ["dataset_train.json", "dataset_val.json"],
                               {"n_train_series": d.n_train_series,
                                "n_val_series": d.n_val_series})
    return {"train_path": str(out_dir / "dataset_train.json"),
            "val_path": str(out_dir / "dataset_val.json"),
            "n_train_series": d.n_train_series, "n_val_series": d.n_val_series,
            "manifest": manifest}


def one_step_errors(model: EsnModel, dataset: list[Trajectory]) -> np.ndarray:
    """Relative one-step prediction errors of the surrogate over a dataset."""
    errs = []
    for t in dataset:
        u = model.encode_action(t.re[:-1])
        pred = _activations(model, t.states[:-1], u) @ model.w_out
        norm = np.linalg.norm(t.states[1:], axis=1)
        errs.append(np.linalg.norm(pred - t.states[1:], axis=1) / np.maximum(norm, 1e-300))
    return np.concatenate(errs)


def op_train(cfg: RunConfig, dataset_path, out_dir, val_path=None) -> dict:
    """Train the surrogate on a dataset file and write the model + skill report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, p, _, _ = load_dataset(dataset_path)
    model = train(build(cfg.esn.to_params(cfg.mfe)), dataset)
    save_model(out_dir / "model.json", model)

    report = {"n_series": len(dataset),
              "n_samples": int(sum(len(t) - 1 for t in dataset))}
    for name, path in [("train", dataset_path), ("validation", val_path)]:
        if path is None:
            continue
        ds = dataset if name == "train" else load_dataset(path)[0]
        errs = one_step_errors(model, ds)
        report[f"one_step_{name}"] = {
            "median_rel_error": float(np.median(errs)),
            "mean_rel_error": float(np.mean(errs)),
            "p90_rel_error": float(np.quantile(errs, 0.9)),
        }
    from .storage import canonical_json
    (out_dir / "train_report.json").write_text(canonical_json(report), encoding="utf-8")
    manifest = _write_manifest(out_dir, "train", cfg, ["model.json", "train_report.json"])
    return {"model_path": str(out_dir / "model.json"), "report": report,
            "manifest": manifest}


def make_initial_conditions(n: int, seed: int, p: MfeParams, washout_lt: float = 10.0,
                            k_max: float | None = 0.1,
                            perturbation_scale: float = 0.1,
                            relaminarization_tol: float = 1e-6,
                            max_draws_factor: int = 20) -> np.ndarray:
    """Draw attractor states for episode starts.

    Each candidate runs a washout from a randomly perturbed laminar state; it is
    accepted if it has not relaminarized and (when ``k_max`` is set) its
    observable lies below ``k_max``, i.e. the episode starts outside an extreme
    event. Deterministic for fixed seed.
    """
    n_washout = round(p.lt_to_time(washout_lt) / p.sample_dt)
    accepted: list[np.ndarray] = []
    draws = 0
    limit = max(10, max_draws_factor * max(n, 1))
    while len(accepted) < n:
        if draws >= limit:
            raise RuntimeError(
                f"could not draw {n} initial conditions in {limit} washouts")
        rng = np.random.default_rng(np.random.SeedSequence([seed, draws]))
        q0 = LAMINAR_STATE.copy()
        q0[1:] += rng.normal(0.0, perturbation_scale, N_MODES - 1)
        states, blow = _integrate_states(q0, np.full(n_washout, p.re_base), p)
        draws += 1
        if blow >= 0:
            continue
        q_end = states[-1]
        k_end = kinetic_energy(q_end)
        if abs(k_end - 0.5) < relaminarization_tol:
            continue
        if k_max is not None and k_end >= k_max:
            continue
        accepted.append(q_end)
    return np.array(accepted)


def _controller_spec(kind: str, cfg: RunConfig, model: EsnModel | None,
                     gains_override: PidGains | None = None) -> ControllerSpec:
    horizon = cfg.horizon.to_horizon(cfg.mfe)
    gains = gains_override
    if gains is None:
        if kind == "P_ESN":
            gains = cfg.controllers.p_esn.to_gains()
        elif kind == "PID_DIRECT":
            gains = cfg.controllers.pid.to_gains()
    return ControllerSpec(kind=kind, gains=gains, horizon=horizon, model=model)


def _chunks(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _episode_chunk_task(args):
    """Worker entry point; one BLAS thread per process avoids oversubscription."""
    spec, ics_chunk, length_lt, p, rcfg = args
    with threadpool_limits(limits=1):
        return run_episode_batch(ics_chunk, spec, length_lt, p, rcfg)


def _evaluate_strategy(spec: ControllerSpec, ics: np.ndarray, cfg: RunConfig,
                       p: MfeParams, rcfg: RewardConfig, workers: int):
    """Run all episodes of one strategy in fixed-size lockstep chunks.

    Chunk boundaries come from the config, never from the worker count, and
    chunks are merged in index order, so results are identical for any degree
    of parallelism. Workers are separate processes (the rollout arithmetic is
    numpy-bound, so threads would serialize on the interpreter lock).
    """
    chunks = _chunks(len(ics), cfg.evaluation.chunk_size)
    tasks = [(spec, ics[r.start:r.stop], cfg.evaluation.episode_length_lt, p, rcfg)
             for r in chunks]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_episode_chunk_task, tasks))
    else:
        parts = [_episode_chunk_task(t) for t in tasks]
    return [res for part in parts for res in part]


def op_evaluate(cfg: RunConfig, model_path, out_dir, workers: int = 1,
                strategies: list[str] | None = None) -> dict:
    """Evaluate controller strategies on a shared set of episodes.

    Writes one row per episode (``episodes.csv``) and a per-strategy summary
    with mean reward, event/control ratios and their standard errors
    (``summary.csv``). Episode failures are recorded and tolerated up to the
    configured failure rate, beyond which the operation raises.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strategies = (list(cfg.evaluation.strategies) if strategies is None
                  else list(strategies))
    if not strategies:
        raise ValueError("at least one strategy is required")
    unknown = [k for k in strategies if k not in
               ("NC", "AC", "PID_DIRECT", "P_ESN", "MPC", "LIT_THRESHOLD")]
    if unknown:
        raise ValueError(f"unknown strategies: {unknown}")
    p = cfg.mfe.to_params()
    rcfg = cfg.reward.to_config()
    needs_model = any(k in ("P_ESN", "MPC", "LIT_THRESHOLD") for k in strategies)
    model = load_model(model_path) if (needs_model and model_path) else None
    if needs_model and model is None:
        raise ValueError("these strategies require a trained model file")

    ics = make_initial_conditions(
        cfg.evaluation.n_episodes, _derived_seed(cfg, _SEED_ICS), p,
        washout_lt=cfg.evaluation.ic_washout_lt, k_max=cfg.evaluation.ic_k_max,
        perturbation_scale=cfg.dataset.perturbation_scale,
        relaminarization_tol=cfg.dataset.relaminarization_tol)

    episode_rows, summary_rows = [], []
    per_strategy = {}
    n_failed_total = 0
    for kind in strategies:
        spec = _controller_spec(kind, cfg, model)
        results = _evaluate_strategy(spec, ics, cfg, p, rcfg, workers)
        ok = [r.metrics for r in results if not r.failed]
        n_failed = sum(r.failed for r in results)
        n_failed_total += n_failed
        for i, r in enumerate(results):
            m = r.metrics
            episode_rows.append([kind, i, m.avg_reward, m.p_event, m.p_control,
                                 m.n_steps, m.n_event, m.n_control, r.failed])
        rewards_arr = np.array([m.avg_reward for m in ok])
        steps = sum(m.n_steps for m in ok)
        events = sum(m.n_event for m in ok)
        controls = sum(m.n_control for m in ok)
        pe = events / steps if steps else float("nan")
        pc = controls / steps if steps else float("nan")
        summary_rows.append([
            kind, len(results), n_failed,
            float(np.mean(rewards_arr)) if len(ok) else float("nan"),
            float(np.std(rewards_arr, ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0,
            pe, math.sqrt(pe * (1 - pe) / steps) if steps else float("nan"),
            pc, math.sqrt(pc * (1 - pc) / steps) if steps else float("nan"),
        ])
        per_strategy[kind] = results

    write_csv(out_dir / "episodes.csv",
              ["strategy", "episode", "avg_reward", "p_event", "p_control",
               "n_steps", "n_event", "n_control", "failed"], episode_rows)
    write_csv(out_dir / "summary.csv",
              ["strategy", "n_episodes", "n_failed", "mean_reward", "se_reward",
               "p_event", "se_p_event", "p_control", "se_p_control"], summary_rows)
    files = ["episodes.csv", "summary.csv"]
    if cfg.evaluation.write_traces:
        _write_traces(out_dir, per_strategy, cfg, p, rcfg)
    manifest = _write_manifest(out_dir, "evaluate", cfg, files,
                               {"n_episodes": cfg.evaluation.n_episodes,
                                "strategies": strategies})

    failure_rate = n_failed_total / max(1, len(strategies) * len(ics))
    if failure_rate > cfg.evaluation.max_failure_rate:
        raise RuntimeError(
            f"episode failure rate {failure_rate:.3%} exceeds the configured "
            f"maximum {cfg.evaluation.max_failure_rate:.3%}")
    return {"episodes_path": str(out_dir / "episodes.csv"),
            "summary_path": str(out_dir / "summary.csv"),
            "summary": [dict(zip(["strategy", "n_episodes", "n_failed",
                                  "mean_reward", "se_reward", "p_event",
                                  "se_p_event", "p_control", "se_p_control"], row))
                        for row in summary_rows],
            "manifest": manifest}


def _write_traces(out_dir: Path, per_strategy: dict, cfg: RunConfig,
                  p: MfeParams, rcfg: RewardConfig) -> None:
    """Per-control-step traces; latency is wall time and not reproducible."""
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    stride = max(1, round(cfg.horizon.control_interval / p.sample_dt))
    for kind, results in per_strategy.items():
        for i, res in enumerate(results):
            t = res.trajectory
            idx = np.arange(0, len(t) - 1, stride)
            lat = res.decision_latency
            rows = [[t.times[j], t.k[j], t.re[j],
                     rcfg.r_event * (t.k[j] > rcfg.k_e)
                     + rcfg.r_control * (t.re[j] != p.re_base),
                     lat[d] if lat is not None and d < len(lat) else ""]
                    for d, j in enumerate(idx)]
            rows.append(["summary", res.metrics.avg_reward, res.metrics.p_event,
                         res.metrics.p_control, res.failed])
            write_csv(trace_dir / f"{kind}_ep{i:04d}.csv",
                      ["time", "k", "action", "reward", "latency_s"], rows)


def tune_controller(cfg: RunConfig, kind: str, model: EsnModel | None,
                    budget: int | None = None):
    """Tune a controller's free parameters by maximizing mean validation reward.

    Validation episodes use frozen seeds shared across all candidate points
    (common random numbers). Returns (best PidGains, history).
    """
    if kind not in cfg.tuning.spaces:
        raise ValueError(f"no search space configured for controller {kind!r}")
    space_cfg = cfg.tuning.spaces[kind]
    space = SearchSpace(tuple(
        Dimension(name=name, low=dim.low, high=dim.high, scale=dim.scale)
        for name, dim in space_cfg.items()))
    p = cfg.mfe.to_params()
    rcfg = cfg.reward.to_config()
    ics = make_initial_conditions(
        cfg.tuning.n_val_episodes, _derived_seed(cfg, _SEED_TUNE), p,
        washout_lt=cfg.evaluation.ic_washout_lt, k_max=cfg.evaluation.ic_k_max,
        perturbation_scale=cfg.dataset.perturbation_scale,
        relaminarization_tol=cfg.dataset.relaminarization_tol)
    base = (cfg.controllers.p_esn if kind == "P_ESN" else cfg.controllers.pid).to_gains()

    def objective(point: dict[str, float]) -> float:
        gains = PidGains(**{**base.__dict__, **point})
        spec = _controller_spec(kind, cfg, model, gains_override=gains)
        results = run_episode_batch(ics, spec, cfg.tuning.episode_length_lt, p, rcfg)
        ok = [r.metrics.avg_reward for r in results if not r.failed]
        if not ok:
            raise RuntimeError("all validation episodes failed")
        return float(np.mean(ok))

    best_point, history = optimize(objective, space,
                                   budget=budget or cfg.tuning.budget,
                                   seed=_derived_seed(cfg, _SEED_TUNE),
                                   mode=cfg.tuning.mode)
    best = PidGains(**{**base.__dict__, **best_point})
    return best, history


def op_tune(cfg: RunConfig, kind: str, model_path, out_dir,
            budget: int | None = None) -> dict:
    """Tune one controller and write the history CSV plus the tuned gains."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(model_path) if model_path else None
    t_start = time.perf_counter()
    best, history = tune_controller(cfg, kind, model, budget=budget)
    elapsed = time.perf_counter() - t_start

    names = sorted(history[0].point) if history else []
    rows = [[i, *[rec.point[n] for n in names], rec.objective, rec.seed, rec.failed]
            for i, rec in enumerate(history)]
    write_csv(out_dir / "tuning_history.csv",
              ["evaluation", *names, "objective", "seed", "failed"], rows)
    # wall time goes to a sidecar so the CSV stays byte-reproducible
    (out_dir / "tuning_walltime.log").write_text(
        f"controller={kind} evaluations={len(history)} wall_time_s={elapsed:.3f}\n",
        encoding="utf-8")
    from .storage import canonical_json
    tuned = {"controller": kind, "gains": best.__dict__,
             "objective": max(rec.objective for rec in history)}
    (out_dir / "tuned_gains.json").write_text(canonical_json(tuned), encoding="utf-8")
    manifest = _write_manifest(out_dir, "tune", cfg,
                               ["tuning_history.csv", "tuned_gains.json"],
                               {"controller": kind})
    return {"tuned_gains_path": str(out_dir / "tuned_gains.json"),
            "history_path": str(out_dir / "tuning_history.csv"),
            "gains": best.__dict__, "objective": tuned["objective"],
            "manifest": manifest}


def op_pdf(cfg: RunConfig, data_paths: list, out_dir) -> dict:
    """Histogram of the observable over trajectory files, normalized to unit mass.

    Only samples inside [k_min, k_max] enter the histogram; the density
    integrates to one over that range.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not data_paths:
        raise ValueError("at least one trajectory file is required")
    ks = []
    for path in data_paths:
        series, _, _, _ = load_dataset(path)
        ks.extend(t.k for t in series)
    k = np.concatenate(ks)
    pc = cfg.pdf
    counts, edges = np.histogram(k, bins=pc.bins, range=(pc.k_min, pc.k_max))
    total = counts.sum()
    if total == 0:
        raise ValueError("no samples fall inside the histogram range")
    width = edges[1] - edges[0]
    density = counts / (total * width)
    rows = [[edges[i], edges[i + 1], density[i], int(counts[i])]
            for i in range(pc.bins)]
    write_csv(out_dir / "pdf.csv", ["bin_left", "bin_right", "density", "count"], rows)
    manifest = _write_manifest(out_dir, "pdf", cfg, ["pdf.csv"],
                               {"n_samples": int(total)})
    return {"pdf_path": str(out_dir / "pdf.csv"), "n_samples": int(total),
            "mass_above_k_e": float(k[k > cfg.reward.k_e].size / k.size),
            "manifest": manifest}


def paired_greater_pvalue(diffs: np.ndarray) -> float:
    """One-sided p-value that the paired differences have positive mean."""
    diffs = np.asarray(diffs, dtype=np.float64)
    n = len(diffs)
    if n < 2:
        return 1.0
    sd = diffs.std(ddof=1)
    if sd == 0.0:
        return 0.0 if diffs.mean() > 0 else 1.0
    from scipy.stats import t as t_dist
    t_stat = diffs.mean() / (sd / math.sqrt(n))
    return float(t_dist.sf(t_stat, df=n - 1))
