"""Controllers and the controlled-episode runner.

Strategies:

* ``NC`` / ``AC`` - never / always actuate (reference baselines).
* ``PID_DIRECT`` - threshold-activated PID signal computed from the measured
  observable history (no surrogate).
* ``P_ESN`` - proportional control on the maximum of the surrogate-predicted
  observable over the lookahead horizon, rolled with the no-control action.
* ``LIT_THRESHOLD`` - same lookahead maximum, fixed activation threshold at the
  event level itself (the untuned predecessor strategy; a reconstruction, the
  original's exact criterion is not published).
* ``MPC`` - receding-horizon search over every discrete action sequence on the
  optimized slots, scored by the mean predicted step reward over the horizon.

Episodes alternate controller decisions (every ``control_interval`` time units,
observing only the true state at the decision time) with ground-truth
integration of the nine-mode dynamics holding the decided action.

All decision functions are pure in their inputs; the episode runner is
deterministic. A vectorized runner advances many episodes in lockstep so that
surrogate rollouts batch into large matrix operations.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .esn import EsnModel, rollout_batch
from .mfe import MfeParams, N_MODES, Trajectory, _integrate_states, kinetic_energy
from .rewards import EpisodeMetrics, RewardConfig, metrics_from_samples

CONTROLLER_KINDS = ("NC", "AC", "PID_DIRECT", "P_ESN", "MPC", "LIT_THRESHOLD")

# strategies whose decisions require a trained surrogate
_MODEL_KINDS = ("P_ESN", "MPC", "LIT_THRESHOLD")


@dataclass(frozen=True)
class PidGains:
    """Gains of the threshold-activated PID signal c = Kp k + Kd dk/dt + Ki int k.

    ``k_c`` is the activation threshold: the control action is applied while
    c > k_c. ``tau_i`` is the trailing window of the integral term.
    """

    k_p: float = 1.0
    k_d: float = 0.0
    k_i: float = 0.0
    tau_i: float = 1.0
    k_c: float = 0.1

    def __post_init__(self):
        if self.k_i != 0.0 and self.tau_i <= 0:
            raise ValueError("tau_i must be positive when k_i is nonzero")


@dataclass(frozen=True)
class HorizonConfig:
    """Lookahead and actuation cadence for the predictive controllers.

    Horizons are given in Lyapunov times; ``control_interval`` in time units.
    The optimized portion of the MPC horizon is split into
    floor(tau_opt / control_interval) decision slots; the remainder of the
    horizon evolves under the fixed no-control action.
    """

    tau_hor_lt: float = 4.0
    tau_opt_lt: float = 1.0
    control_interval: float = 10.0
    action_set: tuple[float, ...] = (400.0, 2000.0)

    def __post_init__(self):
        if self.tau_opt_lt > self.tau_hor_lt:
            raise ValueError("tau_opt_lt must not exceed tau_hor_lt")
        if self.control_interval <= 0:
            raise ValueError("control_interval must be positive")
        if len(self.action_set) < 1:
            raise ValueError("action_set must not be empty")

    def n_horizon_steps(self, esn_dt: float, lyapunov_exponent: float) -> int:
        return max(1, round(self.tau_hor_lt / lyapunov_exponent / esn_dt))

    def n_slots(self, lyapunov_exponent: float) -> int:
        return max(1, math.floor(self.tau_opt_lt / lyapunov_exponent
                                 / self.control_interval + 1e-9))

    def steps_per_interval(self, esn_dt: float) -> int:
        ratio = self.control_interval / esn_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"control_interval ({self.control_interval}) must be a whole number "
                f"of surrogate steps ({esn_dt})")
        return round(ratio)


@dataclass(frozen=True)
class ControllerSpec:
    """A controller strategy plus whatever configuration it needs."""

    kind: str
    gains: PidGains | None = None
    horizon: HorizonConfig | None = None
    model: EsnModel | None = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind in _MODEL_KINDS:
            if self.model is None or not self.model.trained:
                raise ValueError(f"{self.kind} requires a trained surrogate model")
            if self.horizon is None:
                raise ValueError(f"{self.kind} requires a horizon configuration")
        if self.kind in ("PID_DIRECT", "P_ESN") and self.gains is None:
            raise ValueError(f"{self.kind} requires PID gains")


def pid_signal(k_history, dt: float, gains: PidGains) -> float:
    """PID signal over a uniformly sampled observable history.

    The proportional term uses the latest sample, the derivative a backward
    difference (zero for a single-sample history), and the integral a
    trapezoidal rule over the trailing ``tau_i`` window, truncated at the start
    of the history.
    """
    k = np.asarray(k_history, dtype=np.float64)
    if k.ndim != 1 or len(k) == 0:
        raise ValueError("k_history must be a non-empty 1-d sequence")
    return float(_pid_signal_batch(k[None, :], dt, gains)[0])


def _pid_signal_batch(k: np.ndarray, dt: float, gains: PidGains) -> np.ndarray:
    """Vectorized PID signal; k has shape (B, n_samples)."""
    n = k.shape[1]
    c = gains.k_p * k[:, -1]
    if gains.k_d != 0.0 and n >= 2:
        c = c + gains.k_d * (k[:, -1] - k[:, -2]) / dt
    if gains.k_i != 0.0 and n >= 2:
        window = min(gains.tau_i, (n - 1) * dt)
        m_full = int(math.floor(window / dt + 1e-12))
        integral = np.zeros(k.shape[0])
        if m_full >= 1:
            seg = k[:, n - m_full - 1:]
            integral = dt * (0.5 * (seg[:, :-1] + seg[:, 1:])).sum(axis=1)
        frac = window - m_full * dt
        if frac > 1e-12:
            right = k[:, n - m_full - 1]
            left = right + (k[:, n - m_full - 2] - right) * (frac / dt)
            integral = integral + 0.5 * (left + right) * frac
        c = c + gains.k_i * integral
    return c


def _no_control_kmax(model: EsnModel, states: np.ndarray,
                     horizon: HorizonConfig, p: MfeParams) -> np.ndarray:
    """Max of current + predicted observable over the horizon, no-control rollout.

    Diverged rollouts report +inf, which downstream thresholding treats as a
    predicted event (fail-safe activation).
    """
    n_hor = horizon.n_horizon_steps(model.params.esn_dt, p.lyapunov_exponent)
    u = np.zeros(n_hor)
    _, k, _ = rollout_batch(model, states, u, n_hor, encoded=True)
    return k.max(axis=1)


def p_esn_decide(model: EsnModel, q, gains: PidGains, horizon: HorizonConfig,
                 p: MfeParams | None = None) -> float:
    """Proportional decision on the predicted observable maximum.

    Rolls the surrogate over the full horizon with the no-control action, takes
    the maximum of the current and predicted observable, and actuates when
    k_p * k_max exceeds the threshold. Derivative and integral terms are
    dropped because the maximum already summarizes the horizon.
    """
    p = p or MfeParams()
    q = np.asarray(q, dtype=np.float64).reshape(1, N_MODES)
    kmax = _no_control_kmax(model, q, horizon, p)[0]
    re_base, re_ctrl = horizon.action_set[0], horizon.action_set[-1]
    return re_ctrl if gains.k_p * kmax > gains.k_c else re_base


def lit_threshold_decide(model: EsnModel, q, horizon: HorizonConfig,
                         k_e: float = 0.1, p: MfeParams | None = None) -> float:
    """Predictive threshold decision at the event level itself (k_c = k_e)."""
    return p_esn_decide(model, q, PidGains(k_p=1.0, k_c=k_e), horizon, p)


def _candidate_table(model: EsnModel, horizon: HorizonConfig, p: MfeParams):
    """Enumerate every slot-action sequence and its per-step schedule.

    Returns (sequences, u_steps, n_ctrl_steps, n_ctrl_slots, n_hor) where
    sequences is the (C, n_slots) array of Reynolds numbers in lexicographic
    order of the action set, u_steps the (C, n_hor) encoded control inputs (the
    horizon tail beyond the optimized slots holds the no-control action), and
    the two count vectors support reward evaluation and tie-breaking.
    """
    esn_dt = model.params.esn_dt
    n_hor = horizon.n_horizon_steps(esn_dt, p.lyapunov_exponent)
    per_slot = horizon.steps_per_interval(esn_dt)
    n_slots = horizon.n_slots(p.lyapunov_exponent)
    n_slots = min(n_slots, max(1, n_hor // per_slot))
    re_base = horizon.action_set[0]

    seqs = np.array(list(itertools.product(horizon.action_set, repeat=n_slots)))
    c = len(seqs)
    re_steps = np.full((c, n_hor), re_base)
    prefix = np.repeat(seqs, per_slot, axis=1)[:, :n_hor]
    re_steps[:, :prefix.shape[1]] = prefix
    ctrl_steps = re_steps != re_base
    u_steps = model.encode_action(re_steps)
    return (seqs, u_steps, ctrl_steps.sum(axis=1).astype(np.int64),
            (seqs != re_base).sum(axis=1).astype(np.int64), n_hor)


def _mpc_decide_batch(model: EsnModel, states: np.ndarray, horizon: HorizonConfig,
                      rcfg: RewardConfig, p: MfeParams,
                      debug_checks: bool = False) -> np.ndarray:
    """Receding-horizon decision for a batch of states via complete search.

    Every candidate rollout is scored by the mean step reward over the horizon,
    computed from integer event/control step counts (so equal-scoring sequences
    tie exactly). Ties prefer fewer control slots, then the lexicographically
    first sequence. Diverged rollouts report +inf observables, i.e. every step
    of the diverged suffix counts as an event.
    """
    b = states.shape[0]
    seqs, u_steps, n_ctrl_steps, n_ctrl_slots, n_hor = _candidate_table(model, horizon, p)
    c = len(seqs)

    q0 = np.repeat(states, c, axis=0)
    schedules = np.tile(u_steps, (b, 1))
    _, k, _ = rollout_batch(model, q0, schedules, n_hor, encoded=True)
    n_event = (k[:, 1:] > rcfg.k_e).sum(axis=1).reshape(b, c)
    scores = (rcfg.r_event * n_event + rcfg.r_control * n_ctrl_steps[None, :]) / n_hor

    first = np.empty(b)
    lex = np.arange(c)
    for row in range(b):
        order = np.lexsort((lex, n_ctrl_slots, -scores[row]))
        best = order[0]
        if debug_checks:
            # the candidate set includes the all-no-control (first) and
            # all-control (last) sequences; the winner must dominate both
            assert scores[row, best] >= scores[row, 0]
            assert scores[row, best] >= scores[row, c - 1]
        first[row] = seqs[best, 0]
    return first


def mpc_decide(model: EsnModel, q, horizon: HorizonConfig, rcfg: RewardConfig,
               p: MfeParams | None = None, debug_checks: bool = False) -> float:
    """First action of the best-scoring candidate sequence (receding horizon)."""
    if len(horizon.action_set) < 2:
        raise ValueError("MPC needs at least two actions to choose from")
    p = p or MfeParams()
    q = np.asarray(q, dtype=np.float64).reshape(1, N_MODES)
    return float(_mpc_decide_batch(model, q, horizon, rcfg, p,
                                   debug_checks=debug_checks)[0])


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    metrics: EpisodeMetrics
    failed: bool = False
    failure_time: float | None = None
    # wall seconds per controller decision (shared across a lockstep batch);
    # diagnostic only, not reproducible across runs
    decision_latency: np.ndarray | None = None


def _decide_batch(spec: ControllerSpec, states: np.ndarray, k_hist: np.ndarray,
                  p: MfeParams, rcfg: RewardConfig,
                  debug_checks: bool = False) -> np.ndarray:
    """Batched controller decisions; returns the Reynolds number per episode."""
    b = states.shape[0]
    horizon = spec.horizon or HorizonConfig(action_set=(p.re_base, p.re_ctrl))
    re_base, re_ctrl = horizon.action_set[0], horizon.action_set[-1]
    if spec.kind == "NC":
        return np.full(b, re_base)
    if spec.kind == "AC":
        return np.full(b, re_ctrl)
    if spec.kind == "PID_DIRECT":
        c = _pid_signal_batch(k_hist, p.sample_dt, spec.gains)
        return np.where(c > spec.gains.k_c, re_ctrl, re_base)
    if spec.kind in ("P_ESN", "LIT_THRESHOLD"):
        gains = spec.gains if spec.kind == "P_ESN" else PidGains(k_p=1.0, k_c=rcfg.k_e)
        kmax = _no_control_kmax(spec.model, states, horizon, p)
        return np.where(gains.k_p * kmax > gains.k_c, re_ctrl, re_base)
    if spec.kind == "MPC":
        return _mpc_decide_batch(spec.model, states, horizon, rcfg, p,
                                 debug_checks=debug_checks)
    raise ValueError(f"unknown controller kind {spec.kind!r}")


def run_episode_batch(q0: np.ndarray, spec: ControllerSpec, length_lt: float,
                      p: MfeParams, rcfg: RewardConfig,
                      debug_checks: bool = False) -> list[EpisodeResult]:
    """Advance a batch of episodes in lockstep under one controller.

    All episodes share the decision cadence, so surrogate rollouts vectorize
    across the batch. Episodes whose ground-truth integration blows up are
    frozen at the failure point, flagged, and excluded from further stepping;
    the rest of the batch continues.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    if q0.ndim != 2 or q0.shape[1] != N_MODES:
        raise ValueError("q0 must have shape (n_episodes, 9)")
    b = q0.shape[0]
    horizon = spec.horizon or HorizonConfig(action_set=(p.re_base, p.re_ctrl))
    interval_samples = max(1, round(horizon.control_interval / p.sample_dt))
    n_samples = round(p.lt_to_time(length_lt) / p.sample_dt)
    if n_samples < 1:
        raise ValueError("episode too short for one sample interval")

    states = np.empty((b, n_samples + 1, N_MODES))
    k = np.empty((b, n_samples + 1))
    re = np.empty((b, n_samples + 1))
    states[:, 0] = q0
    k[:, 0] = kinetic_energy(q0)
    failed = np.zeros(b, dtype=bool)
    fail_time = np.full(b, np.nan)

    pos = 0
    latencies = []
    while pos < n_samples:
        block = min(interval_samples, n_samples - pos)
        t_decide = time.perf_counter()
        action = _decide_batch(spec, states[:, pos], k[:, :pos + 1], p, rcfg,
                               debug_checks=debug_checks)
        latencies.append((time.perf_counter() - t_decide) / b)
        for row in range(b):
            if failed[row]:
                states[row, pos + 1:pos + block + 1] = states[row, pos]
                re[row, pos:pos + block] = p.re_base
                continue
            seg, blow = _integrate_states(states[row, pos],
                                          np.full(block, action[row]), p)
            re[row, pos:pos + block] = action[row]
            if blow >= 0:
                # freeze at the last fully recorded sample before the failure
                completed = blow // p.steps_per_sample
                states[row, pos + 1:pos + completed + 1] = seg[1:completed + 1]
                states[row, pos + completed + 1:pos + block + 1] = seg[completed]
                failed[row] = True
                fail_time[row] = pos * p.sample_dt + blow * p.integrator_dt
            else:
                states[row, pos + 1:pos + block + 1] = seg[1:]
        k[:, pos + 1:pos + block + 1] = kinetic_energy(states[:, pos + 1:pos + block + 1])
        pos += block
    re[:, n_samples] = re[:, n_samples - 1]

    times = np.arange(n_samples + 1) * p.sample_dt
    latency_arr = np.asarray(latencies)
    out = []
    for row in range(b):
        traj = Trajectory(times=times.copy(), states=states[row], re=re[row], k=k[row])
        metrics = metrics_from_samples(k[row], re[row] != p.re_base, rcfg)
        out.append(EpisodeResult(trajectory=traj, metrics=metrics,
                                 failed=bool(failed[row]),
                                 failure_time=None if not failed[row] else float(fail_time[row]),
                                 decision_latency=latency_arr))
    return out


def run_episode(q0, spec: ControllerSpec, length_lt: float, p: MfeParams,
                rcfg: RewardConfig, seed: int = 0) -> tuple[Trajectory, EpisodeMetrics]:
    """Run one controlled episode against the ground-truth dynamics.

    The controller observes only the true state (and measured observable
    history) at each decision time; the decided action is held until the next
    decision. ``seed`` is accepted for interface stability; the episode is
    fully deterministic for the controllers implemented here.
    """
    del seed
    q0 = np.asarray(q0, dtype=np.float64).reshape(1, N_MODES)
    result = run_episode_batch(q0, spec, length_lt, p, rcfg)[0]
    if result.failed:
        from .mfe import BlowUpError
        raise BlowUpError(result.failure_time,
                          f"episode blow-up at t = {result.failure_time:.6g} "
                          f"under controller {spec.kind}")
    return result.trajectory, result.metrics
