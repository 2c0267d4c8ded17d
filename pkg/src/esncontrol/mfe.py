"""Nine-mode shear-flow model (Moehlis-Faisst-Eckhardt) with Reynolds-number actuation.

The model is a Galerkin projection of sinusoidal shear flow onto nine Fourier-mode
compositions; the state is the vector of modal amplitudes q(t). The Reynolds number
enters only through the linear damping and the constant forcing of the first mode,
which is what makes it usable as a discrete actuation channel (switching between a
base and a control Reynolds number).

Provides the right-hand side, a fixed-step 4th-order Runge-Kutta integrator, the
kinetic-energy observable k = 0.5 * sum(q_i^2), and dataset generation for surrogate
training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, kept importable
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


N_MODES = 9

# Laminar fixed point: pure base shear profile, all other modes quiescent.
LAMINAR_STATE = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
LAMINAR_KINETIC_ENERGY = 0.5


class InvalidStateError(ValueError):
    """Raised when a state vector is malformed or non-finite."""


class BlowUpError(RuntimeError):
    """Raised when the integrator leaves the physically meaningful region."""

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"trajectory blow-up at t = {time:.6g}")


class GenerationError(RuntimeError):
    """Raised when dataset generation cannot produce enough usable series."""


@dataclass(frozen=True)
class MfeParams:
    """Geometry, actuation and discretization parameters of the nine-mode model.

    Lengths are in units of the channel half-height; time is in the model's
    non-dimensional units. ``lyapunov_exponent`` is the leading exponent used for
    Lyapunov-time conversions (1 LT = 1/lyapunov_exponent time units).
    """

    re_base: float = 400.0
    re_ctrl: float = 2000.0
    lx: float = 4.0 * math.pi
    lz: float = 2.0 * math.pi
    integrator_dt: float = 0.05
    sample_dt: float = 0.25
    blowup_bound: float = 1.0e3
    lyapunov_exponent: float = 0.0163

    def __post_init__(self):
        if self.lx <= 0 or self.lz <= 0:
            raise ValueError("domain lengths must be positive")
        if self.integrator_dt <= 0:
            raise ValueError("integrator_dt must be positive")
        if self.re_base <= 0 or self.re_ctrl <= 0:
            raise ValueError("Reynolds numbers must be positive")
        # sample_dt must be an integer multiple of integrator_dt
        ratio = self.sample_dt / self.integrator_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"sample_dt ({self.sample_dt}) is not an integer multiple of "
                f"integrator_dt ({self.integrator_dt})"
            )

    @property
    def alpha(self) -> float:
        return 2.0 * math.pi / self.lx

    @property
    def beta(self) -> float:
        return math.pi / 2.0

    @property
    def gamma(self) -> float:
        return 2.0 * math.pi / self.lz

    @property
    def steps_per_sample(self) -> int:
        return round(self.sample_dt / self.integrator_dt)

    @property
    def action_set(self) -> tuple[float, float]:
        return (self.re_base, self.re_ctrl)

    def lt_to_time(self, lt: float) -> float:
        return lt / self.lyapunov_exponent

    def time_to_lt(self, t: float) -> float:
        return t * self.lyapunov_exponent


def mode_coefficients(alpha, beta, gamma, sqrt=math.sqrt):
    """Coefficient table of the nine mode equations for a given geometry.

    Returns ``(forcing, damping, terms)`` such that

        dq_i/dt = (forcing[i] + damping[i] * q_i) / Re + sum_t c_t * q_j * q_k

    where ``terms`` is a list of ``(i, j, k, c)`` tuples for the quadratic
    (advective) interactions. The ``sqrt`` argument exists so the same expressions
    can be evaluated exactly with a symbolic backend.
    """
    a2, b2, g2 = alpha * alpha, beta * beta, gamma * gamma
    k_ag = sqrt(a2 + g2)
    k_bg = sqrt(b2 + g2)
    k_abg = sqrt(a2 + b2 + g2)
    s6 = sqrt(6)

    forcing = [b2, 0, 0, 0, 0, 0, 0, 0, 0]
    damping = [
        -b2,
        -(4 * b2 / 3 + g2),
        -(b2 + g2),
        -(3 * a2 + 4 * b2) / 3,
        -(a2 + b2),
        -(3 * a2 + 4 * b2 + 3 * g2) / 3,
        -(a2 + b2 + g2),
        -(a2 + b2 + g2),
        -9 * b2,
    ]

    bg_bg = beta * gamma / k_bg
    bg_abg = beta * gamma / k_abg
    abg_ag_bg = alpha * beta * gamma / (k_ag * k_bg)
    abg_ag_abg = alpha * beta * gamma / (k_ag * k_abg)

    terms = [
        (0, 5, 7, -(s6 / 2) * bg_abg),
        (0, 1, 2, (s6 / 2) * bg_bg),
        (1, 3, 5, (5 * s6 / 9) * g2 / k_ag),
        (1, 4, 6, -(s6 / 6) * g2 / k_ag),
        (1, 4, 7, -(s6 / 6) * abg_ag_abg),
        (1, 0, 2, -(s6 / 2) * bg_bg),
        (1, 2, 8, -(s6 / 2) * bg_bg),
        (2, 3, 6, (s6 / 3) * abg_ag_bg),
        (2, 4, 5, (s6 / 3) * abg_ag_bg),
        (2, 3, 7, (s6 / 6) * (b2 * (3 * a2 + g2) - 3 * g2 * (a2 + g2)) / (k_ag * k_bg * k_abg)),
        (3, 0, 4, -(s6 / 6) * alpha),
        (3, 1, 5, -(5 * s6 / 9) * a2 / k_ag),
        (3, 2, 6, -(s6 / 2) * abg_ag_bg),
        (3, 2, 7, -(s6 / 2) * a2 * b2 / (k_ag * k_bg * k_abg)),
        (3, 4, 8, -(s6 / 6) * alpha),
        (4, 0, 3, (s6 / 6) * alpha),
        (4, 1, 6, (s6 / 6) * a2 / k_ag),
        (4, 1, 7, -(s6 / 6) * abg_ag_abg),
        (4, 3, 8, (s6 / 6) * alpha),
        (4, 2, 5, (s6 / 3) * abg_ag_bg),
        (5, 0, 6, (s6 / 6) * alpha),
        (5, 0, 7, (s6 / 2) * bg_abg),
        (5, 1, 3, (5 * s6 / 9) * (a2 - g2) / k_ag),
        (5, 2, 4, -(2 * s6 / 3) * abg_ag_bg),
        (5, 6, 8, (s6 / 6) * alpha),
        (5, 7, 8, (s6 / 2) * bg_abg),
        (6, 0, 5, -(s6 / 6) * alpha),
        (6, 5, 8, -(s6 / 6) * alpha),
        (6, 1, 4, (s6 / 6) * (g2 - a2) / k_ag),
        (6, 2, 3, (s6 / 6) * abg_ag_bg),
        (7, 1, 4, (s6 / 3) * abg_ag_abg),
        (7, 2, 3, (s6 / 6) * g2 * (3 * a2 - b2 + 3 * g2) / (k_ag * k_bg * k_abg)),
        (8, 1, 2, (s6 / 2) * bg_bg),
        (8, 5, 7, -(s6 / 2) * bg_abg),
    ]
    return forcing, damping, terms


@dataclass(frozen=True)
class _PackedCoefficients:
    """Coefficient table packed into flat arrays for the integration kernel."""

    forcing: np.ndarray
    damping: np.ndarray
    qi: np.ndarray
    qj: np.ndarray
    qk: np.ndarray
    qc: np.ndarray


_COEFF_CACHE: dict[tuple[float, float], _PackedCoefficients] = {}


def _packed_coefficients(p: MfeParams) -> _PackedCoefficients:
    key = (p.lx, p.lz)
    cached = _COEFF_CACHE.get(key)
    if cached is not None:
        return cached
    forcing, damping, terms = mode_coefficients(p.alpha, p.beta, p.gamma)
    packed = _PackedCoefficients(
        forcing=np.asarray(forcing, dtype=np.float64),
        damping=np.asarray(damping, dtype=np.float64),
        qi=np.asarray([t[0] for t in terms], dtype=np.int64),
        qj=np.asarray([t[1] for t in terms], dtype=np.int64),
        qk=np.asarray([t[2] for t in terms], dtype=np.int64),
        qc=np.asarray([t[3] for t in terms], dtype=np.float64),
    )
    _COEFF_CACHE[key] = packed
    return packed


@njit(cache=True)
def _rhs_kernel(q, inv_re, forcing, damping, qi, qj, qk, qc, out):
    for i in range(9):
        out[i] = (forcing[i] + damping[i] * q[i]) * inv_re
    for t in range(qi.shape[0]):
        out[qi[t]] += qc[t] * q[qj[t]] * q[qk[t]]


@njit(cache=True)
def _integrate_kernel(q, re_seq, n_sub, dt, forcing, damping, qi, qj, qk, qc,
                      bound, out_states, out_sampled):
    """Advance q over len(re_seq) sample intervals of n_sub RK4 steps each.

    out_states[s] receives the state after sample interval s. Returns the
    integrator-step count at which a blow-up occurred, or -1 on success.
    ``out_sampled`` is unused scratch kept for signature stability.
    """
    n_samples = re_seq.shape[0]
    k1 = np.empty(9)
    k2 = np.empty(9)
    k3 = np.empty(9)
    k4 = np.empty(9)
    tmp = np.empty(9)
    step = 0
    for s in range(n_samples):
        inv_re = 1.0 / re_seq[s]
        for _ in range(n_sub):
            _rhs_kernel(q, inv_re, forcing, damping, qi, qj, qk, qc, k1)
            for i in range(9):
                tmp[i] = q[i] + 0.5 * dt * k1[i]
            _rhs_kernel(tmp, inv_re, forcing, damping, qi, qj, qk, qc, k2)
            for i in range(9):
                tmp[i] = q[i] + 0.5 * dt * k2[i]
            _rhs_kernel(tmp, inv_re, forcing, damping, qi, qj, qk, qc, k3)
            for i in range(9):
                tmp[i] = q[i] + dt * k3[i]
            _rhs_kernel(tmp, inv_re, forcing, damping, qi, qj, qk, qc, k4)
            for i in range(9):
                q[i] = q[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            step += 1
            for i in range(9):
                if not np.isfinite(q[i]) or abs(q[i]) > bound:
                    return step
        for i in range(9):
            out_states[s + 1, i] = q[i]
    return -1


@dataclass
class Trajectory:
    """Sampled trajectory: times, states, the Reynolds number held on each step, and k.

    ``re[i]`` is the action in effect on the interval [times[i], times[i+1]); the
    terminal entry repeats the last action so all arrays share one length.
    """

    times: np.ndarray
    states: np.ndarray
    re: np.ndarray
    k: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.k is None:
            self.k = kinetic_energy(self.states)
        n = len(self.times)
        if not (len(self.states) == len(self.re) == len(self.k) == n):
            raise ValueError("trajectory arrays must share one length")

    def __len__(self) -> int:
        return len(self.times)


def kinetic_energy(q) -> float | np.ndarray:
    """Kinetic energy of the flow state, k = 0.5 * sum_i q_i^2."""
    q = np.asarray(q, dtype=np.float64)
    return 0.5 * np.sum(q * q, axis=-1)


def _check_state(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (N_MODES,):
        raise InvalidStateError(f"state must have {N_MODES} components, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidStateError("state contains non-finite components")
    return q


def mfe_rhs(q, re: float, p: MfeParams) -> np.ndarray:
    """Time derivative of the modal amplitudes at Reynolds number ``re``."""
    q = _check_state(q)
    if re <= 0:
        raise ValueError("Reynolds number must be positive")
    c = _packed_coefficients(p)
    out = np.empty(N_MODES)
    _rhs_kernel(q, 1.0 / re, c.forcing, c.damping, c.qi, c.qj, c.qk, c.qc, out)
    return out


def _as_sample_schedule(schedule, n_samples: int, p: MfeParams) -> np.ndarray:
    if np.isscalar(schedule):
        re_seq = np.full(n_samples, float(schedule))
    else:
        re_seq = np.asarray(schedule, dtype=np.float64)
        if re_seq.shape != (n_samples,):
            raise ValueError(
                f"schedule must be a scalar or have one entry per sample interval "
                f"({n_samples}), got shape {re_seq.shape}"
            )
    if np.any(re_seq <= 0):
        raise ValueError("schedule contains non-positive Reynolds numbers")
    return re_seq


def integrate(q0, schedule, t_span: float, p: MfeParams) -> Trajectory:
    """Integrate the model over ``t_span`` with a piecewise-constant Re schedule.

    Classical fixed-step RK4 at ``p.integrator_dt``, sampled every ``p.sample_dt``.
    ``schedule`` is either a single Reynolds number or an array with one value per
    sample interval; the value at the left endpoint of each integrator step is
    applied for the whole step. Raises :class:`BlowUpError` if any component
    exceeds ``p.blowup_bound``.
    """
    q0 = _check_state(q0)
    if t_span <= 0:
        raise ValueError("t_span must be positive")
    n_samples = round(t_span / p.sample_dt)
    if abs(n_samples * p.sample_dt - t_span) > 1e-9 * max(1.0, t_span) or n_samples < 1:
        raise ValueError(
            f"t_span ({t_span}) must be a whole number of sample intervals ({p.sample_dt})"
        )
    re_seq = _as_sample_schedule(schedule, n_samples, p)
    states, blow_step = _integrate_states(q0, re_seq, p)
    if blow_step >= 0:
        raise BlowUpError(blow_step * p.integrator_dt)
    times = np.arange(n_samples + 1) * p.sample_dt
    re_out = np.append(re_seq, re_seq[-1])
    return Trajectory(times=times, states=states, re=re_out)


def _integrate_states(q0: np.ndarray, re_seq: np.ndarray, p: MfeParams):
    """Low-level integration: returns (states array, blow-up step or -1)."""
    c = _packed_coefficients(p)
    n_samples = len(re_seq)
    states = np.empty((n_samples + 1, N_MODES))
    states[0] = q0
    q = q0.copy()
    blow_step = _integrate_kernel(
        q, re_seq, p.steps_per_sample, p.integrator_dt,
        c.forcing, c.damping, c.qi, c.qj, c.qk, c.qc,
        p.blowup_bound, states, states,
    )
    return states, blow_step


@dataclass(frozen=True)
class ActuationConfig:
    """Random piecewise-constant actuation used to excite training data.

    The Reynolds number is redrawn every ``switch_interval`` time units: with
    probability ``p_on`` it is set to the control value, otherwise to the base
    value. This exposes the surrogate to both regimes and their transitions.
    """

    switch_interval: float = 10.0
    p_on: float = 0.5


def generate_dataset(
    n_series: int,
    length_lt: float,
    seed: int,
    p: MfeParams,
    washout_lt: float = 10.0,
    perturbation_scale: float = 0.1,
    actuation: ActuationConfig | None = None,
    relaminarization_tol: float = 1e-6,
    relaminarization_window_lt: float = 1.0,
    max_retries: int = 20,
) -> list[Trajectory]:
    """Generate attractor trajectories for surrogate training.

    Each series starts from a random perturbation of the laminar state, runs a
    washout of ``washout_lt`` Lyapunov times (discarded), then records
    ``length_lt`` Lyapunov times at the sampling interval. Series that
    relaminarize (k within ``relaminarization_tol`` of the laminar value for
    longer than ``relaminarization_window_lt``) are discarded and regenerated
    from a fresh seed. Deterministic for a fixed ``seed``.
    """
    if n_series < 0:
        raise ValueError("n_series must be non-negative")
    out: list[Trajectory] = []
    for i in range(n_series):
        traj = None
        for attempt in range(max_retries):
            traj = _generate_one(i, attempt, length_lt, seed, p, washout_lt,
                                 perturbation_scale, actuation,
                                 relaminarization_tol, relaminarization_window_lt)
            if traj is not None:
                break
        if traj is None:
            raise GenerationError(
                f"series {i}: no non-relaminarizing series within {max_retries} attempts"
            )
        out.append(traj)
    return out


def _generate_one(index, attempt, length_lt, seed, p, washout_lt, perturbation_scale,
                  actuation, relam_tol, relam_window_lt) -> Trajectory | None:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, attempt]))
    q0 = LAMINAR_STATE.copy()
    q0[1:] += rng.normal(0.0, perturbation_scale, N_MODES - 1)

    n_washout = round(p.lt_to_time(washout_lt) / p.sample_dt)
    n_record = round(p.lt_to_time(length_lt) / p.sample_dt)
    n_total = n_washout + n_record

    if actuation is None:
        re_seq = np.full(n_total, p.re_base)
    else:
        samples_per_switch = max(1, round(actuation.switch_interval / p.sample_dt))
        n_intervals = -(-n_total // samples_per_switch)
        on = rng.random(n_intervals) < actuation.p_on
        levels = np.where(on, p.re_ctrl, p.re_base)
        re_seq = np.repeat(levels, samples_per_switch)[:n_total]

    states, blow_step = _integrate_states(q0, re_seq, p)
    if blow_step >= 0:
        return None
    states = states[n_washout:]
    re_rec = np.append(re_seq[n_washout:], re_seq[-1])
    k = kinetic_energy(states)
    window = round(p.lt_to_time(relam_window_lt) / p.sample_dt)
    if _has_laminar_dwell(k, relam_tol, window):
        return None
    times = np.arange(n_record + 1) * p.sample_dt
    return Trajectory(times=times, states=states, re=re_rec, k=k)


def _has_laminar_dwell(k: np.ndarray, tol: float, window_samples: int) -> bool:
    """True if k stays within tol of the laminar value for more than the window."""
    near = np.abs(k - LAMINAR_KINETIC_ENERGY) < tol
    run = 0
    for flag in near:
        run = run + 1 if flag else 0
        if run > window_samples:
            return True
    return False
