"""Feedforward echo-state surrogate of the actuated nine-mode dynamics.

The network maps (state, action) at one sample instant to the state one sampling
interval later:

    r(t+dt) = tanh(sigma_in * W_in @ q_in(t) + rho * W @ r(t) + sigma_c * W_c @ u(t))
    q_hat(t+dt) = W_out.T @ r(t+dt)

W_in, W and W_c are random and fixed; only the readout W_out is trained, by ridge
regression. With rho = 0 (the default) the recurrence drops out and the network is
a plain random-feature map: predictions depend only on the current input, which
matches the Markovian structure of the underlying discrete-time dynamics.

The scalar action is encoded as u = (Re - re_base) / (re_ctrl - re_base), so the
no-control case is an exact zero input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .mfe import N_MODES, Trajectory, kinetic_energy


class NotTrainedError(RuntimeError):
    """Raised when a prediction is requested from an untrained network."""


class TrainingError(RuntimeError):
    """Raised when readout training fails (bad data or unstable solve)."""


@dataclass(frozen=True)
class EsnParams:
    """Construction and training hyperparameters of the surrogate.

    ``input_scaling`` holds per-component multiplicative factors applied to the
    state before it enters the reservoir; when ``None`` it is set at training
    time to the reciprocal per-component standard deviation of the training
    states. ``esn_dt`` is the sampling interval the one-step map represents.
    """

    n_reservoir: int = 256
    sigma_in: float = 1.0
    sigma_c: float = 1.0
    rho: float = 0.0
    ridge_lambda: float = 1e-6
    density: float = 0.03
    bias: bool = True
    input_scaling: tuple[float, ...] | None = None
    seed: int = 0
    esn_dt: float = 0.25
    re_base: float = 400.0
    re_ctrl: float = 2000.0

    def __post_init__(self):
        if self.n_reservoir < 1:
            raise ValueError("n_reservoir must be at least 1")
        if self.sigma_in < 0 or self.sigma_c < 0:
            raise ValueError("input scalings must be non-negative")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.re_ctrl == self.re_base:
            raise ValueError("re_ctrl must differ from re_base")


@dataclass
class EsnModel:
    """Random feature matrices plus (after training) the linear readout.

    w_in, w and w_c are fixed at construction; ``train`` returns a copy with
    w_out and the resolved input scaling set. Instances are treated as immutable
    after training, so concurrent read-only use is safe.
    """

    params: EsnParams
    w_in: np.ndarray
    w: np.ndarray
    w_c: np.ndarray
    w_out: np.ndarray | None = None
    input_scaling: np.ndarray | None = None

    @property
    def trained(self) -> bool:
        return self.w_out is not None

    def encode_action(self, re) -> np.ndarray:
        """Map Reynolds-number actions to the centered binary control input."""
        re = np.asarray(re, dtype=np.float64)
        return (re - self.params.re_base) / (self.params.re_ctrl - self.params.re_base)


def build(params: EsnParams) -> EsnModel:
    """Construct an untrained network with random fixed matrices.

    w_in and w_c entries are i.i.d. uniform on [-1, 1]; w is sparse with the
    given density and normalized to unit spectral radius (a no-op when rho = 0,
    where w is never applied). Deterministic for a fixed params.seed.
    """
    rng = np.random.default_rng(params.seed)
    n = params.n_reservoir
    n_in = N_MODES + (1 if params.bias else 0)
    w_in = rng.uniform(-1.0, 1.0, (n, n_in))
    w = rng.uniform(-1.0, 1.0, (n, n)) * (rng.random((n, n)) < params.density)
    radius = np.max(np.abs(np.linalg.eigvals(w))) if n > 0 else 0.0
    if radius > 0:
        w = w / radius
    w_c = rng.uniform(-1.0, 1.0, (n, 1))
    scaling = None
    if params.input_scaling is not None:
        scaling = np.asarray(params.input_scaling, dtype=np.float64)
        if scaling.shape != (N_MODES,):
            raise ValueError(f"input_scaling must have {N_MODES} entries")
    return EsnModel(params=params, w_in=w_in, w=w, w_c=w_c, input_scaling=scaling)


def _require_scaling(model: EsnModel) -> np.ndarray:
    if model.input_scaling is None:
        raise NotTrainedError("input scaling not resolved; train the model or set it in params")
    return model.input_scaling


def _input_maps(model: EsnModel):
    """Input matrices with sigma_in, sigma_c and the state normalization folded in.

    Returns (w_state (9, n), bias_vec (n,) or None, w_ctrl (n,)) so an activation
    batch is tanh(states @ w_state + bias_vec + u[:, None] * w_ctrl). Folding the
    scalings into the matrices keeps every code path (training, stepping,
    batched rollout) on one arithmetic formulation.
    """
    p = model.params
    scaling = _require_scaling(model)
    w9 = model.w_in[:, :N_MODES]
    w_state = (p.sigma_in * (w9 * scaling[None, :])).T
    bias_vec = p.sigma_in * model.w_in[:, N_MODES] if p.bias else None
    w_ctrl = p.sigma_c * model.w_c[:, 0]
    return w_state, bias_vec, w_ctrl


def _activations(model: EsnModel, states: np.ndarray, u: np.ndarray,
                 r_prev: np.ndarray | None = None,
                 maps=None) -> np.ndarray:
    """Reservoir activations for a batch of (state, encoded action) inputs.

    states: (m, 9); u: (m,). With rho != 0 the previous activations r_prev
    (m, n_reservoir) feed back into the update.
    """
    p = model.params
    w_state, bias_vec, w_ctrl = maps if maps is not None else _input_maps(model)
    pre = states @ w_state
    if bias_vec is not None:
        pre += bias_vec[None, :]
    pre += u[:, None] * w_ctrl[None, :]
    if p.rho != 0.0:
        if r_prev is None:
            r_prev = np.zeros((states.shape[0], p.n_reservoir))
        pre += p.rho * (r_prev @ model.w.T)
    return np.tanh(pre)


def step(model: EsnModel, q, re: float) -> np.ndarray:
    """One-step state prediction for a single (state, action) pair."""
    if not model.trained:
        raise NotTrainedError("model has no trained readout")
    q = np.asarray(q, dtype=np.float64).reshape(1, N_MODES)
    if not np.all(np.isfinite(q)):
        raise ValueError("state contains non-finite components")
    u = model.encode_action(np.asarray([re]))
    r = _activations(model, q, u)
    return (r @ model.w_out)[0]


def train(model: EsnModel, dataset: list[Trajectory]) -> EsnModel:
    """Fit the readout by ridge regression on one-step transitions.

    Every trajectory contributes pairs (q_t, u_t) -> q_{t+1}. The readout solves
    the regularized normal equations (H^T H + lambda I) W = H^T Y with a
    symmetric positive-definite factorization; the relative residual of the
    solve is checked against 1e-8.
    """
    if not dataset:
        raise TrainingError("empty training dataset")
    p = model.params

    scaling = model.input_scaling
    if scaling is None:
        all_states = np.concatenate([t.states for t in dataset], axis=0)
        std = np.std(all_states, axis=0)
        std[std == 0.0] = 1.0
        scaling = 1.0 / std
    fitted = replace_model(model, input_scaling=scaling)

    # accumulate the normal equations trajectory by trajectory so the full
    # activation matrix never needs to be held in memory
    a = p.ridge_lambda * np.eye(p.n_reservoir)
    b = np.zeros((p.n_reservoir, N_MODES))
    n_samples = 0
    for traj in dataset:
        if len(traj) < 2:
            continue
        inputs = traj.states[:-1]
        u = fitted.encode_action(traj.re[:-1])
        if p.rho == 0.0:
            h = _activations(fitted, inputs, u)
        else:
            # sequential pass, zero initial reservoir state per trajectory
            h = np.empty((len(inputs), p.n_reservoir))
            r = np.zeros((1, p.n_reservoir))
            for i in range(len(inputs)):
                r = _activations(fitted, inputs[i:i + 1], u[i:i + 1], r_prev=r)
                h[i] = r[0]
        if not np.all(np.isfinite(h)):
            raise TrainingError("non-finite reservoir activations in training data")
        a += h.T @ h
        b += h.T @ traj.states[1:]
        n_samples += len(inputs)
    if n_samples == 0:
        raise TrainingError("dataset contains no transitions")
    if n_samples < p.n_reservoir:
        warnings.warn(
            f"training set has {n_samples} samples for {p.n_reservoir} reservoir "
            "units; the readout is underdetermined", stacklevel=2)
    w_out = scipy.linalg.solve(a, b, assume_a="pos")
    rel_residual = np.linalg.norm(a @ w_out - b) / max(np.linalg.norm(b), 1e-300)
    if rel_residual > 1e-8:
        raise TrainingError(f"normal-equation solve residual {rel_residual:.3e} exceeds 1e-8")
    # C layout so predictions are bit-identical after a save/load round trip
    return replace_model(fitted, w_out=np.ascontiguousarray(w_out))


def replace_model(model: EsnModel, **kwargs) -> EsnModel:
    """Copy the model with some fields replaced (matrices are shared, not copied)."""
    fields = dict(params=model.params, w_in=model.w_in, w=model.w, w_c=model.w_c,
                  w_out=model.w_out, input_scaling=model.input_scaling)
    fields.update(kwargs)
    return EsnModel(**fields)


@dataclass
class PredictedTrajectory:
    """Closed-loop rollout output: predicted states, observable, divergence marker.

    ``diverged_at`` is the first step index whose prediction left the validity
    region, or None. From that step on, states are frozen and k is +inf, which
    downstream controllers treat as a predicted extreme event.
    """

    states: np.ndarray
    k: np.ndarray
    diverged_at: int | None = None


def rollout(model: EsnModel, q0, schedule_re, n_steps: int,
            validity_bound: float = 10.0) -> PredictedTrajectory:
    """Autoregressive rollout: each predicted state feeds the next step's input.

    ``schedule_re`` gives the action for each of the ``n_steps`` steps (scalar or
    array). The first entry of the returned arrays is the initial state itself.
    """
    q0 = np.asarray(q0, dtype=np.float64).reshape(1, N_MODES)
    if np.isscalar(schedule_re):
        schedule = np.full((1, n_steps), float(schedule_re))
    else:
        schedule = np.asarray(schedule_re, dtype=np.float64).reshape(1, -1)
        if schedule.shape[1] < n_steps:
            raise ValueError("schedule shorter than the requested rollout")
    states, k, diverged = rollout_batch(model, q0, schedule[:, :n_steps], n_steps,
                                        validity_bound, keep_states=True)
    d = None if diverged[0] < 0 else int(diverged[0])
    return PredictedTrajectory(states=states[0], k=k[0], diverged_at=d)


def rollout_batch(model: EsnModel, q0: np.ndarray, schedule_u_or_re: np.ndarray,
                  n_steps: int, validity_bound: float = 10.0,
                  keep_states: bool = False, encoded: bool = False):
    """Vectorized closed-loop rollout over a batch of initial states.

    q0: (B, 9); schedule: (B, n_steps) of Reynolds numbers (or already-encoded
    control inputs when ``encoded``). Returns (states, k, diverged) where
    k has shape (B, n_steps + 1) including the initial observable, and diverged
    holds the first invalid step per row (-1 if none). Rows that leave the
    validity region are frozen and report k = +inf from the divergence step on.
    Only usable with rho = 0; the recurrent variant is sequential-only.
    """
    if not model.trained:
        raise NotTrainedError("model has no trained readout")
    if model.params.rho != 0.0:
        raise NotImplementedError("batched rollout requires rho = 0")
    b = q0.shape[0]
    schedule = np.asarray(schedule_u_or_re, dtype=np.float64)
    if schedule.ndim == 1:
        schedule = np.broadcast_to(schedule[None, :], (b, len(schedule)))
    u_all = schedule if encoded else model.encode_action(schedule)

    states = np.empty((b, n_steps + 1, N_MODES)) if keep_states else None
    k = np.empty((b, n_steps + 1))
    diverged = np.full(b, -1, dtype=np.int64)
    q = q0.astype(np.float64, copy=True)
    if keep_states:
        states[:, 0] = q
    k[:, 0] = kinetic_energy(q)
    alive = np.ones(b, dtype=bool)
    w_state, bias_vec, w_ctrl = _input_maps(model)
    w_out = model.w_out
    # reused buffers; the arithmetic matches _activations operation for
    # operation so rollouts stay bit-consistent with single-step prediction
    pre = np.empty((b, model.params.n_reservoir))
    q_next = np.empty((b, N_MODES))
    for s in range(n_steps):
        np.matmul(q, w_state, out=pre)
        if bias_vec is not None:
            pre += bias_vec[None, :]
        pre += u_all[:, s][:, None] * w_ctrl[None, :]
        np.tanh(pre, out=pre)
        np.matmul(pre, w_out, out=q_next)
        if np.all(alive) and np.max(np.abs(q_next)) <= validity_bound:
            q, q_next = q_next, q
        else:
            bad = alive & ~np.all(np.abs(q_next) <= validity_bound, axis=1)
            if np.any(bad):
                diverged[bad] = s + 1
                alive = alive & ~bad
            q = np.where(alive[:, None], q_next, q)
            q_next = np.empty((b, N_MODES))
        if keep_states:
            states[:, s + 1] = q
        k[:, s + 1] = np.where(alive, kinetic_energy(q), np.inf)
        # once every row has diverged there is nothing left to evolve
        if not np.any(alive):
            k[:, s + 2:] = np.inf
            if keep_states:
                states[:, s + 2:] = states[:, s + 1:s + 2]
            break
    # rows that diverged while the loop continued: mark their suffixes
    for row in np.nonzero(diverged >= 0)[0]:
        k[row, diverged[row]:] = np.inf
        if keep_states:
            states[row, diverged[row]:] = states[row, diverged[row] - 1]
    return states, k, diverged
