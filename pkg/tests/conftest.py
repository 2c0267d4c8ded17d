"""Shared test helpers: small crafted models and the independent MPC enumerator."""

import itertools
import math

import numpy as np

from esncontrol.esn import EsnParams, build, replace_model
from esncontrol.mfe import kinetic_energy


def zero_predictor(n_reservoir=8, esn_dt=1.0):
    """Trained-looking model that predicts the zero state everywhere."""
    params = EsnParams(n_reservoir=n_reservoir, sigma_in=0.1, sigma_c=0.1,
                       input_scaling=tuple([1.0] * 9), seed=0, esn_dt=esn_dt)
    m = build(params)
    return replace_model(m, w_out=np.zeros((n_reservoir, 9)),
                         input_scaling=np.ones(9))


def random_tiny_model(seed, n_reservoir=6, esn_dt=1.0):
    """Small trained model with a generic (nonzero) readout."""
    rng = np.random.default_rng(seed)
    params = EsnParams(n_reservoir=n_reservoir, sigma_in=0.4, sigma_c=0.3,
                       input_scaling=tuple([1.0] * 9), seed=seed, esn_dt=esn_dt)
    m = build(params)
    return replace_model(m, w_out=rng.normal(0, 0.4, (n_reservoir, 9)),
                         input_scaling=np.ones(9))


def oracle_mpc(model, q0, horizon, rcfg, p):
    """Independent exhaustive enumerator for the receding-horizon decision.

    Explicit nested loops and a direct transcription of the network map; shares
    no code with the production search. Scoring uses the same integer
    event/control counts so exact ties reproduce, and the tie-break prefers
    fewer control slots, then the lexicographically first sequence.
    """
    esn_dt = model.params.esn_dt
    n_hor = max(1, round(horizon.tau_hor_lt / p.lyapunov_exponent / esn_dt))
    per_slot = round(horizon.control_interval / esn_dt)
    n_slots = max(1, math.floor(horizon.tau_opt_lt / p.lyapunov_exponent
                                / horizon.control_interval + 1e-9))
    n_slots = min(n_slots, max(1, n_hor // per_slot))
    re_base = horizon.action_set[0]
    prm = model.params
    scaling = model.input_scaling

    def net_step(q, re):
        u = (re - prm.re_base) / (prm.re_ctrl - prm.re_base)
        pre = prm.sigma_in * (model.w_in[:, :9] @ (q * scaling))
        if prm.bias:
            pre = pre + prm.sigma_in * model.w_in[:, 9]
        pre = pre + prm.sigma_c * model.w_c[:, 0] * u
        return np.tanh(pre) @ model.w_out

    best = None
    for idx, seq in enumerate(itertools.product(horizon.action_set, repeat=n_slots)):
        q = np.asarray(q0, dtype=float).copy()
        n_event = 0
        n_ctrl = 0
        diverged = False
        for s in range(n_hor):
            re = seq[s // per_slot] if s < n_slots * per_slot else re_base
            if re != re_base:
                n_ctrl += 1
            if not diverged:
                q = net_step(q, re)
                if np.any(np.abs(q) > 10.0):
                    diverged = True
            if diverged or kinetic_energy(q) > rcfg.k_e:
                n_event += 1
        score = (rcfg.r_event * n_event + rcfg.r_control * n_ctrl) / n_hor
        n_ctrl_slots = sum(1 for a in seq if a != re_base)
        key = (-score, n_ctrl_slots, idx)
        if best is None or key < best[0]:
            best = (key, seq[0])
    return best[1]
