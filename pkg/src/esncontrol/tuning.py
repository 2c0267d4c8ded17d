"""Hyperparameter search: Gaussian-process surrogate loop with a grid fallback.

The optimizer maximizes a black-box objective over a box of named dimensions
(linear or log scaled). Points are normalized to the unit cube; a space-filling
Latin hypercube seeds the search, after which candidates are proposed by
expected improvement under a squared-exponential GP fit to the evaluations.
Everything is driven by one seed, so runs are reproducible, and the returned
optimum is always an evaluated point, never a surrogate extrapolation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    scale: str = "linear"  # "linear" or "log"

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"dimension {self.name}: low must be below high")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"dimension {self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and self.low <= 0:
            raise ValueError(f"dimension {self.name}: log scale needs positive bounds")

    def from_unit(self, z: float) -> float:
        if self.scale == "log":
            return math.exp(math.log(self.low) + z * (math.log(self.high) - math.log(self.low)))
        return self.low + z * (self.high - self.low)

    def to_unit(self, x: float) -> float:
        if self.scale == "log":
            return (math.log(x) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (x - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def from_unit(self, z: np.ndarray) -> dict[str, float]:
        return {d.name: d.from_unit(float(v)) for d, v in zip(self.dimensions, z)}

    def to_unit(self, point: dict[str, float]) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dimensions])


@dataclass
class EvalRecord:
    point: dict[str, float]
    objective: float
    noise_est: float = 0.0
    seed: int = 0
    failed: bool = False


def _fit_gp(z: np.ndarray, y: np.ndarray, seed: int) -> GaussianProcessRegressor:
    dim = z.shape[1]
    kernel = (ConstantKernel(1.0, (1e-3, 1e3))
              * RBF(length_scale=np.full(dim, 0.3), length_scale_bounds=(1e-2, 1e2))
              + WhiteKernel(noise_level=1e-6, noise_level_bounds=(1e-12, 1e-1)))
    gp = GaussianProcessRegressor(kernel=kernel, normalize_y=True,
                                  n_restarts_optimizer=2,
                                  random_state=np.random.RandomState(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(z, y)
    return gp


def _expected_improvement(gp, z_cand: np.ndarray, y_best: float) -> np.ndarray:
    mu, sigma = gp.predict(z_cand, return_std=True)
    sigma = np.maximum(sigma, 1e-12)
    gain = mu - y_best
    u = gain / sigma
    return gain * norm.cdf(u) + sigma * norm.pdf(u)


def optimize(objective, space: SearchSpace, budget: int, seed: int,
             mode: str = "gp", grid: dict[str, list[float]] | None = None,
             n_candidates: int = 1024):
    """Maximize ``objective`` over the space; returns (best point, history).

    ``mode="gp"`` runs the surrogate loop: max(5, 2 * dim) Latin-hypercube
    points, then expected-improvement proposals until the budget is spent.
    ``mode="grid"`` exhaustively evaluates the cross product of the per-dimension
    value lists in ``grid`` (row-major order, first listed point wins ties).
    Objective failures are recorded with the worst observed value and flagged;
    the search continues. Deterministic for a fixed seed.
    """
    if mode == "grid":
        if grid is None:
            raise ValueError("grid mode requires explicit per-dimension grids")
        points = _grid_points(space, grid)
    elif mode == "gp":
        dim = len(space.dimensions)
        if budget < 1:
            raise ValueError("budget must be at least 1")
        n_init = min(budget, max(5, 2 * dim))
        sampler = qmc.LatinHypercube(d=dim, seed=seed)
        points = [space.from_unit(z) for z in sampler.random(n_init)]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    history: list[EvalRecord] = []
    z_seen: list[np.ndarray] = []
    y_seen: list[float] = []

    def evaluate(point: dict[str, float]):
        try:
            value = float(objective(point))
            if not math.isfinite(value):
                raise ValueError(f"objective returned non-finite value {value}")
            failed = False
        except Exception:
            value = min(y_seen) if y_seen else -1e30
            failed = True
        history.append(EvalRecord(point=dict(point), objective=value,
                                  seed=seed, failed=failed))
        z_seen.append(space.to_unit(point))
        y_seen.append(value)

    for point in points:
        evaluate(point)

    if mode == "gp":
        rng = np.random.default_rng(seed + 1)
        while len(history) < budget:
            z = np.array(z_seen)
            y = np.array(y_seen)
            gp = _fit_gp(z, y, seed + len(history))
            z_cand = rng.random((n_candidates, z.shape[1]))
            # local refinements around the incumbent
            best_z = z[int(np.argmax(y))]
            local = np.clip(best_z + rng.normal(0, 0.05, (64, z.shape[1])), 0, 1)
            z_cand = np.vstack([z_cand, local])
            ei = _expected_improvement(gp, z_cand, float(np.max(y)))
            evaluate(space.from_unit(z_cand[int(np.argmax(ei))]))

    best = max(range(len(history)), key=lambda i: (history[i].objective, -i))
    return dict(history[best].point), history


def _grid_points(space: SearchSpace, grid: dict[str, list[float]]):
    if set(grid) != set(space.names):
        raise ValueError("grid must provide values for exactly the space dimensions")
    points = [{}]
    for name in space.names:
        points = [dict(pt, **{name: v}) for pt in points for v in grid[name]]
    return points
