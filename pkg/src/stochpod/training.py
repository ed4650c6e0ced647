"""Concentration-parameter training.

The objective is the mean squared gap between the ensemble's distance
statistic and the truth's: f(beta) = E[ |d(u) - d(u_truth)|^2 ], with
d(u) the weighted L2 distance to the deterministic reduced-order
prediction.  f is estimated by Monte Carlo at integer beta (memoized,
common random numbers across beta), linearly interpolated in between,
and minimized with a bounded golden-section/parabolic scalar search.
An optional refinement stage re-optimizes over real-valued beta with a
larger sample budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar


@dataclass(frozen=True)
class DistanceObservables:
    """Reference prediction, ground-truth observation, optional grid weights."""

    reference: np.ndarray   # deterministic ROM prediction of the observed QoI
    truth: np.ndarray       # experimental / ground-truth observation
    weights: np.ndarray | None = None

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float)
        tru = np.asarray(self.truth, dtype=float)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "truth", tru)
        if ref.shape != tru.shape:
            raise ValueError("reference and truth lengths differ")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", w)
            if w.shape != ref.shape:
                raise ValueError("weights length differs from grid")
            if np.any(w <= 0):
                raise ValueError("weights must be positive")


def reference_distance(u, observables: DistanceObservables) -> float:
    """Weighted Euclidean distance from u to the reference prediction."""
    u = np.asarray(u, dtype=float)
    if u.shape != observables.reference.shape:
        raise ValueError("length mismatch in distance evaluation")
    diff = u - observables.reference
    if observables.weights is None:
        return float(np.linalg.norm(diff))
    return float(np.sqrt(np.sum(observables.weights * diff**2)))


def trapezoid_weights(grid) -> np.ndarray:
    """Quadrature weights for a discrete L2 norm on a nonuniform grid."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * np.diff(grid)
    w[1:] += 0.5 * np.diff(grid)
    return w


def estimate_objective(beta: float, predictor, observables: DistanceObservables,
                       mc_samples: int, seed: int) -> float:
    """Monte-Carlo estimate of E[|d(u) - d(u_truth)|^2] at one beta.

    ``predictor(beta, count, seed)`` returns a (count, grid) matrix of
    stochastic predictions.
    """
    samples = np.asarray(predictor(beta, mc_samples, seed), dtype=float)
    d_truth = reference_distance(observables.truth, observables)
    gaps = np.array([reference_distance(row, observables) - d_truth for row in samples])
    return float(np.mean(gaps**2))


@dataclass
class CacheEntry:
    value: float
    mc_samples: int
    seed: int


class ObjectiveCache:
    """Memoizes integer-beta objective estimates.

    At most one entry per integer; an entry is never recomputed, and
    re-registering with a different seed or sample count raises instead
    of silently replacing the estimate.
    """

    def __init__(self):
        self.entries: dict[int, CacheEntry] = {}
        self.hits = 0
        self.misses = 0

    def get_or_compute(self, beta_int: int, evaluator: Callable[[int], float],
                       mc_samples: int = 0, seed: int = 0) -> float:
        if beta_int in self.entries:
            entry = self.entries[beta_int]
            if (mc_samples, seed) != (0, 0) and (entry.mc_samples, entry.seed) != (mc_samples, seed):
                raise ValueError(
                    f"objective at beta={beta_int} already estimated with a "
                    f"different seed/sample count")
            self.hits += 1
            return entry.value
        value = float(evaluator(beta_int))
        self.entries[beta_int] = CacheEntry(value, mc_samples, seed)
        self.misses += 1
        return value

    def best(self) -> tuple[int, float]:
        beta = min(self.entries, key=lambda b: (self.entries[b].value, b))
        return beta, self.entries[beta].value


@dataclass(frozen=True)
class RefinementConfig:
    enabled: bool = False
    window: float = 1.0
    mc_samples: int = 100_000
    tolerance: float = 1e-10
    max_iter: int = 100


@dataclass(frozen=True)
class TrainingConfig:
    beta_bounds: tuple[float, float]
    mc_samples: int = 1000
    tolerance: float = 1e-3
    max_iter: int = 100
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    parametric_aggregation: str = "per-parameter"   # or "pooled"

    def __post_init__(self):
        lo, hi = self.beta_bounds
        if not lo < hi:
            raise ValueError("beta bounds must be ordered")
        if self.mc_samples < 2 or self.refinement.mc_samples < 2:
            raise ValueError("Monte-Carlo sample counts must be >= 2")
        if self.parametric_aggregation not in ("per-parameter", "pooled"):
            raise ValueError("parametric_aggregation must be 'per-parameter' or 'pooled'")


def interpolated_objective(beta: float, cache: ObjectiveCache,
                           evaluator: Callable[[int], float],
                           mc_samples: int = 0, seed: int = 0) -> float:
    """Objective at real beta via linear interpolation of integer estimates.

    Integer queries return the cached value directly (no new evaluation).
    """
    lo = int(math.floor(beta))
    hi = int(math.ceil(beta))
    f_lo = cache.get_or_compute(lo, evaluator, mc_samples, seed)
    if hi == lo:
        return f_lo
    f_hi = cache.get_or_compute(hi, evaluator, mc_samples, seed)
    t = beta - lo
    return (1.0 - t) * f_lo + t * f_hi


@dataclass(frozen=True)
class BetaSearchResult:
    beta: float
    value: float
    trace: tuple          # ((beta, f) per objective query, in call order)
    converged: bool
    evaluations: int


def optimize_beta(config: TrainingConfig, objective: Callable[[float], float],
                  bounds: tuple[float, float] | None = None,
                  tolerance: float | None = None,
                  max_iter: int | None = None) -> BetaSearchResult:
    """Bounded scalar minimization (golden section + parabolic steps).

    Records every (beta, f) query.  When the minimizer lands within the
    tolerance of an integer, the result snaps to that integer so grid
    minima are reported exactly.  Non-convergence within the iteration
    cap returns the best point found, flagged via ``converged``.
    """
    lo, hi = bounds if bounds is not None else config.beta_bounds
    xatol = config.tolerance if tolerance is None else tolerance
    cap = config.max_iter if max_iter is None else max_iter
    trace: list[tuple[float, float]] = []

    def traced(b: float) -> float:
        value = float(objective(float(b)))
        trace.append((float(b), value))
        return value

    res = minimize_scalar(traced, bounds=(lo, hi), method="bounded",
                          options={"xatol": xatol, "maxiter": cap})
    beta_star, f_star = float(res.x), float(res.fun)
    snapped = round(beta_star)
    if abs(beta_star - snapped) <= 2.0 * xatol and lo <= snapped <= hi:
        f_snapped = traced(float(snapped))
        if f_snapped <= f_star + 1e-15 * max(1.0, abs(f_star)):
            beta_star, f_star = float(snapped), f_snapped
    return BetaSearchResult(beta=beta_star, value=f_star, trace=tuple(trace),
                            converged=bool(res.success), evaluations=len(trace))


@dataclass(frozen=True)
class IntegerTrainingResult:
    beta: int
    value: float
    cache: ObjectiveCache
    trace: tuple
    converged: bool


def train_integer_beta(config: TrainingConfig,
                       evaluator: Callable[[int], float],
                       mc_samples: int = 0, seed: int = 0) -> IntegerTrainingResult:
    """Integer training stage: minimize the interpolated Monte-Carlo objective.

    Each integer is evaluated at most once (cache discipline); the
    returned beta is the best evaluated integer, which for a piecewise
    linear interpolant is its global minimizer over the searched region.
    """
    cache = ObjectiveCache()
    result = optimize_beta(
        config,
        lambda b: interpolated_objective(b, cache, evaluator, mc_samples, seed))
    beta_best, value_best = cache.best()
    return IntegerTrainingResult(beta=int(beta_best), value=value_best,
                                 cache=cache, trace=result.trace,
                                 converged=result.converged)


def refine_beta_real(beta_int: float, config: TrainingConfig,
                     objective: Callable[[float], float]) -> BetaSearchResult:
    """Real-valued refinement around the integer optimum.

    Searches [beta_int - w, beta_int + w] clipped to the training bounds,
    evaluating the fractional-beta objective directly (no interpolation).
    A degenerate window returns beta_int unchanged.
    """
    ref = config.refinement
    lo = max(config.beta_bounds[0], beta_int - ref.window)
    hi = min(config.beta_bounds[1], beta_int + ref.window)
    if hi <= lo or ref.window == 0.0:
        value = float(objective(float(beta_int)))
        return BetaSearchResult(beta=float(beta_int), value=value,
                                trace=((float(beta_int), value),),
                                converged=True, evaluations=1)
    return optimize_beta(config, objective, bounds=(lo, hi),
                         tolerance=ref.tolerance, max_iter=ref.max_iter)
