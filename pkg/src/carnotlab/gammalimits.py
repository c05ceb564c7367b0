"""Recovery sequences, cost blow-up, and transport-cost recovery experiments.

The recovery construction corrects the shifted path by the accumulated
non-commutativity error: on the level-n blocks set

    correction(t) = correction(block start) + theta_{block start, t},

a purely vertical (central) path, and multiply the shifted path by its
inverse. Each level-n increment of the corrected path then differs from the
base path's increment exactly by the lifted shift's increment, so the
increment cost collapses to the deterministic value C_n(0, lift(h)), which is
bounded by ||h||_H and increases to it. Without the correction the same cost
blows up like 2^(n/2) for Brownian base paths.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ccmetric import cc_metric
from .errors import DomainError
from .groups import CarnotStructure, w_bilinear
from .paths import (
    DyadicGroupPath,
    HorizontalPath,
    increment_cost,
    lift,
    refine_nodes,
    shift,
    zero_path,
)
from .sampling import SampleConfig, rng_stream, sample_bm


@dataclass(frozen=True)
class RecoveryOutput:
    corrected_path: DyadicGroupPath
    correction: np.ndarray = field(repr=False)  # (2^level + 1, d2) vertical path
    cost_at_n: float
    uniform_gap: float


def _block_corrections(
    g: CarnotStructure, x_nodes: np.ndarray, h_nodes: np.ndarray, n: int
) -> np.ndarray:
    """Accumulated vertical correction at every fine node.

    Per fine step the integrand offset is the h midpoint minus the h value at
    the start of the enclosing level-n block; a single cumulative sum yields
    the correction path because the block increments chain.
    """
    steps = x_nodes.shape[0] - 1
    block = steps >> n
    mids = 0.5 * (h_nodes[:-1] + h_nodes[1:])
    starts = np.repeat(h_nodes[0:-1:block], block, axis=0)
    dx = np.diff(x_nodes, axis=0)
    contrib = w_bilinear(g, mids - starts, dx)
    return np.vstack([np.zeros((1, g.d2)), np.cumsum(contrib, axis=0)])


def recovery_path(
    omega: DyadicGroupPath, h: HorizontalPath, n: int, metric=None
) -> RecoveryOutput:
    """Corrected shift of omega whose level-n increment cost equals C_n(0, lift(h)).

    Requires n <= omega.level - 2 so the evaluation grid keeps a resolution
    margin below the simulation grid.
    """
    if n > omega.level - 2:
        raise DomainError(f"need n <= level - 2, got n = {n} at level {omega.level}")
    g = omega.structure
    metric = metric or cc_metric(g)
    h_nodes = refine_nodes(h.values, h.level, omega.level)
    shifted = shift(omega, h)
    correction = _block_corrections(g, omega.x1, h_nodes, n)
    corrected = DyadicGroupPath(g, omega.level, shifted.x1, shifted.x2 - correction)

    lifted_h = lift(g, HorizontalPath(omega.level, h_nodes))
    cost = increment_cost(omega, corrected, n, metric)
    reference = increment_cost(zero_path(g, omega.level), lifted_h, n, metric)
    if abs(cost - reference) > 1e-9 * (1.0 + reference):
        raise DomainError(
            f"recovery cancellation identity violated: {cost} vs {reference}"
        )
    zero2 = np.zeros_like(correction[:, 0:1].repeat(g.d1, axis=1))
    gap = float(np.max(metric(zero2, np.zeros_like(correction), zero2, correction)))
    return RecoveryOutput(corrected, correction, cost, gap)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_half_width: float  # 95% on the slope
    levels: tuple
    log2_values: tuple

    def interval(self) -> tuple[float, float]:
        return (self.slope - self.ci_half_width, self.slope + self.ci_half_width)


def fit_log2_slope(levels, values) -> SlopeFit:
    """Least-squares slope of log2(values) against the level index."""
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(levels) < 3:
        raise DomainError("slope fit needs at least 3 levels")
    if np.any(values <= 0):
        raise DomainError("slope fit needs positive values")
    y = np.log2(values)
    a = np.vstack([levels, np.ones_like(levels)]).T
    coef, residual, *_ = np.linalg.lstsq(a, y, rcond=None)
    dof = len(levels) - 2
    if dof > 0 and residual.size:
        s2 = float(residual[0]) / dof
        var_slope = s2 / float(np.sum((levels - levels.mean()) ** 2))
        half = 1.96 * math.sqrt(var_slope)
    else:
        half = 0.0
    return SlopeFit(float(coef[0]), float(coef[1]), half, tuple(levels), tuple(y))


def _paired_brownian_costs(g, h, levels, trial, seed, sim_level, metric):
    """One trial: C_n(B, T_h B) for each n, from a fresh keyed stream."""
    cfg = SampleConfig(level=sim_level, count=1, seed=seed)
    steps = 1 << sim_level
    inc = rng_stream(seed, trial).standard_normal((steps, g.d1)) * math.sqrt(1.0 / steps)
    nodes = np.vstack([np.zeros((1, g.d1)), np.cumsum(inc, axis=0)])
    from .paths import lift_nodes

    base = DyadicGroupPath(g, sim_level, nodes, lift_nodes(g, nodes))
    shifted = shift(base, h)
    del cfg
    return [increment_cost(base, shifted, n, metric) ** 2 for n in levels]


def blowup_experiment(
    g: CarnotStructure,
    h: HorizontalPath,
    levels,
    trials: int,
    seed: int,
    metric=None,
    threads: int = 1,
) -> dict:
    """Monte Carlo growth of C_n(B, T_h B)^2 and the fitted blow-up exponent.

    h must have a nonzero constant slope in some coordinate (a straight-line
    direction); the slope is fitted on log2(mean C_n^2 - ||h||_H^2).
    Returns a dict with per-level means, the per-trial table, and the fit.
    """
    slopes = np.diff(h.values, axis=0) * (1 << h.level)
    if not np.allclose(slopes, slopes[0], atol=1e-12) or np.allclose(slopes[0], 0.0):
        raise DomainError("blow-up experiment expects a straight h with nonzero slope")
    levels = list(levels)
    sim_level = max(levels) + 2
    metric = metric or cc_metric(g)
    hsq = h.cameron_martin_norm_squared()

    def one(trial):
        return _paired_brownian_costs(g, h, levels, trial, seed, sim_level, metric)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(trials)))
    else:
        rows = [one(t) for t in range(trials)]
    table = np.asarray(rows)  # (trials, len(levels))
    means = table.mean(axis=0)
    excess = means - hsq
    if np.any(excess <= 0):
        raise DomainError("mean cost does not exceed ||h||_H^2; nothing to fit")
    fit = fit_log2_slope(levels, excess)
    return {
        "levels": levels,
        "mean_cost_squared": means.tolist(),
        "excess": excess.tolist(),
        "fit": fit,
        "table": table,
        "h_norm_squared": hsq,
    }


def vertical_cost_slope(g: CarnotStructure, theta0, levels, metric=None) -> dict:
    """Growth of C_n(X, X . (0, t*theta0))^2; deterministic (the base cancels).

    The increments differ by the central element (0, dt * theta0), so
    C_n^2 = 2^(2n) * d(0, (0, 2^-n theta0))^2, growing like 2^n.
    """
    theta0 = np.asarray(theta0, dtype=float).reshape(g.d2)
    metric = metric or cc_metric(g)
    levels = list(levels)
    values = []
    for n in levels:
        zeros1 = np.zeros((1, g.d1))
        d = float(
            np.asarray(
                metric(zeros1, np.zeros((1, g.d2)), zeros1, (theta0 / (1 << n))[None, :])
            ).reshape(())
        )
        values.append((1 << (2 * n)) * d * d)
    fit = fit_log2_slope(levels, values)
    return {"levels": levels, "cost_squared": values, "fit": fit}


def transport_recovery_experiment(
    g: CarnotStructure,
    h: HorizontalPath,
    levels,
    trials: int,
    seed: int,
    metric=None,
    threads: int = 1,
) -> dict:
    """Compare the naive plan (B, T_h B) with the recovery plan (B, corrected)
    under C_n across levels; the recovery cost is deterministic and bounded by
    ||h||_H while the naive cost blows up.
    """
    levels = list(levels)
    sim_level = max(levels) + 2
    metric = metric or cc_metric(g)

    lifted_h = lift(g, HorizontalPath(sim_level, refine_nodes(h.values, h.level, sim_level)))
    zero = zero_path(g, sim_level)
    recovery_costs = [increment_cost(zero, lifted_h, n, metric) ** 2 for n in levels]

    def one(trial):
        steps = 1 << sim_level
        inc = rng_stream(seed, trial).standard_normal((steps, g.d1)) * math.sqrt(1.0 / steps)
        nodes = np.vstack([np.zeros((1, g.d1)), np.cumsum(inc, axis=0)])
        from .paths import lift_nodes

        base = DyadicGroupPath(g, sim_level, nodes, lift_nodes(g, nodes))
        shifted = shift(base, h)
        naive = [increment_cost(base, shifted, n, metric) ** 2 for n in levels]
        gaps = [recovery_path(base, h, n, metric).uniform_gap for n in levels]
        return naive, gaps

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(t) for t in range(trials)]
    naive_table = np.asarray([r[0] for r in results])
    gap_table = np.asarray([r[1] for r in results])
    return {
        "levels": levels,
        "h_norm_squared": h.cameron_martin_norm_squared(),
        "recovery_cost_squared": recovery_costs,
        "naive_mean_cost_squared": naive_table.mean(axis=0).tolist(),
        "naive_table": naive_table,
        "gap_median": np.median(gap_table, axis=0).tolist(),
        "gap_table": gap_table,
    }
