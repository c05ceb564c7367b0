"""Carnot-Caratheodory distance: Heisenberg closed form and a variational oracle.

Closed form. By left invariance, d(a, b) = d(0, c) with c = a^-1 b. On H^n the
minimizing horizontal curves project to circular arcs; parametrizing by the
total turning angle phi in (-2pi, 2pi), a curve of speed s reaching horizontal
radius r and vertical coordinate z satisfies

    r = s * 2 sin(phi/2) / phi,      z = s^2 (phi - sin phi) / (2 phi^2),

so phi solves mu(phi) = z / r^2 with mu(phi) = (phi - sin phi) / (8 sin^2(phi/2)),
which is odd and strictly increasing on (-2pi, 2pi). The degenerate branches are
z = 0 (straight segment, d = r) and r = 0 (full circle, d = 2 sqrt(pi |z|)).

Oracle. For any step-2 structure, d(0, c) is bounded from above by minimizing
the length of a piecewise-linear horizontal path whose exact lift endpoint hits
c; endpoint matching is enforced by a quadratic penalty with continuation, and
the local search is L-BFGS with analytic gradients, multi-started from straight,
circle-seeded, and randomized initial paths.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import (
    DomainError,
    InfeasibleError,
    NumericalError,
    UnsupportedStructureError,
)
from .groups import (
    CarnotStructure,
    GroupElement,
    gauge_norm_parts,
    inverse,
    is_heisenberg,
    product,
    w_bilinear,
)

_TWO_PI = 2.0 * np.pi


def _mu(phi: np.ndarray) -> np.ndarray:
    """(phi - sin phi) / (8 sin^2(phi/2)) with a series fallback near 0."""
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < 1e-3
    safe = np.where(small, 1.0, phi)
    exact = (safe - np.sin(safe)) / (8.0 * np.sin(safe / 2.0) ** 2)
    series = phi / 12.0 * (1.0 + phi * phi / 30.0)
    return np.where(small, series, exact)


def _solve_turning_angle(target: np.ndarray, iters: int = 64) -> np.ndarray:
    """Solve mu(phi) = target for phi in [0, 2pi) by bisection; target >= 0."""
    target = np.asarray(target, dtype=float)
    lo = np.zeros_like(target)
    hi = np.full_like(target, _TWO_PI - 1e-12)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        too_small = _mu(mid) < target
        lo = np.where(too_small, mid, lo)
        hi = np.where(too_small, hi, mid)
    return 0.5 * (lo + hi)


def heisenberg_norm(r, z) -> np.ndarray:
    """d(0, (x1, z)) on H^n given r = |x1| and the vertical coordinate z.

    Vectorized; r and z broadcast together.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z = np.abs(np.atleast_1d(np.asarray(z, dtype=float)))
    r, z = np.broadcast_arrays(r, z)
    out = np.empty(r.shape, dtype=float)

    vertical = r <= 1e-300
    out[vertical] = 2.0 * np.sqrt(np.pi * z[vertical])

    mixed = ~vertical
    if np.any(mixed):
        rm, zm = r[mixed], z[mixed]
        ratio = zm / (rm * rm)
        res = np.empty(rm.shape)
        tiny = ratio < 8e-11  # below mu at phi ~ 1e-9: straight segment to O(1e-19)
        res[tiny] = rm[tiny]
        huge = ratio > 1e14  # past the resolvable bracket: full-circle asymptote
        res[huge] = 2.0 * np.sqrt(np.pi * zm[huge])
        mid = ~(tiny | huge)
        if np.any(mid):
            phi = _solve_turning_angle(ratio[mid])
            res[mid] = rm[mid] * phi / (2.0 * np.sin(phi / 2.0))
        out[mixed] = res
    return out if out.size > 1 else out.reshape(())


def heisenberg_unit_geodesic(c_x1: np.ndarray, z: float, k: int) -> np.ndarray:
    """Nodes (k+1, d1+1) of the minimizing curve 0 -> (c_x1, z) on H^n.

    Returns columns (x1..., z); used as an initializer for the epsilon-
    Riemannian solver and in tests. The arc lives in the plane spanned by the
    endpoint direction and its symplectic rotation.
    """
    c_x1 = np.asarray(c_x1, dtype=float)
    d1 = c_x1.size
    J = np.zeros((d1, d1))
    for m in range(d1 // 2):
        J[2 * m, 2 * m + 1] = -1.0
        J[2 * m + 1, 2 * m] = 1.0
    t = np.linspace(0.0, 1.0, k + 1)
    r = float(np.linalg.norm(c_x1))
    if abs(z) < 1e-300 and r < 1e-300:
        return np.zeros((k + 1, d1 + 1))
    if abs(z) < 1e-300:
        x = t[:, None] * c_x1[None, :]
        return np.concatenate([x, np.zeros((k + 1, 1))], axis=1)
    sign = 1.0 if z > 0 else -1.0
    if r < 1e-300:
        phi = sign * _TWO_PI
        s = 2.0 * np.sqrt(np.pi * abs(z))
        u0 = np.zeros(d1)
        u0[0] = s
    else:
        phi = sign * float(_solve_turning_angle(np.array([abs(z) / (r * r)])))
        s = r * phi / (2.0 * np.sin(phi / 2.0))
        # endpoint = s * (sin(phi)/phi) c_hat + s * ((1-cos(phi))/phi) J c_hat
        # solve for the initial direction u0_hat in the (c_hat, J c_hat) plane
        a = np.sin(phi) / phi
        b = (1.0 - np.cos(phi)) / phi
        c_hat = c_x1 / r
        norm2 = a * a + b * b
        u0 = s * (a * c_hat - b * (J @ c_hat)) / norm2
    # velocity u(t) = exp(phi t J) u0; x(t) by exact integration of the rotation
    xs = np.zeros((k + 1, d1))
    for idx, ti in enumerate(t[1:], start=1):
        ang = phi * ti
        # int_0^ti exp(phi u J) du = (sin(ang)/phi) I + ((1-cos(ang))/phi) J
        xs[idx] = (np.sin(ang) / phi) * u0 + ((1.0 - np.cos(ang)) / phi) * (J @ u0)
    zs = s * s * (phi * t - np.sin(phi * t)) / (2.0 * phi * phi)
    return np.concatenate([xs, zs[:, None]], axis=1)


def _require_heisenberg(g: CarnotStructure) -> None:
    if not is_heisenberg(g):
        raise UnsupportedStructureError(
            f"closed-form distance needs a Heisenberg preset, got {g.name!r}"
        )


def cc_distance_heisenberg(g: CarnotStructure, a: GroupElement, b: GroupElement) -> float:
    """Exact CC distance on a Heisenberg preset, via left translation and the
    one-parameter geodesic family."""
    _require_heisenberg(g)
    c = product(g, inverse(g, a), b)
    return float(heisenberg_norm(np.linalg.norm(c.x1), c.x2[0]))


def heisenberg_metric(g: CarnotStructure):
    """Vectorized CC evaluator (ax1, ax2, bx1, bx2) -> distances for H^n."""
    _require_heisenberg(g)

    def metric(ax1, ax2, bx1, bx2):
        ax1 = np.asarray(ax1, dtype=float)
        bx1 = np.asarray(bx1, dtype=float)
        dx1 = bx1 - ax1
        dz = (
            np.asarray(bx2, dtype=float)[..., 0]
            - np.asarray(ax2, dtype=float)[..., 0]
            - 0.5 * w_bilinear(g, ax1, bx1)[..., 0]
        )
        return np.asarray(heisenberg_norm(np.linalg.norm(np.atleast_2d(dx1), axis=-1), dz))

    return metric


def gauge_metric(g: CarnotStructure):
    """Vectorized gauge-distance evaluator; equivalent to d_cc up to kappa."""

    def metric(ax1, ax2, bx1, bx2):
        ax1 = np.asarray(ax1, dtype=float)
        bx1 = np.asarray(bx1, dtype=float)
        dx1 = bx1 - ax1
        dx2 = np.asarray(bx2, dtype=float) - np.asarray(ax2, dtype=float) - 0.5 * w_bilinear(g, ax1, bx1)
        return np.asarray(gauge_norm_parts(np.atleast_2d(dx1), np.atleast_2d(dx2)))

    return metric


@dataclass(frozen=True)
class GeodesicSolverOptions:
    """Knobs for the variational distance oracle."""

    segments: int = 256
    penalty_start: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e6
    restarts: int = 8
    max_iterations: int = 300
    tolerance: float = 3e-3  # gauge-distance feasibility residual
    seed: int = 0

    def __post_init__(self):
        if self.segments < 16:
            raise DomainError("segments must be >= 16")
        if self.restarts < 1:
            raise DomainError("restarts must be >= 1")
        for name in ("penalty_start", "penalty_growth", "penalty_max", "tolerance"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


def _lift_endpoint(g: CarnotStructure, positions: np.ndarray) -> np.ndarray:
    """Second level of the exact lift endpoint for node positions (K+1, d1)."""
    return 0.5 * np.sum(w_bilinear(g, positions[:-1], positions[1:]), axis=0)


def _oracle_objective(u_flat, g, k, x_target, z_target, lam):
    u = u_flat.reshape(k, g.d1)
    p = np.vstack([np.zeros((1, g.d1)), np.cumsum(u, axis=0)])
    energy = k * float(np.sum(u * u))
    grad_e = 2.0 * k * u

    z = 0.5 * np.sum(w_bilinear(g, p[:-1], p[1:]), axis=0)
    rx = p[-1] - x_target
    rz = z - z_target
    penalty = float(rx @ rx + rz @ rz)

    # dz_m/du_j = (1/2) [ W(p_{j-1} (x) .)_m + W(. (x) (p_K - p_j))_m ]
    left = np.einsum("ki,ilm->klm", p[:-1], g.w)
    right = np.einsum("kl,ilm->kim", p[-1] - p[1:], g.w)
    dz = 0.5 * (left + right)
    grad_p = 2.0 * rx[None, :] + 2.0 * np.einsum("m,kim->ki", rz, dz)

    value = energy + lam * penalty
    grad = (grad_e + lam * grad_p).ravel()
    return value, grad


def _initial_paths(g, k, x_target, z_target, restarts, rng):
    """Initial node increments: straight line, circle-seeded, randomized."""
    inits = []
    straight = np.tile(x_target / k, (k, 1))
    inits.append(straight.copy())

    t = (np.arange(k + 1)) / k
    circle_bump = np.zeros((k + 1, g.d1))
    for m in range(g.d2):
        zm = z_target[m]
        if abs(zm) < 1e-14:
            continue
        idx = np.unravel_index(np.argmax(np.abs(g.w[:, :, m])), (g.d1, g.d1))
        i, j = int(idx[0]), int(idx[1])
        wij = g.w[i, j, m]
        area = zm / wij  # one traversed circle contributes w_ij * (signed area)
        rho = np.sqrt(abs(area) / np.pi)
        ang = 2.0 * np.pi * t * np.sign(area)
        circle_bump[:, i] += rho * (np.cos(ang) - 1.0)
        circle_bump[:, j] += rho * np.sin(ang)
    base_nodes = t[:, None] * x_target[None, :]
    inits.append(np.diff(base_nodes + circle_bump, axis=0))

    while len(inits) < restarts:
        modes = rng.standard_normal((3, g.d1))
        wiggle = sum(
            np.sin(np.pi * (q + 1) * t)[:, None] * modes[q][None, :] / (q + 1)
            for q in range(3)
        )
        scale = 0.5 * (np.linalg.norm(x_target) + np.sqrt(np.linalg.norm(z_target)) + 0.5)
        inits.append(np.diff(base_nodes + circle_bump + scale * wiggle, axis=0))
    return inits[:restarts]


def cc_distance_oracle(
    g: CarnotStructure,
    a: GroupElement,
    b: GroupElement,
    opts: GeodesicSolverOptions | None = None,
) -> float:
    """Variational upper bound on d_cc(a, b) for any step-2 structure.

    Minimizes the length of a K-segment piecewise-linear horizontal path whose
    exact lift endpoint matches a^-1 b, with quadratic endpoint penalty and
    continuation. Feasibility means gauge residual below opts.tolerance.
    """
    opts = opts or GeodesicSolverOptions()
    c = product(g, inverse(g, a), b)
    x_target = c.x1
    z_target = c.x2
    k = opts.segments

    if np.linalg.norm(x_target) < 1e-14 and np.linalg.norm(z_target) < 1e-14:
        return 0.0

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(opts.seed)))
    best = None
    best_residual = np.inf
    for u0 in _initial_paths(g, k, x_target, z_target, opts.restarts, rng):
        u = u0.ravel().copy()
        lam = opts.penalty_start
        while True:
            res = optimize.minimize(
                _oracle_objective,
                u,
                args=(g, k, x_target, z_target, lam),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": opts.max_iterations, "ftol": 1e-14, "gtol": 1e-12},
            )
            u = res.x
            if lam >= opts.penalty_max:
                break
            lam = min(lam * opts.penalty_growth, opts.penalty_max)
        uu = u.reshape(k, g.d1)
        p_end = np.sum(uu, axis=0)
        z_end = _lift_endpoint(g, np.vstack([np.zeros((1, g.d1)), np.cumsum(uu, axis=0)]))
        residual = gauge_norm_parts(
            np.atleast_2d(p_end - x_target), np.atleast_2d(z_end - z_target)
        )
        length = float(np.sum(np.linalg.norm(uu, axis=1)))
        best_residual = min(best_residual, residual)
        if residual <= opts.tolerance and (best is None or length < best):
            best = length
    if best is None:
        raise InfeasibleError(
            "no feasible path found at max penalty",
            {"best_residual": best_residual, "tolerance": opts.tolerance, "target": c.coords()},
        )
    return best


def oracle_metric(g: CarnotStructure, opts: GeodesicSolverOptions | None = None):
    """Scalar-loop CC evaluator backed by the variational oracle (slow)."""
    opts = opts or GeodesicSolverOptions()

    def metric(ax1, ax2, bx1, bx2):
        ax1, ax2 = np.atleast_2d(ax1), np.atleast_2d(ax2)
        bx1, bx2 = np.atleast_2d(bx1), np.atleast_2d(bx2)
        out = np.empty(ax1.shape[0])
        for i in range(ax1.shape[0]):
            out[i] = cc_distance_oracle(
                g, GroupElement(ax1[i], ax2[i]), GroupElement(bx1[i], bx2[i]), opts
            )
        return out

    return metric


def cc_metric(g: CarnotStructure, opts: GeodesicSolverOptions | None = None):
    """Preferred CC evaluator: closed form on Heisenberg presets, oracle otherwise."""
    if is_heisenberg(g):
        return heisenberg_metric(g)
    return oracle_metric(g, opts)


def sample_gauge_ball(g: CarnotStructure, rng: np.random.Generator, size: int, radius: float = 1.0):
    """Draw points with gauge norm <= radius, radially by homogeneous volume.

    Returns (x1, x2) arrays of shapes (size, d1) and (size, d2).
    """
    x1 = rng.standard_normal((size, g.d1))
    x2 = rng.standard_normal((size, g.d2)) if g.d2 else np.zeros((size, 0))
    norms = np.atleast_1d(gauge_norm_parts(x1, x2))
    norms = np.where(norms < 1e-12, 1.0, norms)
    target = radius * rng.random(size) ** (1.0 / g.homogeneous_dimension)
    s = target / norms
    return x1 * s[:, None], x2 * (s * s)[:, None]


def equivalence_sandwich_probe(
    g: CarnotStructure, samples: int, seed: int
) -> tuple[float, float]:
    """Empirical constants for the gauge / CC norm equivalence on H^n.

    Returns (kappa_low, kappa_high) = (max d_g/d_cc, max d_cc/d_g) over random
    pairs in the unit gauge ball; (1, 1) by convention for samples = 0. The
    overall estimate is kappa_hat = max of the two.
    """
    _require_heisenberg(g)
    if samples == 0:
        return (1.0, 1.0)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ax1, ax2 = sample_gauge_ball(g, rng, samples)
    bx1, bx2 = sample_gauge_ball(g, rng, samples)
    dcc = heisenberg_metric(g)(ax1, ax2, bx1, bx2)
    dg = gauge_metric(g)(ax1, ax2, bx1, bx2)
    ok = (dcc > 0) & (dg > 0)
    if not np.any(ok):
        return (1.0, 1.0)
    return (float(np.max(dg[ok] / dcc[ok])), float(np.max(dcc[ok] / dg[ok])))


def cost_matrix(
    g: CarnotStructure,
    points_a,
    points_b,
    metric=None,
    squared: bool = False,
) -> np.ndarray:
    """Row-major matrix of CC distances (or squared distances) between point sets.

    points_a / points_b are (x1, x2) array pairs with shapes (n, d1), (n, d2).
    """
    metric = metric or cc_metric(g)
    ax1, ax2 = (np.asarray(p, dtype=float) for p in points_a)
    bx1, bx2 = (np.asarray(p, dtype=float) for p in points_b)
    out = np.asarray(
        metric(ax1[:, None, :], ax2[:, None, :], bx1[None, :, :], bx2[None, :, :]),
        dtype=float,
    )
    return out * out if squared else out


def write_cost_matrix_csv(matrix: np.ndarray, path) -> None:
    """Dump a cost matrix as CSV rows "i,j,value"."""
    with open(path, "w") as fh:
        fh.write("i,j,value\n")
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                fh.write(f"{i},{j},{matrix[i, j]!r}\n")


def certify_heisenberg_closed_form(
    g: CarnotStructure,
    pairs: int,
    seed: int,
    opts: GeodesicSolverOptions | None = None,
) -> dict:
    """Compare the closed form against the variational oracle on random pairs
    in the unit gauge ball; returns worst and mean relative disagreement."""
    _require_heisenberg(g)
    opts = opts or GeodesicSolverOptions(segments=96, restarts=4)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ax1, ax2 = sample_gauge_ball(g, rng, pairs)
    bx1, bx2 = sample_gauge_ball(g, rng, pairs)
    rel = np.empty(pairs)
    for i in range(pairs):
        a = GroupElement(ax1[i], ax2[i])
        b = GroupElement(bx1[i], bx2[i])
        closed = cc_distance_heisenberg(g, a, b)
        upper = cc_distance_oracle(g, a, b, replace(opts, seed=opts.seed + i))
        rel[i] = abs(upper - closed) / max(closed, 1e-9)
    return {
        "pairs": pairs,
        "max_rel_disagreement": float(np.max(rel)),
        "mean_rel_disagreement": float(np.mean(rel)),
    }
