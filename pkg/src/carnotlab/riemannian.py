"""Riemannian approximation of the first Heisenberg group.

For epsilon > 0 the space is R^3 with the same group law as H1 but with the
left-invariant Riemannian metric that makes the frame (X, Y, eps * Z)
orthonormal. Curve length is

    int sqrt( |dx|^2 + |dy|^2 + eps^-2 |dz - (1/2)(x dy - dx y)|^2 ),

which for horizontal lifts reduces to the sub-Riemannian length (the residual
cancels segment-wise under midpoint quadrature, exactly). Distances increase
to the Carnot-Caratheodory distance as eps decreases.

Two distance evaluators are provided: riemann_distance minimizes the discrete
length functional over free interior nodes (gradient-based, multi-started),
and riemann_distance_heisenberg evaluates the geodesic family in closed form.
Geodesics of the left-invariant metric again project to circular arcs of
constant turning rate phi, now with a constant frame-vertical speed eps*phi,
so with mu as in the sub-Riemannian solve the endpoint equation becomes

    r^2 mu(phi) + eps^2 phi = z,   phi in (-2pi, 2pi),

whose left side is strictly increasing, and the length is
sqrt(s^2 + eps^2 phi^2) with s = r phi / (2 sin(phi/2)). For targets on the
vertical axis the minimizer is the straight vertical line of length |z|/eps
up to the cut point |z| = 2 pi eps^2 and the full-circle branch
sqrt(4 pi |z| - 4 pi^2 eps^2) beyond it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericalError
from .ccmetric import GeodesicSolverOptions, _mu, _TWO_PI, heisenberg_unit_geodesic
from .groups import CarnotStructure, heisenberg
from .paths import DyadicGroupPath, HorizontalPath, lift, refine_nodes, shift


@dataclass(frozen=True)
class EpsilonSpace:
    """The epsilon-Riemannian Heisenberg space (fixed H1 coordinates x, y, z)."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")

    @property
    def structure(self) -> CarnotStructure:
        return heisenberg(1)


def _segment_quadratics(eps: EpsilonSpace, nodes: np.ndarray) -> np.ndarray:
    """Per-segment squared frame displacement under midpoint quadrature.

    nodes: (..., K+1, 3). Returns (..., K) with
    q_k = |dx|^2 + |dy|^2 + eps^-2 (dz - (1/2)(x_mid dy - dx y_mid))^2.
    """
    d = np.diff(nodes, axis=-2)
    mid = 0.5 * (nodes[..., :-1, :] + nodes[..., 1:, :])
    resid = d[..., 2] - 0.5 * (mid[..., 0] * d[..., 1] - d[..., 0] * mid[..., 1])
    return d[..., 0] ** 2 + d[..., 1] ** 2 + (resid / eps.epsilon) ** 2


def riemann_length(eps: EpsilonSpace, gamma: np.ndarray, segments: int | None = None) -> float:
    """Length of a piecewise-linear coordinate path under the epsilon metric."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2 or gamma.shape[1] != 3:
        raise DomainError("gamma must be an array of (K+1, 3) coordinate nodes")
    k = gamma.shape[0] - 1
    if segments is not None and segments != k:
        raise DomainError(f"gamma has {k} segments, caller declared {segments}")
    if k < 1:
        raise DomainError("need at least one segment")
    return float(np.sum(np.sqrt(_segment_quadratics(eps, gamma))))


def _energy_and_grad(interior_flat, eps, k, start, end):
    """Discrete path energy k * sum q_k and its gradient in the interior nodes.

    With xm = (xl+xr)/2, ym = (yl+yr)/2 and d = right - left per segment,
    resid = dz - (1/2)(xm dy - dx ym), q = dx^2 + dy^2 + resid^2/eps^2.
    """
    nodes = np.vstack([start[None, :], interior_flat.reshape(k - 1, 3), end[None, :]])
    d = np.diff(nodes, axis=0)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    inv2 = 1.0 / (eps * eps)
    resid = d[:, 2] - 0.5 * (mid[:, 0] * d[:, 1] - d[:, 0] * mid[:, 1])
    q = d[:, 0] ** 2 + d[:, 1] ** 2 + inv2 * resid**2
    energy = k * float(np.sum(q))

    r = 2.0 * inv2 * resid
    gleft = np.empty((k, 3))
    gright = np.empty((k, 3))
    gleft[:, 0] = -2.0 * d[:, 0] + r * (-0.25 * d[:, 1] - 0.5 * mid[:, 1])
    gright[:, 0] = 2.0 * d[:, 0] + r * (-0.25 * d[:, 1] + 0.5 * mid[:, 1])
    gleft[:, 1] = -2.0 * d[:, 1] + r * (0.5 * mid[:, 0] + 0.25 * d[:, 0])
    gright[:, 1] = 2.0 * d[:, 1] + r * (-0.5 * mid[:, 0] + 0.25 * d[:, 0])
    gleft[:, 2] = -r
    gright[:, 2] = r

    grad_nodes = np.zeros((k + 1, 3))
    grad_nodes[:-1] += gleft
    grad_nodes[1:] += gright
    return energy, (k * grad_nodes[1:-1]).ravel()


def _vertical_axis_distance(eps_value: float, z: float) -> float:
    z = abs(z)
    if z <= _TWO_PI * eps_value * eps_value:
        return z / eps_value
    return float(np.sqrt(4.0 * np.pi * z - (_TWO_PI * eps_value) ** 2))


def riemann_norm(eps_value: float, r, z) -> np.ndarray:
    """Closed-form epsilon-Riemannian distance from the identity, vectorized
    over horizontal radius r and vertical coordinate z."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    r, z = np.broadcast_arrays(r, z)
    out = np.empty(r.shape)

    axis = r <= 1e-300
    if np.any(axis):
        za = np.abs(z[axis])
        line = za / eps_value
        circle_sq = 4.0 * np.pi * za - (_TWO_PI * eps_value) ** 2
        on_circle = za > _TWO_PI * eps_value * eps_value
        out[axis] = np.where(on_circle, np.sqrt(np.maximum(circle_sq, 0.0)), line)

    rest = ~axis
    if np.any(rest):
        rr = r[rest]
        target = np.abs(z[rest])  # the distance is even in z
        e2 = eps_value * eps_value
        lo = np.zeros_like(rr)
        hi = np.full_like(rr, _TWO_PI - 1e-12)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            val = rr * rr * _mu(mid) + e2 * mid
            too_small = val < target
            lo = np.where(too_small, mid, lo)
            hi = np.where(too_small, hi, mid)
        phi = 0.5 * (lo + hi)
        small = phi < 1e-8
        s = np.where(small, rr, rr * phi / (2.0 * np.sin(np.where(small, 1.0, phi) / 2.0)))
        out[rest] = np.sqrt(s * s + e2 * phi * phi)
    return out if out.size > 1 else out.reshape(())


def riemann_metric(eps: EpsilonSpace):
    """Vectorized epsilon-distance evaluator on stacked H1 coordinates."""
    g = eps.structure

    def metric(ax1, ax2, bx1, bx2):
        ax1 = np.asarray(ax1, dtype=float)
        bx1 = np.asarray(bx1, dtype=float)
        dx1 = bx1 - ax1
        cross = ax1[..., 0] * bx1[..., 1] - ax1[..., 1] * bx1[..., 0]
        dz = np.asarray(bx2, dtype=float)[..., 0] - np.asarray(ax2, dtype=float)[..., 0] - 0.5 * cross
        r = np.linalg.norm(np.atleast_2d(dx1), axis=-1)
        return np.asarray(riemann_norm(eps.epsilon, r, dz))

    del g
    return metric


def riemann_distance(
    eps: EpsilonSpace,
    a,
    b,
    opts: GeodesicSolverOptions | None = None,
) -> float:
    """Variational epsilon-distance: minimize the discrete length over
    K-segment paths with fixed endpoints (no horizontality constraint).

    Multi-start: straight segment, the closed-form CC geodesic polyline (good
    as eps -> 0), the coordinate vertical detour (good for vertical-heavy
    targets at large eps), plus random perturbations. Upper-convergent in K.
    """
    opts = opts or GeodesicSolverOptions(segments=128, restarts=4, max_iterations=1500)
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    k = opts.segments
    # left translation: work from the identity to c = a^-1 b
    c = np.empty(3)
    c[:2] = b[:2] - a[:2]
    c[2] = b[2] - a[2] - 0.5 * (a[0] * b[1] - a[1] * b[0])
    if np.linalg.norm(c) < 1e-15:
        return 0.0

    t = np.linspace(0.0, 1.0, k + 1)[:, None]
    inits = [t * c[None, :]]
    cc_nodes = heisenberg_unit_geodesic(c[:2], c[2], k)
    inits.append(cc_nodes)
    vertical = np.zeros((k + 1, 3))
    half = (k + 1) // 2
    vertical[:half, 2] = np.linspace(0.0, c[2], half)
    vertical[half:, 2] = c[2]
    vertical[half:, :2] = np.linspace(0.0, 1.0, k + 1 - half)[:, None] * c[None, :2]
    inits.append(vertical)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(opts.seed)))
    while len(inits) < opts.restarts:
        wiggle = np.sin(np.pi * t) * rng.standard_normal(3)[None, :] * 0.3 * (1 + np.linalg.norm(c))
        inits.append(t * c[None, :] + wiggle)

    start = np.zeros(3)
    best = np.inf
    for init in inits[: opts.restarts]:
        res = optimize.minimize(
            _energy_and_grad,
            init[1:-1].ravel(),
            args=(eps.epsilon, k, start, c),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": opts.max_iterations, "ftol": 1e-14, "gtol": 1e-10},
        )
        nodes = np.vstack([start[None, :], res.x.reshape(k - 1, 3), c[None, :]])
        best = min(best, riemann_length(eps, nodes))
    if not np.isfinite(best):
        raise NumericalError("epsilon-distance minimization failed", {"target": c})
    return float(best)


def lift_eps(eps: EpsilonSpace, omega: HorizontalPath, out_level: int | None = None) -> DyadicGroupPath:
    """Lift of a 3-component driver: step-2 lift of the first two components,
    plus the vertical translation by eps * third component."""
    if omega.dim != 3:
        raise DomainError("epsilon lift needs 3-component drivers")
    g = eps.structure
    out_level = omega.level if out_level is None else out_level
    planar = HorizontalPath(omega.level, omega.values[:, :2])
    lifted = lift(g, planar, out_level)
    w3 = refine_nodes(omega.values[:, 2:3], omega.level, out_level)
    return DyadicGroupPath(g, out_level, lifted.x1, lifted.x2 + eps.epsilon * w3)


def shift_eps(eps: EpsilonSpace, X: DyadicGroupPath, h: HorizontalPath) -> DyadicGroupPath:
    """Shift by a 3-component direction: planar shift then vertical translation.

    Satisfies shift_eps(lift_eps(w), h) = lift_eps(w + h) exactly.
    """
    if h.dim != 3:
        raise DomainError("epsilon shift needs 3-component directions")
    planar = HorizontalPath(h.level, h.values[:, :2])
    shifted = shift(X, planar)
    h3 = refine_nodes(h.values[:, 2:3], h.level, X.level)
    return DyadicGroupPath(X.structure, X.level, shifted.x1, shifted.x2 + eps.epsilon * h3)


def epsilon_increment_cost(
    X: DyadicGroupPath, Y: DyadicGroupPath, n: int, eps: EpsilonSpace, metric=None
) -> float:
    """Dyadic increment cost under the epsilon metric (closed form by default)."""
    from .paths import increment_cost

    return increment_cost(X, Y, n, metric or riemann_metric(eps))
