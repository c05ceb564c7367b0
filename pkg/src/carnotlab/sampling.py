"""Brownian motion on the group: sampling, drifts, entropy, marginal probes.

Sampling draws i.i.d. Gaussian increments N(0, 2^-N I) per dyadic step from a
counter-based Philox stream keyed by (seed, path index), forms the piecewise-
linear first level, and lifts it exactly. The lift of the level-N interpolation
is the working definition of the group Brownian motion at level N.

Drifts are applied along the base path: a drift b produces samples of the law
of the shifted path B + int b(B) dt, with the discretized Girsanov log-density

    log dnu/dmu (shifted path) = sum_k b_{k-1} . dB_k + (1/2) sum_k |b_{k-1}|^2 dt

accumulated along the original B (left-endpoint, predictable discretization).
The relative entropy of the shifted law is H = (1/2) E int |b|^2 dt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError, UnsupportedStructureError
from .groups import CarnotStructure, GroupElement, is_heisenberg
from .paths import DyadicGroupPath, HorizontalPath, lift_nodes, refine_nodes


def rng_stream(seed: int, *key) -> np.random.Generator:
    """Counter-based generator for a (seed, *key) unit of work; order-independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class SampleConfig:
    """Grid level (2^level steps), path count, and base seed for one ensemble."""

    level: int
    count: int
    seed: int

    def __post_init__(self):
        if self.level < 1:
            raise DomainError("level must be >= 1")
        if self.count < 1:
            raise DomainError("count must be >= 1")


@dataclass(frozen=True)
class DriftSpec:
    """Adapted drift: either a deterministic Cameron-Martin direction or a
    state-feedback map (t, positions (M, d1)) -> (M, d1) evaluated at left
    endpoints."""

    kind: str
    path: HorizontalPath | None = None
    feedback: Callable | None = field(default=None, repr=False)
    label: str = ""

    @classmethod
    def deterministic(cls, h: HorizontalPath, label: str = "deterministic") -> "DriftSpec":
        return cls(kind="deterministic", path=h, label=label)

    @classmethod
    def state_feedback(cls, fn: Callable, label: str = "feedback") -> "DriftSpec":
        return cls(kind="feedback", feedback=fn, label=label)


class PathSample:
    """An ensemble of lifted paths; behaves as a sequence of DyadicGroupPath."""

    def __init__(self, structure: CarnotStructure, level: int, first_level, second_level):
        self.structure = structure
        self.level = level
        self.first_level = np.asarray(first_level, dtype=float)  # (M, T, d1)
        self.second_level = np.asarray(second_level, dtype=float)  # (M, T, d2)

    def __len__(self) -> int:
        return self.first_level.shape[0]

    def __getitem__(self, i: int) -> DyadicGroupPath:
        return DyadicGroupPath(self.structure, self.level, self.first_level[i], self.second_level[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def endpoints(self):
        return self.first_level[:, -1, :], self.second_level[:, -1, :]

    def write_endpoints_csv(self, path) -> None:
        """One row per path endpoint."""
        d1, d2 = self.structure.d1, self.structure.d2
        header = (
            ["path"]
            + [f"x1_{i+1}" for i in range(d1)]
            + [f"x2_{i+1}" for i in range(d2)]
        )
        e1, e2 = self.endpoints()
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self)):
                row = [str(i)] + [repr(float(v)) for v in e1[i]] + [repr(float(v)) for v in e2[i]]
                fh.write(",".join(row) + "\n")


def _driver_nodes(d1: int, cfg: SampleConfig, indices: np.ndarray) -> np.ndarray:
    """First-level node arrays (len(indices), T, d1) for the given path indices."""
    steps = 1 << cfg.level
    scale = np.sqrt(1.0 / steps)
    out = np.empty((len(indices), steps + 1, d1))
    out[:, 0, :] = 0.0
    for row, idx in enumerate(indices):
        inc = rng_stream(cfg.seed, int(idx)).standard_normal((steps, d1)) * scale
        np.cumsum(inc, axis=0, out=out[row, 1:, :])
    return out


def iter_driver_chunks(d1: int, cfg: SampleConfig, chunk: int | None = None):
    """Yield (indices, node arrays) in fixed index order, bounded memory."""
    if chunk is None:
        chunk = max(1, (1 << 23) // ((1 << cfg.level) + 1))
    for start in range(0, cfg.count, chunk):
        idx = np.arange(start, min(start + chunk, cfg.count))
        yield idx, _driver_nodes(d1, cfg, idx)


def sample_bm(g: CarnotStructure, cfg: SampleConfig) -> PathSample:
    """Sample cfg.count Brownian paths on the group at level cfg.level."""
    b = _driver_nodes(g.d1, cfg, np.arange(cfg.count))
    return PathSample(g, cfg.level, b, lift_nodes(g, b))


def _left_endpoint_drift(drift: DriftSpec, b_nodes: np.ndarray, level: int) -> np.ndarray:
    """Drift values at left endpoints, shape (M, steps, d1)."""
    steps = 1 << level
    if drift.kind == "deterministic":
        h = refine_nodes(drift.path.values, drift.path.level, level)
        return np.broadcast_to(np.diff(h, axis=0) * steps, (b_nodes.shape[0], steps, h.shape[1]))
    if drift.kind == "feedback":
        out = np.empty((b_nodes.shape[0], steps, b_nodes.shape[2]))
        for k in range(steps):
            out[:, k, :] = drift.feedback(k / steps, b_nodes[:, k, :])
        return out
    raise DomainError(f"unknown drift kind {drift.kind!r}")


def apply_drift(g: CarnotStructure, sample: PathSample, drift: DriftSpec):
    """Shift an ensemble along its drift; returns (shifted PathSample, log densities).

    The log densities are log dnu/dmu evaluated on the shifted paths, i.e.
    sum b . dB + (1/2) sum |b|^2 dt along the original drivers.
    """
    level = sample.level
    dt = 1.0 / (1 << level)
    b_nodes = sample.first_level
    bvals = _left_endpoint_drift(drift, b_nodes, level)
    if not np.all(np.isfinite(bvals)):
        raise NumericalError("drift produced non-finite values")
    h_nodes = np.concatenate(
        [np.zeros((b_nodes.shape[0], 1, b_nodes.shape[2])), np.cumsum(bvals * dt, axis=1)],
        axis=1,
    )
    shifted = b_nodes + h_nodes
    db = np.diff(b_nodes, axis=1)
    log_density = np.einsum("mkd,mkd->m", bvals, db) + 0.5 * np.sum(bvals * bvals, axis=(1, 2)) * dt
    return PathSample(g, level, shifted, lift_nodes(g, shifted)), log_density


def drift_energy(drift: DriftSpec, b_nodes: np.ndarray, level: int) -> np.ndarray:
    """(1/2) sum_k |b_{k-1}|^2 dt per path; the per-path entropy integrand."""
    bvals = _left_endpoint_drift(drift, b_nodes, level)
    return 0.5 * np.sum(bvals * bvals, axis=(1, 2)) / (1 << level)


def entropy_estimate(g: CarnotStructure, drift: DriftSpec, cfg: SampleConfig):
    """Monte Carlo estimate of H(nu || mu) = (1/2) E int |b|^2 dt.

    Returns (H_hat, standard error). Exact (zero variance) for deterministic
    drifts, at any level at or above the drift's resolution.
    """
    if drift.kind == "deterministic":
        h = drift.path
        if h.level <= cfg.level:
            hr = refine_nodes(h.values, h.level, cfg.level)
            inc = np.diff(hr, axis=0)
            return 0.5 * float((1 << cfg.level) * np.sum(inc * inc)), 0.0
    values = np.empty(cfg.count)
    for idx, b in iter_driver_chunks(g.d1, cfg):
        values[idx] = drift_energy(drift, b, cfg.level)
    h_hat = float(np.mean(values))
    sem = float(np.std(values, ddof=1) / np.sqrt(cfg.count)) if cfg.count > 1 else 0.0
    return h_hat, sem


class GroupSample:
    """A set of group points; behaves as a sequence of GroupElement."""

    def __init__(self, structure: CarnotStructure, x1, x2):
        self.structure = structure
        self.x1 = np.asarray(x1, dtype=float)
        self.x2 = np.asarray(x2, dtype=float)

    def __len__(self) -> int:
        return self.x1.shape[0]

    def __getitem__(self, i: int) -> GroupElement:
        return GroupElement(self.x1[i], self.x2[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def heat_kernel_samples(g: CarnotStructure, t: float, cfg: SampleConfig) -> GroupSample:
    """Samples of the time-t heat kernel measure: lifted-path nodes at time t.

    t must lie on the sample grid (t * 2^level integral) and in (0, 1].
    """
    if not 0.0 < t <= 1.0:
        raise DomainError(f"t must be in (0, 1], got {t}")
    steps = 1 << cfg.level
    node = t * steps
    if abs(node - round(node)) > 1e-12:
        raise DomainError(f"t = {t} is not a grid node at level {cfg.level}")
    node = int(round(node))
    x1 = np.empty((cfg.count, g.d1))
    x2 = np.empty((cfg.count, g.d2))
    for idx, b in iter_driver_chunks(g.d1, cfg):
        z = lift_nodes(g, b[:, : node + 1, :])
        x1[idx] = b[:, node, :]
        x2[idx] = z[:, -1, :]
    return GroupSample(g, x1, x2)


# --- heat-semigroup gradient bound probe (H1 only) -------------------------

def _h1_test_function(name: str):
    """Returns (f, |grad f|) callables on stacked H1 coordinates (x, y, z).

    The horizontal frame at a point is V1 = dx - (y/2) dz, V2 = dy + (x/2) dz,
    matching the BCH product with vertical increment (1/2)(x y' - x' y).
    """
    if name == "linear":
        return (lambda x, y, z: x, lambda x, y, z: np.ones_like(x))
    if name == "vertical":
        return (lambda x, y, z: z, lambda x, y, z: 0.5 * np.hypot(x, y))
    if name == "bump":
        def f(x, y, z):
            return np.exp(-(x * x + y * y + z * z))

        def grad_norm(x, y, z):
            v1 = -2.0 * x + y * z
            v2 = -2.0 * y - x * z
            return f(x, y, z) * np.hypot(v1, v2)

        return f, grad_norm
    raise DomainError(f"unknown test function {name!r}; use linear, vertical, or bump")


@dataclass(frozen=True)
class GradientBoundProbe:
    lhs: float
    rhs: float
    ratio: float
    lhs_std_error: float
    rhs_std_error: float
    inconclusive: bool


def gradient_bound_probe(
    g: CarnotStructure,
    f_name: str,
    t: float,
    cfg: SampleConfig,
    fd_step: float = 0.05,
) -> GradientBoundProbe:
    """Monte Carlo check of |grad P_t f|(e) <= K P_t(|grad f|)(e) on H1.

    The left side uses central finite differences of MC means with common
    random numbers (one shared endpoint sample across all base points); the
    right side is plain MC of the analytic horizontal gradient norm. Flagged
    inconclusive when the standard error exceeds 20% of the right side.
    """
    if not (is_heisenberg(g) and g.d1 == 2):
        raise UnsupportedStructureError("gradient bound probe is implemented for H1 only")
    f, grad_norm = _h1_test_function(f_name)

    m = cfg.count
    fd_sums = np.zeros(2)
    fd_sq_sums = np.zeros(2)
    rhs_sum = 0.0
    rhs_sq_sum = 0.0
    steps = 1 << cfg.level
    node = int(round(t * steps))
    if abs(t * steps - node) > 1e-12 or not 0.0 < t <= 1.0:
        raise DomainError(f"t = {t} must be a grid node at level {cfg.level} in (0, 1]")

    for idx, b in iter_driver_chunks(g.d1, cfg):
        z = lift_nodes(g, b[:, : node + 1, :])[:, -1, 0]
        ex, ey = b[:, node, 0], b[:, node, 1]
        # base point a = (a1, a2, 0): a . e = (a1 + ex, a2 + ey, z + (a1 ey - ex a2)/2)
        for axis in range(2):
            vals = []
            for sign in (1.0, -1.0):
                a = np.zeros(2)
                a[axis] = sign * fd_step
                px = a[0] + ex
                py = a[1] + ey
                pz = z + 0.5 * (a[0] * ey - ex * a[1])
                vals.append(f(px, py, pz))
            quot = (vals[0] - vals[1]) / (2.0 * fd_step)
            fd_sums[axis] += float(np.sum(quot))
            fd_sq_sums[axis] += float(np.sum(quot * quot))
        gn = grad_norm(ex, ey, z)
        rhs_sum += float(np.sum(gn))
        rhs_sq_sum += float(np.sum(gn * gn))

    fd_mean = fd_sums / m
    fd_var = np.maximum(fd_sq_sums / m - fd_mean**2, 0.0)
    fd_sem = np.sqrt(fd_var / m)
    lhs = float(np.hypot(fd_mean[0], fd_mean[1]))
    lhs_sem = float(np.sqrt(np.sum(fd_sem**2)))
    rhs = rhs_sum / m
    rhs_var = max(rhs_sq_sum / m - rhs * rhs, 0.0)
    rhs_sem = float(np.sqrt(rhs_var / m))
    inconclusive = bool(max(lhs_sem, rhs_sem) > 0.2 * rhs) if rhs > 0 else False
    ratio = lhs / rhs if rhs > 0 else float("inf")
    return GradientBoundProbe(lhs, rhs, ratio, lhs_sem, rhs_sem, inconclusive)
