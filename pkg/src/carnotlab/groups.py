"""Step-2 Carnot group algebra in exponential coordinates.

A step-2 Carnot group is identified with R^{d1} (+) R^{d2}. The bracket of
horizontal basis fields is encoded by an antisymmetric tensor of structure
constants w[i, j, k] (i, j < d1, k < d2), and the group product takes the
Baker-Campbell-Hausdorff form

    (x1, x2) . (y1, y2) = (x1 + y1, x2 + y2 + (1/2) W(x1 (x) y1)),

where W maps a d1 x d1 matrix A to the vertical vector with components
sum_ij w[i, j, k] A[i, j]. Dilations act as (s x1, s^2 x2), the inverse is
plain negation, and the homogeneous (gauge) distance is
|first level| + |second level|^(1/2) of the left difference.

Shipped presets: the Heisenberg groups H1, H2 and the free step-2 groups
F22 (isomorphic to H1) and F32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, DomainError


@dataclass(frozen=True)
class CarnotStructure:
    """Dimensions and structure constants defining a step-2 Carnot group.

    ``w`` has shape (d1, d1, d2) and is exactly antisymmetric in its first two
    indices. Use :meth:`from_entries` to build one from the independent i < j
    entries (antisymmetry is then enforced by construction).
    """

    name: str
    d1: int
    d2: int
    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.d1 < 1:
            raise DomainError(f"d1 must be positive, got {self.d1}")
        if self.d2 < 0:
            raise DomainError(f"d2 must be non-negative, got {self.d2}")
        w = np.asarray(self.w, dtype=float)
        if w.shape != (self.d1, self.d1, self.d2):
            raise DimensionMismatchError(
                f"w has shape {w.shape}, expected {(self.d1, self.d1, self.d2)}"
            )
        if not np.array_equal(w, -np.swapaxes(w, 0, 1)):
            raise DomainError("structure constants must satisfy w[i,j,k] = -w[j,i,k] exactly")
        object.__setattr__(self, "w", w)

    @property
    def homogeneous_dimension(self) -> int:
        return self.d1 + 2 * self.d2

    @classmethod
    def from_entries(cls, name: str, d1: int, d2: int, entries) -> "CarnotStructure":
        """Build a structure from {(i, j, k): value} with i < j; the j > i
        entries are materialized by antisymmetry."""
        w = np.zeros((d1, d1, d2))
        for (i, j, k), value in dict(entries).items():
            if not (0 <= i < j < d1 and 0 <= k < d2):
                raise DomainError(f"entry ({i},{j},{k}) out of range or not i < j")
            w[i, j, k] = value
            w[j, i, k] = -value
        return cls(name=name, d1=d1, d2=d2, w=w)

    def to_json_dict(self) -> dict:
        i, j, k = np.nonzero(np.triu(np.ones((self.d1, self.d1)), 1)[:, :, None] * (self.w != 0))
        rows = [[int(a), int(b), int(c), float(self.w[a, b, c])] for a, b, c in zip(i, j, k)]
        return {"name": self.name, "d1": self.d1, "d2": self.d2, "w": rows}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CarnotStructure":
        entries = {(int(i), int(j), int(k)): float(v) for i, j, k, v in doc["w"]}
        return cls.from_entries(doc["name"], int(doc["d1"]), int(doc["d2"]), entries)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CarnotStructure":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class GroupElement:
    """A point (x1, x2) of the group in exponential coordinates."""

    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=float).reshape(-1))
        object.__setattr__(self, "x2", np.asarray(self.x2, dtype=float).reshape(-1))

    def coords(self) -> np.ndarray:
        return np.concatenate([self.x1, self.x2])


def element(g: CarnotStructure, coords) -> GroupElement:
    """Build a GroupElement from a flat coordinate vector (d1 + d2 entries)."""
    coords = np.asarray(coords, dtype=float).reshape(-1)
    if coords.size != g.d1 + g.d2:
        raise DimensionMismatchError(f"expected {g.d1 + g.d2} coordinates, got {coords.size}")
    return GroupElement(coords[: g.d1], coords[g.d1 :])


def identity(g: CarnotStructure) -> GroupElement:
    return GroupElement(np.zeros(g.d1), np.zeros(g.d2))


def _check_element(g: CarnotStructure, a: GroupElement) -> None:
    if a.x1.shape != (g.d1,) or a.x2.shape != (g.d2,):
        raise DimensionMismatchError(
            f"element has shapes {a.x1.shape}/{a.x2.shape}, structure wants ({g.d1},)/({g.d2},)"
        )


def w_apply(g: CarnotStructure, matrix: np.ndarray) -> np.ndarray:
    """Apply the structure-constant operator W to a d1 x d1 matrix.

    Component k is sum_ij w[i,j,k] * A[i,j]; symmetric matrices map to zero.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (g.d1, g.d1):
        raise DimensionMismatchError(f"matrix has shape {matrix.shape}, expected {(g.d1, g.d1)}")
    return np.einsum("ij,ijk->k", matrix, g.w)


def w_bilinear(g: CarnotStructure, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """W(x (x) y) for stacked vectors; broadcasts over leading axes."""
    return np.einsum("...i,...j,ijk->...k", np.asarray(x, dtype=float), np.asarray(y, dtype=float), g.w)


def product(g: CarnotStructure, a: GroupElement, b: GroupElement) -> GroupElement:
    """BCH group product (a.x1 + b.x1, a.x2 + b.x2 + (1/2) W(a.x1 (x) b.x1))."""
    _check_element(g, a)
    _check_element(g, b)
    return GroupElement(a.x1 + b.x1, a.x2 + b.x2 + 0.5 * w_bilinear(g, a.x1, b.x1))


def inverse(g: CarnotStructure, a: GroupElement) -> GroupElement:
    """Group inverse; in step-2 exponential coordinates this is negation."""
    _check_element(g, a)
    return GroupElement(-a.x1, -a.x2)


def dilate(g: CarnotStructure, s: float, a: GroupElement) -> GroupElement:
    """Anisotropic dilation (s x1, s^2 x2); a group homomorphism for s > 0."""
    if not s > 0:
        raise DomainError(f"dilation factor must be positive, got {s}")
    _check_element(g, a)
    return GroupElement(s * a.x1, (s * s) * a.x2)


def gauge_norm_parts(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """|x1| + |x2|^(1/2), broadcasting over leading axes."""
    n1 = np.linalg.norm(np.atleast_2d(x1), axis=-1)
    n2 = np.sqrt(np.linalg.norm(np.atleast_2d(x2), axis=-1)) if x2.shape[-1] else 0.0
    out = n1 + n2
    return out if out.size > 1 else float(out[0])


def gauge_distance(g: CarnotStructure, a: GroupElement, b: GroupElement) -> float:
    """Gauge distance |(b^-1 a).x1| + |(b^-1 a).x2|^(1/2).

    Left-invariant by construction. Symmetry in (a, b) is not asserted
    anywhere; only the definition as displayed is implemented.
    """
    d = product(g, inverse(g, b), a)
    n2 = np.sqrt(np.linalg.norm(d.x2)) if g.d2 else 0.0
    return float(np.linalg.norm(d.x1) + n2)


@dataclass(frozen=True)
class HTypeResult:
    is_h_type: bool
    max_violation: float
    worst_pair: tuple
    reason: str = ""

    def __bool__(self) -> bool:
        return self.is_h_type


def h_type_check(g: CarnotStructure, tol: float = 1e-10) -> HTypeResult:
    """Test the H-type anti-commutation relations of the maps J(z).

    J(e_k) is defined by <W(x (x) y), e_k> = <J(e_k) x, y>, i.e.
    J(e_k)[j, i] = w[i, j, k]. The group is H-type iff
    J(e_k) J(e_l) + J(e_l) J(e_k) = -2 delta_kl I for all k, l.
    """
    if g.d2 == 0:
        return HTypeResult(False, float("inf"), (), reason="abelian vertical layer empty")
    J = np.transpose(g.w, (1, 0, 2))  # J[:, :, k] = J(e_k)
    worst = -1.0
    worst_pair = (0, 0)
    eye = np.eye(g.d1)
    for k in range(g.d2):
        for l in range(k, g.d2):
            anti = J[:, :, k] @ J[:, :, l] + J[:, :, l] @ J[:, :, k]
            target = -2.0 * eye if k == l else 0.0
            violation = float(np.max(np.abs(anti - target)))
            if violation > worst:
                worst, worst_pair = violation, (k, l)
    return HTypeResult(worst <= tol, worst, worst_pair)


def heisenberg(n: int) -> CarnotStructure:
    """Heisenberg group H^n: d1 = 2n, d2 = 1, symplectic pairs (2m, 2m+1)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    entries = {(2 * m, 2 * m + 1, 0): 1.0 for m in range(n)}
    return CarnotStructure.from_entries(f"H{n}", 2 * n, 1, entries)


def free_step2(d1: int) -> CarnotStructure:
    """Free step-2 group on d1 generators; vertical layer indexed by pairs i < j."""
    if d1 < 2:
        raise DomainError("free step-2 group needs at least 2 generators")
    pairs = [(i, j) for i in range(d1) for j in range(i + 1, d1)]
    entries = {(i, j, k): 1.0 for k, (i, j) in enumerate(pairs)}
    return CarnotStructure.from_entries(f"F{d1}2", d1, len(pairs), entries)


_PRESET_BUILDERS = {
    "H1": lambda: heisenberg(1),
    "H2": lambda: heisenberg(2),
    "F22": lambda: free_step2(2),
    "F32": lambda: free_step2(3),
}


def preset(name: str) -> CarnotStructure:
    try:
        return _PRESET_BUILDERS[name]()
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; available: {sorted(_PRESET_BUILDERS)}") from None


def preset_names() -> list[str]:
    return sorted(_PRESET_BUILDERS)


def is_heisenberg(g: CarnotStructure) -> bool:
    """True iff g carries exactly the H^n structure constants (d1 = 2n, d2 = 1,
    w[2m, 2m+1, 0] = 1). F22 qualifies; it is H1 under another name."""
    if g.d2 != 1 or g.d1 % 2 != 0:
        return False
    return np.array_equal(g.w, heisenberg(g.d1 // 2).w)
