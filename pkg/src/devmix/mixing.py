"""Discrete mixing measures, the atom metric rho, exact Wasserstein distances
between small discrete measures, and the composite divergence used as the
parameter-error yardstick.

The transportation problem is solved exactly (HiGHS LP on the dense cost
matrix); atom counts at desk scale stay around ten, so no entropic or
approximate solver is ever used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .errors import EvaluationError, InputError
from .gaussians import check_spd

_WEIGHT_TOL = 1e-12
DISTINCT_ATOM_TOL = 1e-8


def _freeze(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Atom:
    """A support point: location mu, plus an SPD scale matrix for the
    location-scale family (None for location-only atoms)."""

    location: np.ndarray
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float).reshape(-1)
        object.__setattr__(self, "location", _freeze(loc))
        if self.scale is not None:
            s = check_spd(np.asarray(self.scale, dtype=float), name="atom scale")
            if s.shape[0] != loc.shape[0]:
                raise InputError("scale dimension does not match location")
            object.__setattr__(self, "scale", _freeze(s))

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    @property
    def has_scale(self) -> bool:
        return self.scale is not None


def rho(a: Atom, b: Atom) -> float:
    """Atom metric: ||mu - mu'||_2 + ||Sigma - Sigma'||_F (scale term dropped
    for location-only atoms)."""
    if a.dim != b.dim:
        raise InputError("atoms have different dimensions")
    if a.has_scale != b.has_scale:
        raise InputError("cannot mix location-only and location-scale atoms")
    d = float(np.linalg.norm(a.location - b.location))
    if a.has_scale:
        d += float(np.linalg.norm(a.scale - b.scale, ord="fro"))
    return d


@dataclass(frozen=True)
class MixingMeasure:
    """G = sum_i p_i delta_{theta_i} with nonnegative weights summing to 1."""

    atoms: Tuple[Atom, ...]
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if len(atoms) < 1:
            raise InputError("a mixing measure needs at least one atom")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(atoms):
            raise InputError("weights and atoms must have the same length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise InputError("weights must be nonnegative and sum to 1 within 1e-12")
        dims = {a.dim for a in atoms}
        scaled = {a.has_scale for a in atoms}
        if len(dims) > 1 or len(scaled) > 1:
            raise InputError("atoms must share dimension and family")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def dim(self) -> int:
        return self.atoms[0].dim

    @property
    def has_scale(self) -> bool:
        return self.atoms[0].has_scale

    @property
    def k(self) -> int:
        return len(self.atoms)

    def locations(self) -> np.ndarray:
        return np.stack([a.location for a in self.atoms])

    def scales(self) -> Optional[np.ndarray]:
        if not self.has_scale:
            return None
        return np.stack([a.scale for a in self.atoms])

    def check_distinct(self, tol: float = DISTINCT_ATOM_TOL) -> None:
        for i in range(self.k):
            for j in range(i + 1, self.k):
                if rho(self.atoms[i], self.atoms[j]) <= tol:
                    raise InputError(f"atoms {i} and {j} coincide within rho <= {tol}")


def location_measure(locations, weights) -> MixingMeasure:
    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations.reshape(-1, 1)
    return MixingMeasure(tuple(Atom(loc) for loc in locations), np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class ConstraintClass:
    """Mixture constraint classes: exact k components, at most K components,
    and their variants with mixing proportions floored at c0."""

    kind: str  # "exact" | "over" | "exact_floor" | "over_floor"
    size: int
    c0: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("exact", "over", "exact_floor", "over_floor"):
            raise InputError(f"unknown constraint kind {self.kind!r}")
        if self.size < 1:
            raise InputError("component count must be >= 1")
        if self.floored:
            if self.c0 is None or not (0 < self.c0 < 1):
                raise InputError("floored classes need c0 in (0,1)")
            if self.size * self.c0 > 1.0 + _WEIGHT_TOL:
                raise InputError("infeasible floor: size * c0 > 1")
        elif self.c0 is not None:
            raise InputError("c0 is only meaningful for floored classes")

    @property
    def floored(self) -> bool:
        return self.kind.endswith("_floor")

    @property
    def exact(self) -> bool:
        return self.kind.startswith("exact")

    def validate(self, G: MixingMeasure) -> None:
        """Raise InputError when G violates the class."""
        if self.exact:
            if G.k != self.size:
                raise InputError(f"exact-fitted class needs {self.size} atoms, got {G.k}")
            if np.any(G.weights <= 0):
                raise InputError("exact-fitted weights must be strictly positive")
            G.check_distinct()
        else:
            if G.k > self.size:
                raise InputError(f"over-fitted class allows at most {self.size} atoms, got {G.k}")
        if self.floored and np.any(G.weights < self.c0 - _WEIGHT_TOL):
            raise InputError(f"weights must be >= c0 = {self.c0}")

    def project_weights(self, weights: np.ndarray) -> np.ndarray:
        """Floor projection: pin deficient weights at c0 and rescale the rest,
        repeated to a fixed point.

        This is the exact maximizer of sum w_j log p_j over the floored
        simplex (KKT water-filling), which keeps the EM log-likelihood
        monotone when applied after each M-step. Identity for unfloored
        classes.
        """
        w = np.asarray(weights, dtype=float).copy()
        w = np.maximum(w, 0.0)
        w /= w.sum()
        if not self.floored:
            return w
        k = len(w)
        pinned = np.zeros(k, dtype=bool)
        p = w.copy()
        for _ in range(k):
            free_mass = 1.0 - self.c0 * pinned.sum()
            denom = w[~pinned].sum()
            scale = free_mass / denom if denom > 0 else 0.0
            p = np.where(pinned, self.c0, w * scale)
            newly = (~pinned) & (p < self.c0 - 1e-15)
            if not newly.any():
                break
            pinned |= newly
        return np.maximum(p, self.c0) / np.maximum(p, self.c0).sum()


def _check_pair(G: MixingMeasure, G2: MixingMeasure) -> None:
    if G.dim != G2.dim or G.has_scale != G2.has_scale:
        raise InputError("measures must share dimension and atom family")


def _cost_matrix(G: MixingMeasure, G2: MixingMeasure, r: int) -> np.ndarray:
    C = np.empty((G.k, G2.k))
    for i, a in enumerate(G.atoms):
        for j, b in enumerate(G2.atoms):
            C[i, j] = rho(a, b) ** r
    return C


def wasserstein_power(G: MixingMeasure, G2: MixingMeasure, r: int = 1) -> float:
    """W_r(G, G2)^r: the optimal transportation cost under rho^r."""
    if r < 1:
        raise InputError("order r must be >= 1")
    _check_pair(G, G2)
    if G.weights.sum() <= 0 or G2.weights.sum() <= 0:
        raise InputError("degenerate measure with zero total mass")
    C = _cost_matrix(G, G2, r)
    k, k2 = C.shape
    if k == 1:
        return float(np.dot(G2.weights, C[0]))
    if k2 == 1:
        return float(np.dot(G.weights, C[:, 0]))
    # transportation LP: row sums = p_i, column sums = q_j
    A_eq = np.zeros((k + k2, k * k2))
    for i in range(k):
        A_eq[i, i * k2 : (i + 1) * k2] = 1.0
    for j in range(k2):
        A_eq[k + j, j::k2] = 1.0
    b_eq = np.concatenate([G.weights, G2.weights])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise EvaluationError(f"transportation LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def wasserstein(G: MixingMeasure, G2: MixingMeasure, r: int = 1) -> float:
    """Order-r Wasserstein distance between two discrete measures."""
    return wasserstein_power(G, G2, r) ** (1.0 / r)


def w_bar(lam: float, G: MixingMeasure, lam_star: float, G_star: MixingMeasure, r: int = 1) -> float:
    """|lam - lam*| + (lam + lam*) * W_r(G, G*)^r."""
    return abs(lam - lam_star) + (lam + lam_star) * wasserstein_power(G, G_star, r)


def convex_combine(
    G0: MixingMeasure, G: MixingMeasure, alpha: float, merge_tol: float = 0.0
) -> MixingMeasure:
    """(1 - alpha) G0 + alpha G, merging atoms within rho <= merge_tol and
    dropping zero-weight atoms."""
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    _check_pair(G0, G)
    atoms = list(G0.atoms) + list(G.atoms)
    weights = np.concatenate([(1.0 - alpha) * G0.weights, alpha * G.weights])
    merged_atoms: list[Atom] = []
    merged_w: list[float] = []
    for atom, w in zip(atoms, weights):
        if w == 0.0:
            continue
        for idx, rep in enumerate(merged_atoms):
            if rho(atom, rep) <= merge_tol:
                merged_w[idx] += w
                break
        else:
            merged_atoms.append(atom)
            merged_w.append(w)
    if not merged_atoms:
        raise InputError("combination has no mass")
    w = np.asarray(merged_w)
    return MixingMeasure(tuple(merged_atoms), w / w.sum())


def assignment_wasserstein_power(
    G: MixingMeasure, G2: MixingMeasure, r: int, mass_unit: int
) -> float:
    """Brute-force oracle: split both measures into ``mass_unit`` equal-mass
    copies and solve the min-cost assignment (Hungarian).

    Only valid when every weight is an integer multiple of 1/mass_unit.
    """
    from scipy.optimize import linear_sum_assignment

    def expand(measure: MixingMeasure) -> list[int]:
        counts = measure.weights * mass_unit
        rounded = np.rint(counts)
        if np.abs(counts - rounded).max() > 1e-9:
            raise InputError(f"weights are not multiples of 1/{mass_unit}")
        out: list[int] = []
        for idx, c in enumerate(rounded.astype(int)):
            out.extend([idx] * c)
        return out

    left, right = expand(G), expand(G2)
    if len(left) != len(right):
        raise InputError("measures expand to different total mass")
    C = _cost_matrix(G, G2, r)
    big = C[np.ix_(left, right)]
    rows, cols = linear_sum_assignment(big)
    return float(big[rows, cols].sum() / mass_unit)
