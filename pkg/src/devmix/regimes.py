"""Partially-distinguishable machinery: overlap detection between the
deviated atoms and a mixture-type h0, the weight-deficit sets B and I(lambda),
ratio-independence, the non-identifiability witnesses Gbar(lambda) and
Gtilde(lambda), the minimal-order table r_bar(k) with its defining polynomial
system, and a numerical distinguishability probe.

Index sets returned by these operations are 0-based positions into the atom
order of the relevant measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from .errors import InputError
from .known_density import GaussianMixtureH0, KnownDensity
from .mixing import Atom, MixingMeasure, convex_combine, rho
from .model import FamilyTag

DEFAULT_ATOM_MATCH_TOL = 1e-6


@dataclass(frozen=True)
class RegimeReport:
    a_bar: Tuple[int, ...]          # overlapping deviated-atom indices (0-based)
    k_bar: int
    regime: str                     # "a_lambda_zero" | "b_partial_overlap" | "c_full_overlap" | "distinguishable"
    atom_match_tol: float

    def __post_init__(self):
        if self.k_bar != len(self.a_bar):
            raise InputError("k_bar must equal |A_bar|")


def _lift_atoms(G: MixingMeasure, family: Optional[FamilyTag]) -> List[Atom]:
    """Atoms of G as (location, scale) pairs, using the family's shared
    covariance for location-only measures."""
    if G.has_scale:
        return list(G.atoms)
    if family is None or family.uses_scale:
        raise InputError(
            "location-only atoms need the location family (shared covariance) to "
            "compare against mixture components"
        )
    return [Atom(a.location, family.shared_cov) for a in G.atoms]


def _match_overlaps(
    h0: GaussianMixtureH0, G_star: MixingMeasure, tol: float, family: Optional[FamilyTag]
) -> Tuple[Tuple[int, ...], dict]:
    h0_atoms = [Atom(h0.means[j], h0.covariances[j]) for j in range(len(h0.weights))]
    star_atoms = _lift_atoms(G_star, family)
    matches = {}
    for i, atom in enumerate(star_atoms):
        close = [j for j, ha in enumerate(h0_atoms) if rho(atom, ha) <= tol]
        if len(close) > 1:
            raise InputError(
                f"deviated atom {i} matches {len(close)} h0 atoms within tol={tol}; "
                "use a smaller atom_match_tol"
            )
        if close:
            matches[i] = close[0]
    return tuple(sorted(matches)), matches


def classify_regime(
    h0: KnownDensity,
    lambda_star: float,
    G_star: MixingMeasure,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> RegimeReport:
    """Classify the scenario into the overlap trichotomy.

    Only a Gaussian-mixture h0 over the same kernel family can fail
    distinguishability; KDE and pushforward variants return
    ``distinguishable`` outright.
    """
    if not isinstance(h0, GaussianMixtureH0):
        return RegimeReport((), 0, "distinguishable", atom_match_tol)
    a_bar, matches = _match_overlaps(h0, G_star, atom_match_tol, family)
    if lambda_star == 0.0:
        return RegimeReport(a_bar, len(a_bar), "a_lambda_zero", atom_match_tol)
    k0 = len(h0.weights)
    matched_h0 = {matches[i] for i in a_bar}
    regime = "c_full_overlap" if len(matched_h0) == k0 else "b_partial_overlap"
    return RegimeReport(a_bar, len(a_bar), regime, atom_match_tol)


def overline_G_star(
    lam: float,
    lambda_star: float,
    G0: MixingMeasure,
    G_star: MixingMeasure,
    merge_tol: float = 1e-9,
) -> MixingMeasure:
    """The non-identifiability witness (1 - lam*/lam) G0 + (lam*/lam) G*,
    defined for lam >= lam* > 0 (lam = lam* returns G*)."""
    if lambda_star <= 0:
        raise InputError("Gbar(lambda) needs lambda_star > 0")
    if lam < lambda_star:
        raise InputError("Gbar(lambda) needs lambda >= lambda_star")
    alpha = lambda_star / lam
    return convex_combine(G0, G_star, alpha, merge_tol)


@dataclass(frozen=True)
class AlignedOverlap:
    """G* rewritten against the atom order of G0 in the full-overlap regime:
    p0[i] pairs with p_star_matched[i] at the shared atom theta_i^0; the
    remaining (non-overlapped) atoms of G* come with their own weights."""

    p0: np.ndarray
    p_star_matched: np.ndarray
    g0_atoms: Tuple[Atom, ...]
    extra_atoms: Tuple[Atom, ...]
    extra_weights: np.ndarray


def align_full_overlap(
    G0: MixingMeasure,
    G_star: MixingMeasure,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> AlignedOverlap:
    k0 = G0.k
    star_atoms = _lift_atoms(G_star, family) if not G_star.has_scale else list(G_star.atoms)
    g0_atoms = _lift_atoms(G0, family) if not G0.has_scale else list(G0.atoms)
    p_star = np.zeros(k0)
    extra_atoms: List[Atom] = []
    extra_w: List[float] = []
    seen = set()
    for i, atom in enumerate(star_atoms):
        close = [j for j in range(k0) if rho(atom, g0_atoms[j]) <= atom_match_tol]
        if len(close) > 1:
            raise InputError("ambiguous atom match; use a smaller tolerance")
        if close:
            j = close[0]
            if j in seen:
                raise InputError("two deviated atoms match the same h0 atom")
            seen.add(j)
            p_star[j] = G_star.weights[i]
        else:
            extra_atoms.append(G_star.atoms[i])
            extra_w.append(float(G_star.weights[i]))
    if len(seen) != k0:
        raise InputError("not in the full-overlap regime: some h0 atom is unmatched")
    return AlignedOverlap(
        p0=np.array(G0.weights),
        p_star_matched=p_star,
        g0_atoms=tuple(G0.atoms),
        extra_atoms=tuple(extra_atoms),
        extra_weights=np.asarray(extra_w, dtype=float),
    )


def set_B_contains(
    lam: float,
    lambda_star: float,
    G0: MixingMeasure,
    G_star: MixingMeasure,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> bool:
    """True iff (lam* - lam) p_i^0 <= lam* p_i^* for every matched index,
    evaluated exactly (boundary included)."""
    al = align_full_overlap(G0, G_star, atom_match_tol, family)
    return bool(np.all((lambda_star - lam) * al.p0 <= lambda_star * al.p_star_matched))


def I_lambda(
    lam: float,
    lambda_star: float,
    G0: MixingMeasure,
    G_star: MixingMeasure,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> Tuple[int, ...]:
    """Indices (0-based, into G0's atoms) with a strict weight deficit
    (lam* - lam) p_i^0 > lam* p_i^*."""
    al = align_full_overlap(G0, G_star, atom_match_tol, family)
    mask = (lambda_star - lam) * al.p0 > lambda_star * al.p_star_matched
    return tuple(int(i) for i in np.nonzero(mask)[0])


def ratio_independent(
    I: Sequence[int],
    G0: MixingMeasure,
    G_star: MixingMeasure,
    tol: float = 1e-9,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> bool:
    """True iff |I| = 1 or the ratios p_i^0 / p_i^* agree across I within
    relative tolerance ``tol``."""
    idx = sorted(set(int(i) for i in I))
    if not idx:
        raise InputError("I must be nonempty")
    if len(idx) == 1:
        return True
    al = align_full_overlap(G0, G_star, atom_match_tol, family)
    p0 = al.p0[idx]
    ps = al.p_star_matched[idx]
    if np.any(ps == 0):
        return bool(np.all(ps == 0))
    ratios = p0 / ps
    spread = (ratios.max() - ratios.min()) / max(abs(ratios.min()), np.finfo(float).tiny)
    return bool(spread <= tol)


def tilde_G_star(
    lam: float,
    lambda_star: float,
    G0: MixingMeasure,
    G_star: MixingMeasure,
    atom_match_tol: float = DEFAULT_ATOM_MATCH_TOL,
    family: Optional[FamilyTag] = None,
) -> Tuple[MixingMeasure, float]:
    """The normalized measure Gtilde(lambda) over the no-deficit overlapped
    atoms and the non-overlapped deviated atoms, plus its normalizer S."""
    al = align_full_overlap(G0, G_star, atom_match_tol, family)
    k0 = len(al.p0)
    deficit = (lambda_star - lam) * al.p0 > lambda_star * al.p_star_matched
    v = al.p_star_matched * lambda_star + (lam - lambda_star) * al.p0
    v = np.where(deficit, 0.0, v)
    extras = lambda_star * al.extra_weights
    S = float(v.sum() + extras.sum())
    if S <= 0:
        raise InputError("degenerate Gtilde: normalizer S <= 0")
    atoms: List[Atom] = []
    weights: List[float] = []
    for j in range(k0):
        if not deficit[j] and v[j] > 0:
            atoms.append(al.g0_atoms[j])
            weights.append(float(v[j]))
    for atom, w in zip(al.extra_atoms, extras):
        if w > 0:
            atoms.append(atom)
            weights.append(float(w))
    weights = np.asarray(weights) / S
    return MixingMeasure(tuple(atoms), weights), S


@dataclass(frozen=True)
class RBar:
    """Minimal Taylor order at which the polynomial system admits only
    trivial solutions; exact for k in {1, 2}, a lower bound for k >= 3."""

    value: int
    exact: bool


def r_bar(k: int) -> RBar:
    if k < 1:
        raise InputError("r_bar is defined for k >= 1")
    if k == 1:
        return RBar(4, True)
    if k == 2:
        return RBar(6, True)
    return RBar(7, False)


def polynomial_system_residual(k: int, r: int, candidate) -> float:
    """Sum of squared equation values of the order-r polynomial system at
    ``candidate`` = (a, b, c), each of length k+1. Zero iff the candidate
    solves the system."""
    a, b, c = (np.asarray(v, dtype=float).reshape(-1) for v in candidate)
    if not (len(a) == len(b) == len(c) == k + 1):
        raise InputError(f"candidate must have k+1 = {k + 1} triples")
    if r < 1:
        raise InputError("order r must be >= 1")
    return float(np.sum(np.square(_system_equations(r, a, b, c))))


def _system_equations(r: int, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    c2 = c * c
    eqs = np.empty(r)
    for alpha in range(1, r + 1):
        s = 0.0
        for n2 in range(alpha // 2 + 1):
            n1 = alpha - 2 * n2
            s += np.sum(c2 * a**n1 * b**n2) / (math.factorial(n1) * math.factorial(n2))
        eqs[alpha - 1] = s
    return eqs


def _system_jacobian(r: int, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """d(eq_alpha)/d(a_j), d(b_j), d(c_j) for the order-r system."""
    m = len(a)
    c2 = c * c
    da = np.zeros((r, m))
    db = np.zeros((r, m))
    dc = np.zeros((r, m))
    for alpha in range(1, r + 1):
        for n2 in range(alpha // 2 + 1):
            n1 = alpha - 2 * n2
            denom = math.factorial(n1) * math.factorial(n2)
            term = a**n1 * b**n2 / denom
            dc[alpha - 1] += 2.0 * c * term
            if n1 >= 1:
                da[alpha - 1] += c2 * n1 * a ** (n1 - 1) * b**n2 / denom
            if n2 >= 1:
                db[alpha - 1] += c2 * a**n1 * n2 * b ** (n2 - 1) / denom
    return da, db, dc


def minimize_polynomial_residual(
    k: int,
    r: int,
    restarts: int = 200,
    seed: int = 0,
    b_range: float = 3.0,
    c_range: Tuple[float, float] = (0.1, 3.0),
) -> Tuple[float, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Multistart local minimization of the system residual over nontrivial
    candidates: all c_j in [c_min, c_max], max |a_j| = 1 imposed by pinning
    one randomly chosen a_j to 1 per restart (valid up to the system's
    (a, b) -> (t a, t^2 b) scale invariance).

    Returns the best residual found and the corresponding candidate. A best
    residual at numerical zero exhibits a nontrivial solution; a floor
    bounded away from zero across many restarts is evidence of none.
    """
    rng = np.random.default_rng(seed)
    m = k + 1
    best_res = np.inf
    best_candidate = None
    for _ in range(restarts):
        pin = int(rng.integers(m))
        free_idx = [j for j in range(m) if j != pin]

        def unpack(x):
            a = np.empty(m)
            a[pin] = 1.0
            a[free_idx] = x[: m - 1]
            b = x[m - 1 : 2 * m - 1]
            c = x[2 * m - 1 :]
            return a, b, c

        def equations(x):
            return _system_equations(r, *unpack(x))

        def jacobian(x):
            da, db, dc = _system_jacobian(r, *unpack(x))
            return np.concatenate([da[:, free_idx], db, dc], axis=1)

        x0 = np.concatenate(
            [
                rng.uniform(-1, 1, m - 1),
                rng.uniform(-b_range, b_range, m),
                rng.uniform(c_range[0], c_range[1], m),
            ]
        )
        lower = np.concatenate([-np.ones(m - 1), -b_range * np.ones(m), np.full(m, c_range[0])])
        upper = np.concatenate([np.ones(m - 1), b_range * np.ones(m), np.full(m, c_range[1])])
        sol = least_squares(
            equations,
            x0,
            jac=jacobian,
            bounds=(lower, upper),
            method="trf",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        res = float(np.sum(sol.fun**2))
        if res < best_res:
            best_res = res
            best_candidate = unpack(sol.x)
    return best_res, best_candidate


def _hermite(m: int, t: np.ndarray) -> np.ndarray:
    """Probabilists' Hermite polynomial He_m evaluated elementwise."""
    if m == 0:
        return np.ones_like(t)
    prev, cur = np.ones_like(t), t.copy()
    for j in range(1, m):
        prev, cur = cur, t * cur - j * prev
    return cur


def _directions(dim: int, order: int) -> np.ndarray:
    """Generic directions whose order-m pure directional derivatives span all
    order-m partials (polarization); m+1 suffice in d = 2, one in d = 1."""
    if dim == 1:
        return np.ones((1, 1))
    angles = np.pi * (np.arange(order + 1) + 0.37) / (order + 1)
    return np.column_stack([np.cos(angles), np.sin(angles)])


@dataclass(frozen=True)
class ProbeResult:
    residual: float
    degenerate: bool
    rank: int
    columns: int


def distinguishability_probe(
    h0: KnownDensity,
    thetas: Sequence[Atom],
    order: int,
    grid_points: np.ndarray,
    grid_weights: np.ndarray,
    family: Optional[FamilyTag] = None,
) -> ProbeResult:
    """Least-squares projection of h0 onto the span of the Gaussian kernels at
    ``thetas`` and their parameter derivatives up to ``order``.

    For location-scale atoms the heat equation reduces every parameter
    derivative up to order r to location derivatives up to order 2r, which
    are generated as directional Hermite columns. Returns the relative
    residual ||h0 - proj h0|| / ||h0|| under the quadrature weights; a value
    near 0 signals failure of distinguishability on the tested window. The
    probe is evidence on a finite window, not a proof.
    """
    if order not in (0, 1, 2):
        raise InputError("probe order must be 0, 1 or 2")
    atoms = list(thetas)
    if not atoms:
        raise InputError("need at least one probe atom")
    for i in range(len(atoms)):
        for j in range(i + 1, len(atoms)):
            if rho(atoms[i], atoms[j]) == 0.0:
                raise InputError("probe atoms must be distinct")
    X = np.asarray(grid_points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    w = np.asarray(grid_weights, dtype=float)
    dim = X.shape[1]
    if dim != h0.dim:
        raise InputError("grid dimension does not match h0")

    use_scale = atoms[0].has_scale
    max_order = 2 * order if use_scale else order
    columns = []
    for atom in atoms:
        cov = atom.scale if use_scale else (
            family.shared_cov if family is not None else np.eye(dim)
        )
        cov_inv = np.linalg.inv(cov)
        diff = X - atom.location
        quad = np.einsum("ni,ij,nj->n", diff, cov_inv, diff)
        norm = (2 * np.pi) ** (-dim / 2) * np.linalg.det(cov) ** -0.5
        f = norm * np.exp(-0.5 * quad)
        columns.append(f)
        for m in range(1, max_order + 1):
            for v in _directions(dim, m):
                s = diff @ (cov_inv @ v)
                q = float(v @ cov_inv @ v)
                columns.append(f * _hermite(m, s / np.sqrt(q)) * q ** (m / 2.0))
    A = np.column_stack(columns)
    sw = np.sqrt(w)
    B = A * sw[:, None]
    y = np.exp(h0.logpdf(X)) * sw
    coef, _, rank, _ = np.linalg.lstsq(B, y, rcond=None)
    resid = y - B @ coef
    y_norm = float(np.linalg.norm(y))
    rel = float(np.linalg.norm(resid)) / y_norm if y_norm > 0 else 0.0
    return ProbeResult(
        residual=min(max(rel, 0.0), 1.0),
        degenerate=rank < A.shape[1],
        rank=int(rank),
        columns=int(A.shape[1]),
    )
