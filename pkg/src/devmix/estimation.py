"""EM maximum-likelihood estimation of (lambda, G) with h0 held fixed.

The model is treated as a (K+1)-component mixture whose component 0 is the
frozen density h0 with weight 1 - lambda. Responsibilities are computed in
the log domain; the M-step updates lambda, the mixing weights (with the
floor projection when a floored constraint class is requested), the
component means (clamped to the parameter box) and, for the location-scale
family, the covariances with eigenvalues clamped to the configured band.

Multiple restarts run independently from derived seeds; the best final
log-likelihood wins, ties broken by the lowest restart index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import EvaluationError, InputError
from .gaussians import as_points, clamp_eigenvalues
from .known_density import KnownDensity
from .mixing import Atom, ConstraintClass, MixingMeasure
from .model import DeviatedMixture, FamilyTag, component_log_densities
from .seeding import derive_seed


@dataclass(frozen=True)
class EmConfig:
    constraint: ConstraintClass
    family: FamilyTag
    max_iterations: int = 500
    tolerance: float = 1e-8          # relative log-likelihood change
    restarts: int = 8
    lambda_floor: float = 1e-8
    mean_box: float = 10.0           # means clamped to [-a, a]^d
    eigen_bounds: Tuple[float, float] = (1e-3, 1e3)
    init_strategy: str = "kmeanspp"  # "kmeanspp" | "random" | "provided"
    provided_init: Optional[Tuple[float, MixingMeasure]] = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.restarts < 1:
            raise InputError("max_iterations and restarts must be >= 1")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if not 0 < self.lambda_floor < 0.5:
            raise InputError("lambda_floor must lie in (0, 0.5)")
        if not self.mean_box > 0:
            raise InputError("mean box half-width must be positive")
        lo, hi = self.eigen_bounds
        if not (0 < lo <= hi):
            raise InputError("eigen bounds need 0 < lo <= hi")
        if self.init_strategy not in ("kmeanspp", "random", "provided"):
            raise InputError(f"unknown init strategy {self.init_strategy!r}")
        if self.init_strategy == "provided" and self.provided_init is None:
            raise InputError("provided init strategy needs provided_init")


@dataclass(frozen=True)
class FitResult:
    lambda_hat: float
    G_hat: MixingMeasure
    loglik_trace: Tuple[float, ...]
    converged: bool
    iterations_used: int
    restart_index_of_best: int

    @property
    def final_loglik(self) -> float:
        return self.loglik_trace[-1]


_PILOT_MAX_CENTERS = 1500


def _pilot_density(X: np.ndarray) -> Optional[np.ndarray]:
    """Pilot KDE of the data, trained on a subsample to stay O(n * m)."""
    from scipy.stats import gaussian_kde

    try:
        n = X.shape[0]
        if n > _PILOT_MAX_CENTERS:
            idx = np.random.default_rng(derive_seed("pilot-kde", n)).choice(
                n, _PILOT_MAX_CENTERS, replace=False
            )
            kde = gaussian_kde(X[idx].T)
        else:
            kde = gaussian_kde(X.T)
        out = np.empty(n)
        block = max(1, 4 * 10**6 // max(kde.n, 1))
        for start in range(0, n, block):
            out[start : start + block] = kde(X[start : start + block].T)
        return out
    except Exception:
        return None


def _residual_weights(X: np.ndarray, h0: KnownDensity) -> np.ndarray:
    """Per-point evidence of deviation: max(0, 1 - h0(x)/pilot(x))."""
    pilot = _pilot_density(X)
    if pilot is None:
        return np.zeros(X.shape[0])
    h0_vals = np.exp(h0.logpdf(X))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pilot > 0, h0_vals / pilot, np.inf)
    return np.maximum(0.0, 1.0 - ratio)


def _kmeanspp_centers(X: np.ndarray, K: int, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = w / w.sum()
    centers = [X[rng.choice(X.shape[0], p=probs)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        scores = w * d2
        total = scores.sum()
        probs = scores / total if total > 0 else np.full(X.shape[0], 1.0 / X.shape[0])
        centers.append(X[rng.choice(X.shape[0], p=probs)])
        d2 = np.minimum(d2, np.sum((X - centers[-1]) ** 2, axis=1))
    return np.stack(centers)


def init_kmeanspp(
    data,
    K: int,
    h0: KnownDensity,
    seed: int,
    family: Optional[FamilyTag] = None,
    eigen_bounds: Tuple[float, float] = (1e-3, 1e3),
    residual_weights: Optional[np.ndarray] = None,
) -> Tuple[float, MixingMeasure]:
    """Residual-weighted k-means++ seeding.

    Points are weighted by how poorly h0 alone explains them against a pilot
    KDE of the data; the seeding then favours regions where deviation mass
    lives. Falls back to unweighted seeding (and lambda0 = 0.5) when all
    residual weights vanish. ``residual_weights`` lets callers reuse the
    (data-deterministic) weights across restarts.
    """
    X = as_points(data, h0.dim)
    if np.unique(X, axis=0).shape[0] < K:
        raise InputError("K exceeds the number of distinct data points")
    rng = np.random.default_rng(seed)
    w = residual_weights if residual_weights is not None else _residual_weights(X, h0)
    degenerate = not np.any(w > 0)
    if degenerate:
        w_seed = np.ones(X.shape[0])
        lam0 = 0.5
    else:
        w_seed = w
        lam0 = float(np.clip(w.mean(), 0.1, 0.9))
    centers = _kmeanspp_centers(X, K, w_seed, rng)
    assign = np.argmin(
        np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1
    )
    d = X.shape[1]
    weights = np.empty(K)
    variances = np.empty(K)
    global_var = max(float(X.var(axis=0).mean()), eigen_bounds[0])
    for j in range(K):
        mask = assign == j
        mass = float(w_seed[mask].sum())
        weights[j] = mass
        if mask.sum() > 1 and mass > 0:
            diff2 = np.sum((X[mask] - centers[j]) ** 2, axis=1)
            variances[j] = float(np.average(diff2, weights=w_seed[mask]) / d)
        else:
            variances[j] = global_var
    if weights.sum() <= 0:
        weights = np.full(K, 1.0 / K)
    weights = weights / weights.sum()
    variances = np.clip(variances, eigen_bounds[0], eigen_bounds[1])
    use_scale = family.uses_scale if family is not None else True
    atoms = tuple(
        Atom(centers[j], np.eye(d) * variances[j] if use_scale else None) for j in range(K)
    )
    return lam0, MixingMeasure(atoms, weights)


def _init_random(X, K, family, eigen_bounds, rng) -> Tuple[float, MixingMeasure]:
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] < K:
        raise InputError("K exceeds the number of distinct data points")
    centers = uniq[rng.choice(uniq.shape[0], size=K, replace=False)]
    d = X.shape[1]
    var = np.clip(max(float(X.var(axis=0).mean()), eigen_bounds[0]), *eigen_bounds)
    atoms = tuple(
        Atom(centers[j], np.eye(d) * var if family.uses_scale else None) for j in range(K)
    )
    return 0.5, MixingMeasure(atoms, np.full(K, 1.0 / K))


def _initial_state(X, h0, config: EmConfig, rng_seed: int, residual_w=None):
    K = config.constraint.size
    if config.init_strategy == "provided":
        lam0, G0 = config.provided_init
        return float(lam0), G0
    if config.init_strategy == "random":
        return _init_random(X, K, config.family, config.eigen_bounds, np.random.default_rng(rng_seed))
    return init_kmeanspp(
        X, K, h0, rng_seed, config.family, config.eigen_bounds, residual_weights=residual_w
    )


def _measure_from(locs, covs, weights, family: FamilyTag) -> MixingMeasure:
    atoms = tuple(
        Atom(locs[j], covs[j] if family.uses_scale else None) for j in range(len(weights))
    )
    return MixingMeasure(atoms, weights)


def _single_em(X, h0_logp, h0, config: EmConfig, lam0: float, G0: MixingMeasure):
    n, d = X.shape
    K = G0.k
    family = config.family
    lo_eig, hi_eig = config.eigen_bounds
    a = config.mean_box
    floor = config.lambda_floor

    lam = float(np.clip(lam0, floor, 1.0 - floor))
    weights = np.maximum(G0.weights.copy(), 0.0)
    weights = weights / weights.sum()
    # feasible start: every iterate must satisfy the constraint class for the
    # constrained M-steps to preserve monotonicity
    weights = config.constraint.project_weights(weights)
    locs = np.clip(G0.locations().copy(), -a, a)
    covs = (
        np.stack([clamp_eigenvalues(s, lo_eig, hi_eig) for s in G0.scales()])
        if family.uses_scale
        else None
    )

    trace: List[float] = []
    converged = False
    lam_raw = lam
    clamp_active = False
    for it in range(config.max_iterations):
        G = _measure_from(locs, covs, weights, family)
        with np.errstate(divide="ignore"):
            logw = np.log(np.concatenate([[1.0 - lam], lam * weights]))
        comp = np.concatenate(
            [h0_logp[:, None], component_log_densities(X, G, family)], axis=1
        ) + logw
        per_point = logsumexp(comp, axis=1)
        if not np.all(np.isfinite(per_point)):
            raise EvaluationError("non-finite likelihood encountered")
        ll = float(per_point.sum())
        trace.append(ll)
        if len(trace) > 1:
            prev = trace[-2]
            if abs(ll - prev) <= config.tolerance * max(abs(prev), 1.0):
                converged = True
                break

        resp = np.exp(comp - per_point[:, None])
        r0 = resp[:, 0]
        lam_raw = 1.0 - float(r0.mean())
        clamp_active = not (floor <= lam_raw <= 1.0 - floor)
        lam = float(np.clip(lam_raw, floor, 1.0 - floor))

        R = resp[:, 1:]
        Nj = R.sum(axis=0)
        denom = float(Nj.sum())
        if denom <= 0:
            # every point explained by h0; freeze the deviated block
            continue
        weights = Nj / denom
        if config.constraint.exact:
            weights = np.maximum(weights, 1e-12)
            weights = weights / weights.sum()
        weights = config.constraint.project_weights(weights)
        for j in range(K):
            if Nj[j] <= 1e-12:
                continue  # dead component keeps its parameters
            mu = R[:, j] @ X / Nj[j]
            locs[j] = np.clip(mu, -a, a)
            if family.uses_scale:
                diff = X - locs[j]
                S = (R[:, j][:, None] * diff).T @ diff / Nj[j]
                covs[j] = clamp_eigenvalues(S, lo_eig, hi_eig)

    lam_hat = lam if clamp_active else lam_raw
    lam_hat = min(max(lam_hat, 0.0), 1.0)
    G_hat = _measure_from(locs, covs, weights, family)
    return lam_hat, G_hat, trace, converged, len(trace)


def em_fit(data, h0: KnownDensity, config: EmConfig) -> FitResult:
    """Fit (lambda, G) by EM under the configured constraint class.

    Runs ``config.restarts`` independent initializations (a provided init is
    deterministic, so it runs once) and returns the restart with the highest
    final log-likelihood; ties break toward the lowest restart index.
    Restarts that hit a non-finite likelihood are dropped; em_fit fails only
    if every restart fails.
    """
    X = as_points(data, h0.dim)
    if X.shape[0] == 0:
        raise InputError("data must be nonempty")
    if config.init_strategy != "provided" and config.constraint.size > np.unique(X, axis=0).shape[0]:
        raise InputError("component count exceeds distinct data points")
    h0_logp = h0.logpdf(X)
    residual_w = _residual_weights(X, h0) if config.init_strategy == "kmeanspp" else None

    n_restarts = 1 if config.init_strategy == "provided" else config.restarts
    best = None
    errors: List[str] = []
    for ridx in range(n_restarts):
        try:
            lam0, G0 = _initial_state(
                X, h0, config, derive_seed(config.seed, "restart", ridx), residual_w
            )
            lam_hat, G_hat, trace, converged, iters = _single_em(
                X, h0_logp, h0, config, lam0, G0
            )
        except EvaluationError as exc:
            errors.append(f"restart {ridx}: {exc}")
            continue
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], ridx, lam_hat, G_hat, trace, converged, iters)
    if best is None:
        raise EvaluationError("all EM restarts failed: " + "; ".join(errors))
    _, ridx, lam_hat, G_hat, trace, converged, iters = best
    return FitResult(
        lambda_hat=lam_hat,
        G_hat=G_hat,
        loglik_trace=tuple(trace),
        converged=converged,
        iterations_used=iters,
        restart_index_of_best=ridx,
    )


def loglik_lambda_gradient(model: DeviatedMixture, data) -> float:
    """Analytic d/d(lambda) of the log-likelihood: sum_i (F(x_i, G) - h0(x_i)) / p(x_i)."""
    X = as_points(data, model.dim)
    h0_vals = np.exp(model.h0.logpdf(X))
    comp = component_log_densities(X, model.G, model.family)
    F_vals = np.exp(logsumexp(comp + np.log(model.G.weights), axis=1))
    p_vals = (1.0 - model.lam) * h0_vals + model.lam * F_vals
    return float(np.sum((F_vals - h0_vals) / p_vals))
