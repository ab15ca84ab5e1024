"""Config-driven experiment runner: seeded replications over an n-grid,
error metrics against the true / witness measures, log-log rate regression,
inverse-bound ratio probes, and CSV/SVG outputs.

Determinism contract: identical config and master seed produce identical
tables regardless of parallelism; every per-cell seed derives from
(master_seed, n, replicate). The wallclock_seconds column is measured and
therefore exempt from byte-identity.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EvaluationError, InputError
from .estimation import EmConfig, em_fit
from .gaussians import clamp_eigenvalues
from .known_density import GaussianMixtureH0, KnownDensity
from .mixing import Atom, MixingMeasure, w_bar, wasserstein, wasserstein_power
from .model import DeviatedMixture, FamilyTag, hellinger, sample, total_variation
from .regimes import overline_G_star, tilde_G_star
from .seeding import derive_seed

DEFAULT_EPSILON_LEVELS = tuple(2.0**-i for i in range(9))  # 1, 1/2, ..., 2^-8


@dataclass(frozen=True)
class Metric:
    """Error metric identifier: kind in {abs_lambda, w_gstar, w_gbar,
    w_gtilde, hellinger}, with the Wasserstein order r where applicable."""

    kind: str
    r: Optional[int] = None

    def __post_init__(self):
        if self.kind in ("abs_lambda", "hellinger"):
            if self.r is not None:
                raise InputError(f"metric {self.kind} takes no order")
        elif self.kind in ("w_gstar", "w_gbar", "w_gtilde"):
            if self.r is None or self.r < 1:
                raise InputError(f"metric {self.kind} needs order r >= 1")
        else:
            raise InputError(f"unknown metric kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "abs_lambda":
            return "abs_lambda"
        if self.kind == "hellinger":
            return "hellinger"
        suffix = {"w_gstar": "gstar", "w_gbar": "gbar", "w_gtilde": "gtilde"}[self.kind]
        return f"w{self.r}_{suffix}"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    h0: KnownDensity
    lambda_star: float
    g_star: MixingMeasure
    family: FamilyTag
    fit: EmConfig
    n_grid: Tuple[int, ...]
    replications: int
    metrics: Tuple[Metric, ...]
    master_seed: int

    def __post_init__(self):
        if not 0.0 <= self.lambda_star <= 1.0:
            raise InputError("lambda_star must lie in [0, 1]")
        grid = tuple(int(n) for n in self.n_grid)
        if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InputError("n_grid must be strictly increasing")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if not self.metrics:
            raise InputError("at least one metric is required")
        needs_g0 = any(m.kind in ("w_gbar", "w_gtilde") for m in self.metrics)
        if needs_g0 and not isinstance(self.h0, GaussianMixtureH0):
            raise InputError("Gbar/Gtilde metrics need a Gaussian-mixture h0")
        object.__setattr__(self, "n_grid", grid)

    def true_model(self) -> DeviatedMixture:
        return DeviatedMixture(self.h0, self.lambda_star, self.g_star, self.family)


@dataclass(frozen=True)
class RateRow:
    scenario: str
    n: int
    replicate: int
    metric: str
    value: float
    lambda_hat: float
    wallclock_seconds: float
    failed: bool = False


@dataclass(frozen=True)
class RateTable:
    rows: Tuple[RateRow, ...]

    def filtered(self, metric: str, subset: Optional[str] = None, lambda_star: Optional[float] = None):
        rows = [r for r in self.rows if r.metric == metric and not r.failed]
        if subset is not None:
            if lambda_star is None:
                raise InputError("subset filtering needs lambda_star")
            if subset == "lambda_gt":
                rows = [r for r in rows if r.lambda_hat > lambda_star]
            elif subset == "lambda_le":
                rows = [r for r in rows if r.lambda_hat <= lambda_star]
            else:
                raise InputError(f"unknown subset {subset!r}")
        return rows


@dataclass(frozen=True)
class RateFit:
    metric: str
    slope: float
    intercept: float
    r_squared: float
    theoretical_exponent: float
    tolerance: float
    passed: bool
    n_points: int
    subset: Optional[str] = None


def _metric_value(
    metric: Metric,
    lam_hat: float,
    G_hat: MixingMeasure,
    config: ScenarioConfig,
    true_model: DeviatedMixture,
) -> float:
    if metric.kind == "abs_lambda":
        return abs(lam_hat - config.lambda_star)
    if metric.kind == "w_gstar":
        return wasserstein(G_hat, config.g_star, metric.r)
    if metric.kind == "w_gbar":
        G0 = config.h0.mixing_measure()
        # Gbar(lambda) is defined for lambda >= lambda_star; below that the
        # limiting witness is G_star itself (rows in the lambda_hat <=
        # lambda_star subset are never scored against Gbar downstream)
        lam_eff = max(lam_hat, config.lambda_star)
        ref = overline_G_star(lam_eff, config.lambda_star, G0, config.g_star)
        return wasserstein(G_hat, ref, metric.r)
    if metric.kind == "w_gtilde":
        G0 = config.h0.mixing_measure()
        ref, _ = tilde_G_star(lam_hat, config.lambda_star, G0, config.g_star)
        return wasserstein(G_hat, ref, metric.r)
    if metric.kind == "hellinger":
        fitted = DeviatedMixture(config.h0, lam_hat, G_hat, config.family)
        return hellinger(fitted, true_model, method="quadrature").value
    raise InputError(f"unknown metric kind {metric.kind!r}")


def _run_cell(config: ScenarioConfig, n: int, rep: int) -> List[RateRow]:
    true_model = config.true_model()
    data = sample(true_model, n, derive_seed(config.master_seed, n, rep))
    fit_cfg = replace(config.fit, seed=derive_seed(config.master_seed, n, rep, "fit"))
    start = time.perf_counter()
    try:
        res = em_fit(data, config.h0, fit_cfg)
    except (EvaluationError, InputError):
        wall = time.perf_counter() - start
        return [
            RateRow(config.name, n, rep, m.name, float("nan"), float("nan"), wall, True)
            for m in config.metrics
        ]
    wall = time.perf_counter() - start
    rows = []
    for m in config.metrics:
        value = _metric_value(m, res.lambda_hat, res.G_hat, config, true_model)
        rows.append(RateRow(config.name, n, rep, m.name, value, res.lambda_hat, wall, False))
    return rows


def _run_cell_star(args) -> List[RateRow]:
    return _run_cell(*args)


def run_scenario(config: ScenarioConfig, jobs: int = 1) -> RateTable:
    """Run every (n, replicate) cell of the scenario.

    Output is independent of ``jobs``: cells are seeded from
    (master_seed, n, replicate) and rows are sorted before return.
    """
    cells = [(config, n, rep) for n in config.n_grid for rep in range(config.replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_cell = list(pool.map(_run_cell_star, cells))
    else:
        per_cell = [_run_cell(*cell) for cell in cells]
    rows = [row for cell_rows in per_cell for row in cell_rows]
    rows.sort(key=lambda r: (r.scenario, r.n, r.replicate, r.metric))
    return RateTable(tuple(rows))


def default_slope_tolerance(theoretical_exponent: float) -> float:
    # 0.2 for the 1/2 and 1/4 targets, 0.08 for the shallow 1/8 and 1/12 ones
    return 0.2 if theoretical_exponent >= 0.2 else 0.08


def fit_rate(
    table: RateTable,
    metric: str,
    theoretical_exponent: float,
    tolerance: Optional[float] = None,
    subset: Optional[str] = None,
    lambda_star: Optional[float] = None,
) -> RateFit:
    """OLS of log(mean-over-replicates error) against log(log(n)/n).

    ``subset`` optionally restricts to replicates with lambda_hat above
    (``"lambda_gt"``) or at most (``"lambda_le"``) lambda_star before
    averaging, which is how the partially distinguishable scenario is scored.
    """
    rows = table.filtered(metric, subset, lambda_star)
    by_n: dict[int, List[float]] = {}
    for r in rows:
        by_n.setdefault(r.n, []).append(r.value)
    xs, ys = [], []
    for n in sorted(by_n):
        mean = float(np.mean(by_n[n]))
        if mean > 0 and n > 1:
            xs.append(math.log(math.log(n) / n))
            ys.append(math.log(mean))
    if len(xs) < 3:
        raise InputError(f"need >= 3 usable n values for metric {metric!r}, got {len(xs)}")
    x = np.asarray(xs)
    y = np.asarray(ys)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 and ss_res == 0 else max(0.0, 1.0 - ss_res / ss_tot) if ss_tot > 0 else 0.0
    tol = default_slope_tolerance(theoretical_exponent) if tolerance is None else tolerance
    return RateFit(
        metric=metric,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        theoretical_exponent=theoretical_exponent,
        tolerance=tol,
        passed=abs(slope - theoretical_exponent) <= tol,
        n_points=len(xs),
        subset=subset,
    )


# ---------------------------------------------------------------------------
# inverse-bound ratio probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioLevel:
    epsilon: float
    tv: float
    divergence: float
    ratio: float


@dataclass(frozen=True)
class DirectionResult:
    index: int
    levels: Tuple[RatioLevel, ...]
    min_ratio: float
    nonvanishing: bool


@dataclass(frozen=True)
class InverseBoundReport:
    scenario: str
    r: int
    directions: Tuple[DirectionResult, ...]
    all_nonvanishing: bool
    global_min_ratio: float


def _perturbed_pair(config: ScenarioConfig, rng: np.random.Generator, split: bool):
    """A random perturbation direction of (lambda, G) around the truth.

    Returns a callable eps -> (lam_eps, G_eps). With ``split`` the heaviest
    atom is split into a balanced pair eps apart (over-fitted directions).
    """
    G = config.g_star
    k, d = G.k, G.dim
    dlam = float(rng.standard_normal())
    dlocs = rng.standard_normal((k, d))
    dw = rng.standard_normal(k)
    dw -= dw.mean()
    if config.family.uses_scale:
        raw = rng.standard_normal((k, d, d))
        dscales = 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
    else:
        dscales = None
    norm = math.sqrt(
        dlam**2
        + float(np.sum(dlocs**2))
        + float(np.sum(dw**2))
        + (float(np.sum(dscales**2)) if dscales is not None else 0.0)
    )
    dlam, dlocs, dw = dlam / norm, dlocs / norm, dw / norm
    if dscales is not None:
        dscales = dscales / norm
    w_min = float(G.weights.min())
    w_scale = 0.4 * w_min
    lam_scale = 0.3 * min(config.lambda_star, 1.0 - config.lambda_star) if 0 < config.lambda_star < 1 else 0.3
    split_u = rng.standard_normal(d)
    split_u /= np.linalg.norm(split_u)
    split_j = int(np.argmax(G.weights))

    def at(eps: float):
        lam_eps = float(np.clip(config.lambda_star + eps * lam_scale * dlam, 0.0, 1.0))
        weights = G.weights + eps * w_scale * dw
        weights = np.maximum(weights, 0.0)
        weights = weights / weights.sum()
        atoms = []
        for j in range(k):
            loc = G.atoms[j].location + eps * 0.5 * dlocs[j]
            if dscales is not None:
                scale = clamp_eigenvalues(G.atoms[j].scale + eps * 0.3 * dscales[j], 1e-6, np.inf)
                atoms.append(Atom(loc, scale))
            else:
                atoms.append(Atom(loc))
        if split:
            base = atoms[split_j]
            offset = eps * 0.4 * split_u
            half = weights[split_j] / 2.0
            atoms_out = [a for j, a in enumerate(atoms) if j != split_j]
            weights_out = [w for j, w in enumerate(weights) if j != split_j]
            atoms_out += [Atom(base.location + offset, base.scale), Atom(base.location - offset, base.scale)]
            weights_out += [half, half]
            return lam_eps, MixingMeasure(tuple(atoms_out), np.asarray(weights_out))
        return lam_eps, MixingMeasure(tuple(atoms), weights)

    return at


def verify_inverse_bound(
    config: ScenarioConfig,
    r: int,
    direction_count: int = 8,
    epsilon_levels: Sequence[float] = DEFAULT_EPSILON_LEVELS,
    seed: int = 0,
    split_directions: bool = False,
    nodes: Optional[int] = None,
) -> InverseBoundReport:
    """Ratio check V(p_eps, p*) / Wbar_r(lam_eps G_eps, lam* G*) over random
    perturbation directions and shrinking eps.

    Pass criterion per direction (non-vanishing): the ratio at the smallest
    eps is at least one fifth of the ratio at the largest eps. Degenerate
    levels with a vanishing denominator are skipped by contract.
    """
    eps_levels = sorted(set(float(e) for e in epsilon_levels), reverse=True)
    if len(eps_levels) < 2:
        raise InputError("need at least two epsilon levels")
    if config.g_star.dim > 2:
        raise InputError("quadrature TV limits the probe to d <= 2")
    p_true = config.true_model()
    directions = []
    for di in range(direction_count):
        rng = np.random.default_rng(derive_seed(seed, "direction", di))
        path = _perturbed_pair(config, rng, split_directions)
        levels = []
        for eps in eps_levels:
            lam_eps, G_eps = path(eps)
            denom = w_bar(lam_eps, G_eps, config.lambda_star, config.g_star, r)
            if denom < 1e-15:
                continue
            p_eps = DeviatedMixture(config.h0, lam_eps, G_eps, config.family)
            tv = total_variation(p_eps, p_true, method="quadrature", nodes=nodes).value
            levels.append(RatioLevel(eps, tv, denom, tv / denom))
        if len(levels) < 2:
            raise InputError(f"direction {di} degenerate at every level")
        nonvan = levels[-1].ratio >= levels[0].ratio / 5.0
        directions.append(
            DirectionResult(
                index=di,
                levels=tuple(levels),
                min_ratio=min(l.ratio for l in levels),
                nonvanishing=nonvan,
            )
        )
    return InverseBoundReport(
        scenario=config.name,
        r=r,
        directions=tuple(directions),
        all_nonvanishing=all(d.nonvanishing for d in directions),
        global_min_ratio=min(d.min_ratio for d in directions),
    )


@dataclass(frozen=True)
class PathologicalReport:
    """Regime-B over-fitted path along the non-identifiability curve:
    lam_eps = lam* + step*eps, G_eps = Gbar(lam_eps) with a balanced atom
    split of size O(eps). The V/Wbar_r ratio against (lam*, G*) collapses
    while the V/W_2^2(G, Gbar(lam)) ratio stays bounded."""

    scenario: str
    levels_wbar: Tuple[RatioLevel, ...]
    levels_gbar: Tuple[RatioLevel, ...]
    wbar_collapse_factor: float
    wbar_nonvanishing: bool
    gbar_nonvanishing: bool


def verify_pathological_regime_b(
    config: ScenarioConfig,
    r: int = 2,
    epsilon_levels: Sequence[float] = DEFAULT_EPSILON_LEVELS,
    seed: int = 0,
    lam_step: float = 0.25,
    split_size: float = 0.4,
    nodes: Optional[int] = None,
) -> PathologicalReport:
    if not isinstance(config.h0, GaussianMixtureH0):
        raise InputError("the pathological path needs a Gaussian-mixture h0")
    eps_levels = sorted(set(float(e) for e in epsilon_levels), reverse=True)
    G0 = config.h0.mixing_measure()
    p_true = config.true_model()
    rng = np.random.default_rng(derive_seed(seed, "pathological"))
    u = rng.standard_normal(config.g_star.dim)
    u /= np.linalg.norm(u)
    lam_star = config.lambda_star
    levels_wbar, levels_gbar = [], []
    for eps in eps_levels:
        lam_eps = lam_star + lam_step * eps
        if lam_eps > 1.0:
            continue
        gbar = overline_G_star(lam_eps, lam_star, G0, config.g_star)
        j = int(np.argmax(gbar.weights))
        offset = eps * split_size * u
        atoms = [a for i, a in enumerate(gbar.atoms) if i != j]
        weights = [w for i, w in enumerate(gbar.weights) if i != j]
        half = gbar.weights[j] / 2.0
        atoms += [
            Atom(gbar.atoms[j].location + offset, gbar.atoms[j].scale),
            Atom(gbar.atoms[j].location - offset, gbar.atoms[j].scale),
        ]
        weights += [half, half]
        G_eps = MixingMeasure(tuple(atoms), np.asarray(weights))
        p_eps = DeviatedMixture(config.h0, lam_eps, G_eps, config.family)
        tv = total_variation(p_eps, p_true, method="quadrature", nodes=nodes).value
        denom_wbar = w_bar(lam_eps, G_eps, lam_star, config.g_star, r)
        denom_gbar = wasserstein_power(G_eps, gbar, 2)  # W_2^2(G, Gbar(lam))
        levels_wbar.append(RatioLevel(eps, tv, denom_wbar, tv / denom_wbar))
        levels_gbar.append(RatioLevel(eps, tv, denom_gbar, tv / denom_gbar))
    if len(levels_wbar) < 2:
        raise InputError("epsilon grid left fewer than two usable levels")
    first, last = levels_wbar[0].ratio, levels_wbar[-1].ratio
    collapse = first / last if last > 0 else math.inf
    return PathologicalReport(
        scenario=config.name,
        levels_wbar=tuple(levels_wbar),
        levels_gbar=tuple(levels_gbar),
        wbar_collapse_factor=float(collapse),
        wbar_nonvanishing=levels_wbar[-1].ratio >= levels_wbar[0].ratio / 5.0,
        gbar_nonvanishing=levels_gbar[-1].ratio >= levels_gbar[0].ratio / 5.0,
    )


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

RATES_HEADER = "scenario,n,replicate,metric,value,lambda_hat,wallclock_seconds,failed"
RATEFITS_HEADER = (
    "scenario,metric,subset,slope,intercept,r_squared,theoretical_exponent,tolerance,passed,n_points"
)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def emit_outputs(table: RateTable, fits: Sequence[RateFit], out_dir) -> List[Path]:
    """Write rates.csv, ratefits.csv and one SVG per metric with data.

    Returns the list of written paths. An empty table produces headers-only
    CSVs and no SVGs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    rates = out / "rates.csv"
    with rates.open("w") as fh:
        fh.write(RATES_HEADER + "\n")
        for r in table.rows:
            fh.write(
                f"{r.scenario},{r.n},{r.replicate},{r.metric},{_fmt(r.value)},"
                f"{_fmt(r.lambda_hat)},{_fmt(r.wallclock_seconds)},{int(r.failed)}\n"
            )
    paths.append(rates)

    ratefits = out / "ratefits.csv"
    scen = table.rows[0].scenario if table.rows else ""
    with ratefits.open("w") as fh:
        fh.write(RATEFITS_HEADER + "\n")
        for f in fits:
            fh.write(
                f"{scen},{f.metric},{f.subset or ''},{_fmt(f.slope)},{_fmt(f.intercept)},"
                f"{_fmt(f.r_squared)},{_fmt(f.theoretical_exponent)},{_fmt(f.tolerance)},"
                f"{int(f.passed)},{f.n_points}\n"
            )
    paths.append(ratefits)

    metrics = sorted({r.metric for r in table.rows if not r.failed})
    fit_by_metric = {f.metric: f for f in fits if f.subset is None}
    for metric in metrics:
        path = _plot_metric(table, metric, fit_by_metric.get(metric), out)
        if path is not None:
            paths.append(path)
    return paths


def _plot_metric(table: RateTable, metric: str, fit: Optional[RateFit], out: Path) -> Optional[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in table.rows if r.metric == metric and not r.failed and r.value > 0]
    if not rows:
        return None
    by_n: dict[int, List[float]] = {}
    for r in rows:
        by_n.setdefault(r.n, []).append(r.value)
    ns = sorted(by_n)
    x = np.array([math.log(n) / n for n in ns])
    means = np.array([np.mean(by_n[n]) for n in ns])
    q_lo = np.array([np.quantile(by_n[n], 0.125) for n in ns])
    q_hi = np.array([np.quantile(by_n[n], 0.875) for n in ns])

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.fill_between(x, q_lo, q_hi, alpha=0.25, label="12.5%-87.5% band")
    ax.plot(x, means, "o-", label="mean error")
    if fit is not None:
        ax.plot(
            x,
            np.exp(fit.intercept) * x**fit.slope,
            "--",
            label=f"fit slope {fit.slope:.3f}",
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("log(n)/n")
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    ax.set_title(metric)
    fig.tight_layout()
    path = out / f"rate_{metric}.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
