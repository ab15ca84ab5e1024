"""Command-line interface.

Subcommands: simulate | fit | rates | verify-inverse-bound | regimes |
density | model. Configs are YAML (JSON also parses); built-in scenarios can
be selected by name with --scenario. Exit codes: 0 success, 1 input error,
2 numerical failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import configio
from .errors import EvaluationError, InputError
from .estimation import em_fit
from .harness import emit_outputs, fit_rate, run_scenario, verify_inverse_bound, verify_pathological_regime_b
from .known_density import eval_h0, sample_h0
from .mixing import ConstraintClass
from .model import pdf as model_pdf
from .model import sample as model_sample
from .model import total_variation
from .quadrature import trapezoid_grid_1d, trapezoid_grid_2d
from .regimes import classify_regime, distinguishability_probe
from .scenarios import builtin_scenario, scenario_names

# bad command-line usage is an input error per the interface contract
click.exceptions.UsageError.exit_code = 1


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputError as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(1)
        except (EvaluationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _load_dict(config_path):
    if config_path is None:
        raise InputError("this command needs --config or --scenario")
    return configio.load_config(config_path)


def _load_scenario(config_path, scenario_name, master_seed=None):
    if scenario_name:
        return builtin_scenario(scenario_name, master_seed=master_seed)
    cfg = configio.scenario_from_dict(_load_dict(config_path))
    if master_seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, master_seed=master_seed)
    return cfg


def _load_h0(config_path, scenario_name):
    if scenario_name:
        return builtin_scenario(scenario_name).h0
    data = _load_dict(config_path)
    if "scenario" in data:
        return configio.scenario_from_dict(data).h0
    if "h0" in data and "lambda" not in data:
        return configio.h0_from_dict(data["h0"])
    if "type" in data:
        return configio.h0_from_dict(data)
    raise InputError("config does not contain an h0 spec")


def _load_model(config_path, scenario_name):
    if scenario_name:
        return builtin_scenario(scenario_name).true_model()
    data = _load_dict(config_path)
    if "scenario" in data:
        return configio.scenario_from_dict(data).true_model()
    if "model" in data:
        return configio.model_from_dict(data["model"])
    return configio.model_from_dict(data)


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise InputError(f"cannot parse point {text!r}") from exc


def _write_points(points: np.ndarray, out):
    lines = "\n".join(",".join(f"{v:.12g}" for v in row) for row in points)
    if out is None or out == "-":
        click.echo(lines)
    else:
        Path(out).write_text(lines + "\n")
        click.echo(f"wrote {points.shape[0]} points to {out}")


_scenario_opt = click.option(
    "--scenario",
    "scenario_name",
    type=click.Choice(scenario_names()),
    default=None,
    help="Use a built-in scenario instead of --config.",
)


@click.group()
def main():
    """Deviated mixture models: density tools, EM fitting, rate experiments."""


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--n", type=int, required=True, help="Number of points to draw.")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="-", help="Output CSV ('-' for stdout).")
@_guard
def simulate(config, scenario_name, n, seed, out):
    """Sample n points from the configured true model as CSV rows."""
    model = _load_model(config, scenario_name)
    _write_points(model_sample(model, n, seed), out)


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True, help="CSV of sample points.")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--K", "k", type=int, default=None, help="Number of deviated components.")
@click.option("--exact", is_flag=True, help="Exact-fitted class E_k instead of O_K.")
@click.option("--c0", type=float, default=None, help="Weight floor (floored classes).")
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--out", type=click.Path(), default=None, help="Write the fit result as JSON.")
@_guard
def fit(data, config, scenario_name, k, exact, c0, restarts, seed, max_iter, tol, out):
    """Fit (lambda, G) to a CSV of samples by EM."""
    from dataclasses import replace

    scenario = _load_scenario(config, scenario_name)
    cfg = scenario.fit
    if k is not None or exact or c0 is not None:
        size = k if k is not None else cfg.constraint.size
        kind = "exact" if exact else "over"
        if c0 is not None:
            kind += "_floor"
        cfg = replace(cfg, constraint=ConstraintClass(kind, size, c0))
    for name, value in (
        ("restarts", restarts),
        ("seed", seed),
        ("max_iterations", max_iter),
        ("tolerance", tol),
    ):
        if value is not None:
            cfg = replace(cfg, **{name: value})
    X = np.loadtxt(data, delimiter=",", ndmin=2)
    result = em_fit(X, scenario.h0, cfg)
    click.echo(f"lambda_hat: {result.lambda_hat:.6g}")
    click.echo(f"converged: {result.converged}")
    click.echo(f"iterations_used: {result.iterations_used}")
    click.echo(f"restart_index_of_best: {result.restart_index_of_best}")
    click.echo(f"final_loglik: {result.final_loglik:.10g}")
    click.echo(f"weights: {np.array2string(result.G_hat.weights, precision=6)}")
    for i, atom in enumerate(result.G_hat.atoms):
        line = f"atom {i}: location {np.array2string(atom.location, precision=6)}"
        if atom.has_scale:
            line += f" scale {np.array2string(atom.scale, precision=6)}"
        click.echo(line)
    if out:
        payload = {
            "lambda_hat": result.lambda_hat,
            "g_hat": configio.measure_to_dict(result.G_hat),
            "loglik_trace": list(result.loglik_trace),
            "converged": result.converged,
            "iterations_used": result.iterations_used,
            "restart_index_of_best": result.restart_index_of_best,
        }
        Path(out).write_text(json.dumps(payload, indent=2))
        click.echo(f"wrote result to {out}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
@click.option("--jobs", type=int, default=1)
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@_guard
def rates(config, scenario_name, out, jobs, seed):
    """Run a scenario's replication grid and emit rates.csv / ratefits.csv / SVG plots."""
    scenario = _load_scenario(config, scenario_name, master_seed=seed)
    targets = _rate_targets(config, scenario)
    table = run_scenario(scenario, jobs=jobs)
    fits = []
    for metric, exponent, tolerance, subset in targets:
        try:
            fits.append(
                fit_rate(table, metric, exponent, tolerance, subset, scenario.lambda_star)
            )
        except InputError as exc:
            click.echo(f"skipping rate fit for {metric} ({subset or 'all'}): {exc}", err=True)
    paths = emit_outputs(table, fits, out)
    for f in fits:
        tag = f" [{f.subset}]" if f.subset else ""
        click.echo(
            f"{f.metric}{tag}: slope {f.slope:.4f} vs target {f.theoretical_exponent:.4g} "
            f"(tol {f.tolerance:.3g}) -> {'pass' if f.passed else 'FAIL'}"
        )
    for p in paths:
        click.echo(f"wrote {p}")


_DEFAULT_TARGETS = {
    "halfcircle-exact": [
        ("abs_lambda", 0.5, None, None),
        ("w1_gstar", 0.5, None, None),
        ("hellinger", 0.5, None, None),
    ],
    "halfcircle-over": [
        ("abs_lambda", 0.5, None, None),
        ("w2_gstar", 0.25, None, None),
    ],
    "partial-overlap": [
        ("w4_gbar", 1.0 / 8.0, None, "lambda_gt"),
        ("abs_lambda", 0.5, None, "lambda_le"),
        ("w6_gstar", 1.0 / 12.0, None, "lambda_le"),
    ],
}


def _rate_targets(config_path, scenario):
    if scenario.name in _DEFAULT_TARGETS:
        return _DEFAULT_TARGETS[scenario.name]
    targets = []
    if config_path is not None:
        data = configio.load_config(config_path)
        for item in data.get("rate_targets", []):
            targets.append(
                (
                    item["metric"],
                    float(item["exponent"]),
                    item.get("tolerance"),
                    item.get("subset"),
                )
            )
    if not targets:
        targets = [(m.name, 0.5, None, None) for m in scenario.metrics]
    return targets


@main.command("verify-inverse-bound")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--r", "order", type=int, default=1, help="Wasserstein order in Wbar_r.")
@click.option("--directions", type=int, default=8)
@click.option("--seed", type=int, default=0)
@click.option("--split", is_flag=True, help="Use over-fitted (atom-splitting) directions.")
@click.option("--pathological", is_flag=True, help="Regime-B path along Gbar(lambda).")
@_guard
def verify_inverse_bound_cmd(config, scenario_name, order, directions, seed, split, pathological):
    """Empirical V / Wbar_r ratio check around the true parameters."""
    scenario = _load_scenario(config, scenario_name)
    if pathological:
        report = verify_pathological_regime_b(scenario, r=order, seed=seed)
        click.echo(f"scenario: {report.scenario}")
        click.echo(f"Wbar ratio collapse factor: {report.wbar_collapse_factor:.3g}")
        click.echo(f"Wbar ratio nonvanishing: {report.wbar_nonvanishing}")
        click.echo(f"W2^2(G, Gbar) ratio nonvanishing: {report.gbar_nonvanishing}")
        for lvl in report.levels_wbar:
            click.echo(
                f"  eps {lvl.epsilon:.6g}: V {lvl.tv:.6g} Wbar {lvl.divergence:.6g} "
                f"ratio {lvl.ratio:.6g}"
            )
        return
    report = verify_inverse_bound(
        scenario, order, direction_count=directions, seed=seed, split_directions=split
    )
    click.echo(f"scenario: {report.scenario} (r = {report.r})")
    click.echo(f"all directions nonvanishing: {report.all_nonvanishing}")
    click.echo(f"global min ratio: {report.global_min_ratio:.6g}")
    for d in report.directions:
        click.echo(
            f"  direction {d.index}: min ratio {d.min_ratio:.6g} "
            f"nonvanishing {d.nonvanishing}"
        )


@main.group()
def regimes():
    """Overlap-regime classification and the distinguishability probe."""


@regimes.command("classify")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--tol", type=float, default=1e-6, help="Atom match tolerance in rho.")
@_guard
def regimes_classify(config, scenario_name, tol):
    scenario = _load_scenario(config, scenario_name)
    report = classify_regime(
        scenario.h0, scenario.lambda_star, scenario.g_star, tol, scenario.family
    )
    click.echo(f"regime: {report.regime}")
    click.echo(f"k_bar: {report.k_bar}")
    click.echo(f"A_bar (0-based deviated-atom indices): {list(report.a_bar)}")
    click.echo(f"atom_match_tol: {report.atom_match_tol:.6g}")


@regimes.command("probe")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--order", type=click.IntRange(0, 2), default=1)
@click.option("--nodes", type=int, default=None, help="Grid nodes (per axis in 2-D).")
@_guard
def regimes_probe(config, scenario_name, order, nodes):
    scenario = _load_scenario(config, scenario_name)
    h0 = scenario.h0
    lo, hi = h0.bounds()
    if h0.dim == 1:
        points, weights = trapezoid_grid_1d(float(lo[0]), float(hi[0]), nodes or 4096)
    elif h0.dim == 2:
        points, weights = trapezoid_grid_2d(lo, hi, nodes or 128)
    else:
        raise InputError("probe supports d <= 2")
    atoms = scenario.g_star.atoms
    result = distinguishability_probe(
        h0, atoms, order, points, weights, family=scenario.family
    )
    click.echo(f"relative residual: {result.residual:.6g}")
    click.echo(f"degenerate design: {result.degenerate} (rank {result.rank}/{result.columns})")


@main.group()
def density():
    """Known-component (h0) debugging tools."""


@density.command("eval")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--x", required=True, help="Point, e.g. '0.3' or '0.1,0.2'.")
@_guard
def density_eval(config, scenario_name, x):
    h0 = _load_h0(config, scenario_name)
    click.echo(f"{eval_h0(h0, _parse_point(x)):.12g}")


@density.command("sample")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="-")
@_guard
def density_sample(config, scenario_name, n, seed, out):
    h0 = _load_h0(config, scenario_name)
    _write_points(sample_h0(h0, n, seed), out)


@main.group()
def model():
    """Deviated-mixture model debugging tools."""


@model.command("pdf")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--x", required=True)
@_guard
def model_pdf_cmd(config, scenario_name, x):
    m = _load_model(config, scenario_name)
    click.echo(f"{model_pdf(m, _parse_point(x)):.12g}")


@model.command("sample")
@click.option("--config", type=click.Path(exists=True), default=None)
@_scenario_opt
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="-")
@_guard
def model_sample_cmd(config, scenario_name, n, seed, out):
    m = _load_model(config, scenario_name)
    _write_points(model_sample(m, n, seed), out)


@model.command("tv")
@click.option("--config", type=click.Path(exists=True), required=True,
              help="Config with 'p:' and 'q:' model specs.")
@click.option("--method", type=click.Choice(["quadrature", "mc"]), default="quadrature")
@click.option("--samples", type=int, default=10**6, help="MC sample count.")
@click.option("--seed", type=int, default=0)
@_guard
def model_tv_cmd(config, method, samples, seed):
    data = _load_dict(config)
    if "p" not in data or "q" not in data:
        raise InputError("tv config needs 'p' and 'q' model specs")
    p = configio.model_from_dict(data["p"])
    q = configio.model_from_dict(data["q"])
    kw = {"n_samples": samples, "seed": seed} if method == "mc" else {}
    est = total_variation(p, q, method=method, **kw)
    click.echo(f"tv: {est.value:.10g}")
    click.echo(f"standard_error: {est.standard_error:.6g}")
    click.echo(f"method: {est.method}")


if __name__ == "__main__":
    main()
