import math
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from devmix import configio
from devmix.cli import main as cli_main
from devmix.errors import InputError
from devmix.estimation import EmConfig
from devmix.harness import (
    Metric,
    RateRow,
    RateTable,
    ScenarioConfig,
    emit_outputs,
    fit_rate,
    run_scenario,
    verify_inverse_bound,
    verify_pathological_regime_b,
)
from devmix.known_density import GaussianMixtureH0
from devmix.mixing import Atom, ConstraintClass, MixingMeasure, location_measure, wasserstein
from devmix.model import FamilyTag
from devmix.scenarios import half_circle_scenario, partial_overlap_scenario


def tiny_scenario(metrics=(Metric("abs_lambda"), Metric("w_gstar", 1)), reps=2):
    h0 = GaussianMixtureH0([1.0], [[0.0]], [[[1.0]]])
    family = FamilyTag.location([[0.25]])
    fit = EmConfig(
        constraint=ConstraintClass("exact", 1),
        family=family,
        max_iterations=120,
        restarts=2,
        mean_box=8.0,
        eigen_bounds=(0.05, 10.0),
        seed=0,
    )
    return ScenarioConfig(
        name="tiny",
        h0=h0,
        lambda_star=0.4,
        g_star=location_measure([[3.0]], [1.0]),
        family=family,
        fit=fit,
        n_grid=(60, 90, 140),
        replications=reps,
        metrics=tuple(metrics),
        master_seed=77,
    )


# ---------------------------------------------------------------------------
# run_scenario
# ---------------------------------------------------------------------------


def test_row_count_contract():
    cfg = tiny_scenario(reps=1)
    cfg = replace(cfg, n_grid=(100,))
    table = run_scenario(cfg)
    assert len(table.rows) == len(cfg.metrics)


def test_run_scenario_determinism_modulo_wallclock(tmp_path):
    cfg = tiny_scenario()
    t1 = run_scenario(cfg)
    t2 = run_scenario(cfg)
    strip = lambda r: (r.scenario, r.n, r.replicate, r.metric, r.value, r.lambda_hat, r.failed)
    assert [strip(r) for r in t1.rows] == [strip(r) for r in t2.rows]
    # byte identity of rates.csv with the wallclock column masked
    texts = []
    for i, t in enumerate((t1, t2)):
        out = tmp_path / f"run{i}"
        emit_outputs(t, [], out)
        lines = (out / "rates.csv").read_text().splitlines()
        masked = ["," .join(v for j, v in enumerate(l.split(",")) if j != 6) for l in lines]
        texts.append(masked)
    assert texts[0] == texts[1]


def test_metric_values_recomputable():
    cfg = tiny_scenario()
    table = run_scenario(cfg)
    rows = {(r.n, r.replicate, r.metric): r for r in table.rows}
    r_abs = rows[(140, 1, "abs_lambda")]
    r_w1 = rows[(140, 1, "w1_gstar")]
    assert r_abs.value == pytest.approx(abs(r_abs.lambda_hat - cfg.lambda_star), abs=1e-12)
    assert r_abs.lambda_hat == r_w1.lambda_hat
    assert 0 <= r_w1.value < 3.0


def test_expected_row_total():
    cfg = tiny_scenario()
    table = run_scenario(cfg)
    assert len(table.rows) == len(cfg.n_grid) * cfg.replications * len(cfg.metrics)


def test_gtilde_metric_on_full_overlap_scenario():
    # regime C: G* reuses the h0 atom, so Gtilde(lambda_hat) is defined
    h0 = GaussianMixtureH0([1.0], [[0.0]], [[[1.0]]])
    family = FamilyTag.location_scale()
    g_star = MixingMeasure(
        (Atom([0.0], [[1.0]]), Atom([4.0], [[0.8]])), [0.4, 0.6]
    )
    fit = EmConfig(
        constraint=ConstraintClass("over", 2),
        family=family,
        max_iterations=80,
        restarts=1,
        mean_box=8.0,
        eigen_bounds=(0.1, 10.0),
        seed=0,
    )
    cfg = ScenarioConfig(
        name="regimec",
        h0=h0,
        lambda_star=0.5,
        g_star=g_star,
        family=family,
        fit=fit,
        n_grid=(150,),
        replications=1,
        metrics=(Metric("w_gtilde", 2),),
        master_seed=5,
    )
    table = run_scenario(cfg)
    assert len(table.rows) == 1
    assert not table.rows[0].failed
    assert np.isfinite(table.rows[0].value)


# ---------------------------------------------------------------------------
# fit_rate
# ---------------------------------------------------------------------------


def _synthetic_table(fn):
    rows = []
    for n in (100, 400, 1600, 6400):
        for rep in range(3):
            rows.append(RateRow("syn", n, rep, "err", fn(n), 0.5, 0.0, False))
    return RateTable(tuple(rows))


def test_fit_rate_exact_power_law():
    table = _synthetic_table(lambda n: (math.log(n) / n) ** 0.5)
    fit = fit_rate(table, "err", 0.5)
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.passed


def test_fit_rate_constant_values():
    table = _synthetic_table(lambda n: 0.7)
    fit = fit_rate(table, "err", 0.5)
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert not fit.passed


def test_fit_rate_insufficient_data():
    rows = tuple(RateRow("s", 100, r, "err", 0.1, 0.5, 0.0, False) for r in range(3))
    with pytest.raises(InputError):
        fit_rate(RateTable(rows), "err", 0.5)


def test_fit_rate_subset_filtering():
    rows = []
    for n in (100, 400, 1600):
        rows.append(RateRow("s", n, 0, "err", (math.log(n) / n) ** 0.5, 0.9, 0.0, False))
        rows.append(RateRow("s", n, 1, "err", 1.0, 0.1, 0.0, False))
    table = RateTable(tuple(rows))
    hi = fit_rate(table, "err", 0.5, subset="lambda_gt", lambda_star=0.5)
    lo = fit_rate(table, "err", 0.5, subset="lambda_le", lambda_star=0.5)
    assert hi.slope == pytest.approx(0.5, abs=1e-12)
    assert lo.slope == pytest.approx(0.0, abs=1e-12)


def test_default_tolerances():
    from devmix.harness import default_slope_tolerance

    assert default_slope_tolerance(0.5) == 0.2
    assert default_slope_tolerance(0.25) == 0.2
    assert default_slope_tolerance(1 / 8) == 0.08
    assert default_slope_tolerance(1 / 12) == 0.08


# ---------------------------------------------------------------------------
# emit_outputs
# ---------------------------------------------------------------------------


def test_emit_empty_table(tmp_path):
    paths = emit_outputs(RateTable(()), [], tmp_path)
    rates = tmp_path / "rates.csv"
    assert rates.read_text().strip() == (
        "scenario,n,replicate,metric,value,lambda_hat,wallclock_seconds,failed"
    )
    assert (tmp_path / "ratefits.csv").exists()
    assert not list(tmp_path.glob("*.svg"))
    assert all(p.exists() for p in paths)


def test_emit_outputs_row_count_and_svg(tmp_path):
    cfg = tiny_scenario()
    table = run_scenario(cfg)
    fits = [fit_rate(table, "w1_gstar", 0.5)]
    emit_outputs(table, fits, tmp_path)
    lines = (tmp_path / "rates.csv").read_text().strip().splitlines()
    assert len(lines) - 1 == len(table.rows)
    svgs = sorted(tmp_path.glob("*.svg"))
    assert {p.name for p in svgs} == {"rate_abs_lambda.svg", "rate_w1_gstar.svg"}
    for svg in svgs:
        root = ET.parse(svg).getroot()  # well-formed XML
        assert root.tag.endswith("svg")
    fits_lines = (tmp_path / "ratefits.csv").read_text().strip().splitlines()
    assert len(fits_lines) == 2


# ---------------------------------------------------------------------------
# inverse-bound probes (structure; the theorems' checks run in acceptance)
# ---------------------------------------------------------------------------


def test_verify_inverse_bound_structure():
    cfg = tiny_scenario()
    report = verify_inverse_bound(cfg, r=1, direction_count=2,
                                  epsilon_levels=(1.0, 0.25, 0.0625), seed=1)
    assert len(report.directions) == 2
    for d in report.directions:
        assert len(d.levels) >= 2
        assert all(l.ratio >= 0 for l in d.levels)
        eps = [l.epsilon for l in d.levels]
        assert eps == sorted(eps, reverse=True)
    assert report.global_min_ratio > 0


def test_pathological_regime_b_structure():
    h0 = GaussianMixtureH0([0.5, 0.5], [[-2.0], [2.0]], [[[0.5]], [[0.5]]])
    family = FamilyTag.location_scale()
    g_star = MixingMeasure((Atom([-2.0], [[0.5]]),), [1.0])
    fit = EmConfig(
        constraint=ConstraintClass("over", 3),
        family=family,
        mean_box=8.0,
        eigen_bounds=(0.05, 10.0),
    )
    cfg = ScenarioConfig(
        name="regimeb-1d",
        h0=h0,
        lambda_star=0.3,
        g_star=g_star,
        family=family,
        fit=fit,
        n_grid=(50,),
        replications=1,
        metrics=(Metric("abs_lambda"),),
        master_seed=1,
    )
    report = verify_pathological_regime_b(
        cfg, r=2, epsilon_levels=(1.0, 0.5, 0.25, 0.125), seed=2
    )
    assert report.wbar_collapse_factor > 1.0
    assert report.levels_gbar[-1].ratio > 0


# ---------------------------------------------------------------------------
# config round-trips
# ---------------------------------------------------------------------------


def test_scenario_config_roundtrip(tmp_path):
    cfg = partial_overlap_scenario(n_grid=(100, 200), replications=2)
    data = configio.scenario_to_dict(cfg)
    path = tmp_path / "scenario.yaml"
    configio.dump_config(data, path)
    loaded = configio.scenario_from_dict(configio.load_config(path))
    assert loaded.name == cfg.name
    assert loaded.n_grid == cfg.n_grid
    assert loaded.lambda_star == cfg.lambda_star
    assert [m.name for m in loaded.metrics] == [m.name for m in cfg.metrics]
    np.testing.assert_allclose(loaded.g_star.locations(), cfg.g_star.locations())
    np.testing.assert_allclose(
        loaded.h0.covariances, cfg.h0.covariances
    )
    assert loaded.fit.constraint == cfg.fit.constraint
    assert wasserstein(loaded.g_star, cfg.g_star, 1) == pytest.approx(0.0, abs=1e-12)


def test_model_config_roundtrip(tmp_path):
    cfg = half_circle_scenario()
    model = cfg.true_model()
    data = configio.model_to_dict(model)
    back = configio.model_from_dict(yaml.safe_load(yaml.safe_dump(data)))
    x = np.array([[0.1, 1.4]])
    assert back.pdf_batch(x)[0] == pytest.approx(model.pdf_batch(x)[0], abs=1e-14)


def test_metric_name_parsing():
    assert configio.parse_metric_name("abs_lambda").kind == "abs_lambda"
    assert configio.parse_metric_name("w4_gbar") == Metric("w_gbar", 4)
    assert configio.parse_metric_name("w6_gstar") == Metric("w_gstar", 6)
    with pytest.raises(InputError):
        configio.parse_metric_name("w0_gstar")
    with pytest.raises(InputError):
        configio.parse_metric_name("nonsense")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


@pytest.fixture
def runner():
    return CliRunner()


def _write_tiny_config(tmp_path):
    cfg = tiny_scenario()
    path = tmp_path / "tiny.yaml"
    configio.dump_config(configio.scenario_to_dict(cfg), path)
    return path, cfg


def test_cli_density_eval(runner, tmp_path):
    path, cfg = _write_tiny_config(tmp_path)
    result = runner.invoke(cli_main, ["density", "eval", "--config", str(path), "--x", "0"])
    assert result.exit_code == 0, result.output
    assert float(result.output.strip()) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-9)


def test_cli_model_pdf_matches_library(runner, tmp_path):
    path, cfg = _write_tiny_config(tmp_path)
    result = runner.invoke(cli_main, ["model", "pdf", "--config", str(path), "--x", "1.0"])
    assert result.exit_code == 0, result.output
    from devmix.model import pdf

    assert float(result.output.strip()) == pytest.approx(pdf(cfg.true_model(), 1.0), abs=1e-9)


def test_cli_simulate_then_fit(runner, tmp_path):
    path, cfg = _write_tiny_config(tmp_path)
    data_csv = tmp_path / "data.csv"
    result = runner.invoke(
        cli_main,
        ["simulate", "--config", str(path), "--n", "400", "--seed", "5", "--out", str(data_csv)],
    )
    assert result.exit_code == 0, result.output
    points = np.loadtxt(data_csv, delimiter=",", ndmin=2)
    assert points.shape == (400, 1)

    out_json = tmp_path / "fit.json"
    result = runner.invoke(
        cli_main,
        [
            "fit", "--data", str(data_csv), "--config", str(path),
            "--K", "1", "--exact", "--restarts", "2", "--seed", "3",
            "--out", str(out_json),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "lambda_hat:" in result.output
    assert out_json.exists()


def test_cli_regimes_classify(runner):
    result = runner.invoke(cli_main, ["regimes", "classify", "--scenario", "partial-overlap"])
    assert result.exit_code == 0, result.output
    assert "b_partial_overlap" in result.output
    assert "k_bar: 1" in result.output


def test_cli_regimes_probe(runner, tmp_path):
    path, _ = _write_tiny_config(tmp_path)
    result = runner.invoke(
        cli_main, ["regimes", "probe", "--config", str(path), "--order", "0"]
    )
    assert result.exit_code == 0, result.output
    assert "relative residual" in result.output


def test_cli_rates_tiny(runner, tmp_path):
    path, _ = _write_tiny_config(tmp_path)
    out_dir = tmp_path / "out"
    result = runner.invoke(cli_main, ["rates", "--config", str(path), "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "rates.csv").exists()
    assert (out_dir / "ratefits.csv").exists()


def test_cli_input_error_exit_code(runner):
    result = runner.invoke(cli_main, ["density", "eval", "--x", "0"])
    assert result.exit_code == 1


def test_cli_unknown_scenario_exit_code(runner):
    result = runner.invoke(cli_main, ["simulate", "--scenario", "nope", "--n", "10"])
    assert result.exit_code == 1  # click usage errors are input errors


def test_cli_model_tv(runner, tmp_path):
    spec = {
        "p": {
            "h0": {"type": "gaussian_mixture", "weights": [1.0], "means": [[0.0]],
                    "covariances": [[[1.0]]]},
            "lambda": 1.0,
            "g": {"weights": [1.0], "locations": [[0.0]]},
            "family": {"kind": "location", "shared_cov": [[1.0]]},
        },
        "q": {
            "h0": {"type": "gaussian_mixture", "weights": [1.0], "means": [[0.0]],
                    "covariances": [[[1.0]]]},
            "lambda": 1.0,
            "g": {"weights": [1.0], "locations": [[2.0]]},
            "family": {"kind": "location", "shared_cov": [[1.0]]},
        },
    }
    path = tmp_path / "tv.yaml"
    configio.dump_config(spec, path)
    result = runner.invoke(cli_main, ["model", "tv", "--config", str(path)])
    assert result.exit_code == 0, result.output
    value = float(result.output.splitlines()[0].split(":")[1])
    from scipy.stats import norm

    assert value == pytest.approx(2 * norm.cdf(1.0) - 1.0, abs=1e-6)
