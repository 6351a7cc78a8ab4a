import json
import math
import warnings

import numpy as np
import pytest

from pmelab import harness
from pmelab.harness import (
    ConfigError,
    ExperimentConfig,
    RateReport,
    fit_rate,
    read_rows_csv,
    render_svg,
    run_experiment,
    write_rows_csv,
)


def small_rate(tmp_path, **kw):
    base = dict(experiment="rate1d", n=64, epsilons=[0.2, 0.1, 0.05], horizon=0.05,
                snapshots=3, reference_n=64, output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# --------------------------------------------------------------- fitting


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 1 / 28])
def test_fit_recovers_exact_power_law(p):
    eps = [0.2, 0.1, 0.05, 0.025]
    slope, intercept, r2 = fit_rate([(e, 7.0 * e**p) for e in eps])
    assert slope == pytest.approx(p, abs=1e-12)
    assert intercept == pytest.approx(math.log(7.0), abs=1e-12)
    assert r2 == pytest.approx(1.0)


def test_fit_linear_in_eps_has_log3_intercept():
    slope, intercept, _ = fit_rate([(e, 3 * e) for e in (0.2, 0.1, 0.05)])
    assert slope == pytest.approx(1.0)
    assert intercept == pytest.approx(math.log(3.0))


def test_fit_noise_monte_carlo():
    rng = np.random.default_rng(7)
    eps = np.array([0.2, 0.1, 0.05, 0.025, 0.0125])
    slopes = [fit_rate(list(zip(eps, eps**0.5 * (1 + 0.01 * rng.standard_normal(eps.size)))))[0]
              for _ in range(400)]
    assert abs(np.mean(slopes) - 0.5) < 2e-3
    assert np.std(slopes) < 0.02


def test_fit_needs_three_positive_rows():
    with pytest.raises(ValueError):
        fit_rate([(0.2, 1.0), (0.1, 0.5)])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        with pytest.raises(ValueError):
            fit_rate([(0.2, 1.0), (0.1, 0.5), (0.05, 0.0)])
    assert any("nonpositive" in str(x.message) for x in w)


# --------------------------------------------------------------- outputs


def test_rows_csv_round_trip(tmp_path):
    rows = [{"epsilon": 0.1, "distance": 1 / 3, "ok": True, "steps": 12},
            {"epsilon": 0.05, "distance": 2e-17, "ok": False, "steps": 40}]
    write_rows_csv(rows, tmp_path / "r.csv")
    assert read_rows_csv(tmp_path / "r.csv") == rows


def test_empty_report_has_header_only_and_fails(tmp_path):
    rep = RateReport("rate1d", [])
    paths = harness.emit_report(rep, tmp_path)
    assert paths["rows"].read_text().strip() == "epsilon,distance"
    assert not rep.passed
    assert json.loads(paths["summary"].read_text())["pass"] is False


def test_svg_has_one_marker_per_row_and_two_lines():
    eps = [0.2, 0.1, 0.05, 0.025, 0.0125]
    rep = RateReport("rate1d", [{"epsilon": e, "distance": e**0.6} for e in eps], target_rate=0.5)
    rep.slope, rep.intercept, _ = fit_rate([(e, e**0.6) for e in eps])
    svg = render_svg(rep)
    assert svg.count('class="marker"') == 5
    assert svg.count("<line") == 2


# --------------------------------------------------------------- config


@pytest.mark.parametrize("patch,match", [
    ({"epsilons": [0.1, 0.2, 0.05]}, "decreasing"),
    ({"epsilons": [0.2, 0.1, 0.01]}, "2h"),
    ({"dim": 2}, "1D|one-dimensional|dim"),
    ({"experiment": "nope"}, "experiment"),
])
def test_config_rejects(tmp_path, patch, match):
    with pytest.raises(ConfigError, match=match):
        small_rate(tmp_path, **patch).validate()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "rate1d", "bogus": 1})


# --------------------------------------------------------------- runs


def test_single_epsilon_flags_undefined_slope(tmp_path):
    rep = run_experiment(small_rate(tmp_path, epsilons=[0.1]))
    assert any("undefined slope" in f for f in rep.flags)
    assert rep.slope is None
    assert not rep.passed


def test_uniform_data_reports_identical_solutions(tmp_path):
    rep = run_experiment(small_rate(tmp_path, initial={"type": "uniform"}))
    assert "identical solutions" in rep.flags
    assert all(r["distance"] == 0 for r in rep.rows)
    assert rep.pass_flags.get("identical_solutions") is True


def test_runs_are_bit_reproducible(tmp_path):
    a = run_experiment(small_rate(tmp_path), tmp_path / "a")
    b = run_experiment(small_rate(tmp_path), tmp_path / "b")
    assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()
    assert a.slope == b.slope
    for name in ("config.json", "summary.json", "plot.svg"):
        assert (tmp_path / "a" / name).exists()
