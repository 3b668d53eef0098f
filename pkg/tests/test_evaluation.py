import csv

import numpy as np
import pytest
from scipy.special import ndtr

from ontraffic.evaluation import (CoverageCurve, MetricRecord, accuracy_table,
                                  coverage_curve, coverage_from_errors,
                                  coverage_to_csv, expected_coverage,
                                  make_eval_samples, normal_cdf,
                                  receding_horizon_eval, records_to_csv,
                                  robustness_sweep)
from ontraffic.godunov import BoundarySchedule
from ontraffic.model import ModelConfig, init_params
from ontraffic.pipeline import Scenario, probes_to_array, trace_probe_trajectory


TINY = ModelConfig(d_enc=8, n_heads=2, head_width=8, p=8, hidden=8, n_hidden=1)


def make_scenario(rho0=0.3, t_end=15.0, n_x=25, dt=0.1):
    x = np.linspace(0.1, 4.9, n_x)
    t = np.arange(0.0, t_end + 1e-9, dt)
    rho = np.full((n_x, len(t)), rho0)
    v = 1.0 - rho
    schedule = BoundarySchedule(durations=np.array([t_end + 10]),
                                levels=np.array([rho0]))
    probes = [probes_to_array(trace_probe_trajectory(x, t, rho, v, (x0, 0.0)))
              for x0 in (0.5, 2.0, 3.5)]
    return Scenario(x=x, t=t, rho=rho, v=v, probes=probes, schedule=schedule)


class ConstantModel:
    """Stand-in returning fixed fields, used to make error oracles exact."""

    def __init__(self, rho=0.5, v=0.5, sigma=0.1):
        self.rho, self.v, self.sigma = rho, v, sigma


def constant_predict(model):
    from ontraffic import model as mdl

    def fake(config, params, input_set, queries):
        n = len(queries)
        return mdl.PredictionField(
            rho_hat=np.full(n, model.rho), v_hat=np.full(n, model.v),
            sigma_rho=np.full(n, model.sigma), sigma_v=np.full(n, model.sigma))

    return fake


def test_normal_cdf_matches_scipy():
    k = np.linspace(0.0, 4.0, 81)
    np.testing.assert_allclose(normal_cdf(k), ndtr(k), atol=1e-7)


def test_expected_coverage_reference_points():
    assert expected_coverage(1.96) == pytest.approx(0.95, abs=1e-3)
    assert expected_coverage(1.0) == pytest.approx(0.682689, abs=1e-5)
    assert expected_coverage(0.0) == 0.0


def test_accuracy_constant_predictor_oracle(monkeypatch):
    # field rho = 0.1, v = 0.9; predictor says 0.5 everywhere:
    # errors (0.4, -0.4): mse = 0.32, mae = 0.4
    from ontraffic import evaluation
    monkeypatch.setattr(evaluation.mdl, "predict",
                        constant_predict(ConstantModel(0.5, 0.5)))
    samples = make_eval_samples([make_scenario(0.1)], 2.0, 8.0)
    rec = accuracy_table(TINY, {}, samples)
    assert rec.mse == pytest.approx(0.32, abs=1e-12)
    assert rec.mae == pytest.approx(0.4, abs=1e-12)
    assert rec.n_scenarios == 1


def test_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        accuracy_table(TINY, {}, [])


def test_metric_record_rejects_negative():
    with pytest.raises(ValueError):
        MetricRecord(tag="x", n_scenarios=1, mse=-1.0, mae=0.0)


def test_receding_horizon_shapes_and_shift_grid():
    params = init_params(TINY, seed=0)
    scenarios = [make_scenario(0.2), make_scenario(0.4)]
    out = receding_horizon_eval(TINY, params, params, scenarios,
                                d_past=2.0, d_pred=8.0, d_horizon=1.0, n_shifts=5)
    np.testing.assert_allclose(out["shifts"], [2.0, 3.0, 4.0, 5.0, 6.0])
    assert out["shifted"].shape == (5, 2)
    np.testing.assert_array_equal(out["shifted"], out["baseline"])


def test_receding_horizon_rejects_short_scenarios():
    params = init_params(TINY, seed=0)
    with pytest.raises(ValueError):
        receding_horizon_eval(TINY, params, None, [make_scenario(t_end=11.0)],
                              d_past=2.0, d_pred=8.0, d_horizon=2.0, n_shifts=4)


def test_robustness_requires_sorted_values():
    with pytest.raises(ValueError):
        robustness_sweep(TINY, {}, [make_scenario()], "noise", [0.1, 0.0],
                         np.random.default_rng(0))


def test_robustness_unknown_axis():
    with pytest.raises(ValueError):
        robustness_sweep(TINY, init_params(TINY), [make_scenario()], "weather",
                         [0.0], np.random.default_rng(0))


def test_robustness_zero_noise_matches_clean(monkeypatch):
    from ontraffic import evaluation
    monkeypatch.setattr(evaluation.mdl, "predict",
                        constant_predict(ConstantModel(0.5, 0.5)))
    scenarios = [make_scenario(0.1), make_scenario(0.3)]
    recs = robustness_sweep(TINY, {}, scenarios, "noise", [0.0, 0.03],
                            np.random.default_rng(1))
    samples = make_eval_samples(scenarios, TINY.d_past, TINY.d_pred)
    clean = accuracy_table(TINY, {}, samples)
    assert recs[0].mse == pytest.approx(clean.mse, abs=1e-12)
    # a constant predictor ignores inputs entirely, so noise changes nothing
    assert recs[1].mse == pytest.approx(clean.mse, abs=1e-12)


def test_robustness_history_keeps_targets_fixed():
    params = init_params(TINY, seed=1)
    scenarios = [make_scenario(0.25)]
    recs = robustness_sweep(TINY, params, scenarios, "history",
                            [0.25, 1.0, 2.0], np.random.default_rng(2))
    assert len(recs) == 3
    assert [r.sweep_value for r in recs] == [0.25, 1.0, 2.0]
    # all three rows score the same number of target points by construction
    assert all(r.n_scenarios == 1 for r in recs)


def test_robustness_determinism_same_rng_seed():
    params = init_params(TINY, seed=1)
    scenarios = [make_scenario(0.25), make_scenario(0.55)]
    a = robustness_sweep(TINY, params, scenarios, "dropout", [0.0, 0.3],
                        np.random.default_rng(5))
    b = robustness_sweep(TINY, params, scenarios, "dropout", [0.0, 0.3],
                        np.random.default_rng(5))
    assert [r.mse for r in a] == [r.mse for r in b]


def test_coverage_synthetic_calibrated_oracle():
    # errors drawn from N(0, sigma^2) with the model reporting the true
    # sigma: observed coverage must track 2 CDF(k) - 1 within 0.02
    rng = np.random.default_rng(6)
    n = 100_000
    sigmas = rng.uniform(0.05, 0.5, n)
    errors = rng.normal(0.0, sigmas)
    k_grid = np.array([0.5, 1.0, 1.5, 2.0])
    curve = coverage_from_errors(errors, sigmas, k_grid)
    np.testing.assert_allclose(curve.observed, curve.expected, atol=0.02)
    assert curve.n_samples == n


def test_coverage_overconfident_oracle():
    # halving the reported sigma must drop observed coverage below expected
    rng = np.random.default_rng(7)
    sigmas = np.full(50_000, 0.2)
    errors = rng.normal(0.0, 0.2, 50_000)
    curve = coverage_from_errors(errors, 0.5 * sigmas, np.array([1.0]))
    assert curve.observed[0] < curve.expected[0] - 0.1


def test_coverage_observed_monotone_in_k(monkeypatch):
    from ontraffic import evaluation
    monkeypatch.setattr(evaluation.mdl, "predict",
                        constant_predict(ConstantModel(0.5, 0.5, sigma=0.2)))
    samples = make_eval_samples([make_scenario(0.35)], 2.0, 8.0)
    curve = coverage_curve(TINY, {}, samples)
    assert np.all(np.diff(curve.observed) >= 0.0)
    assert curve.observed[0] == 0.0  # k = 0 covers nothing
    # constant field: |error| = 0.15 < k * 0.2 for k > 0.75
    assert curve.observed[-1] == 1.0


def test_fit_sigma_scale_recovers_overdispersion(monkeypatch):
    # reported sigma is 2x the true one; the fitted recalibration factor
    # must land near 0.5 and make the scaled curve calibrated
    from ontraffic import evaluation
    rng = np.random.default_rng(8)

    true_sigma = 0.05
    def fake_predict(config, params, input_set, queries, chunk=2000):
        n = len(queries)
        rho = 0.4 + rng.normal(0.0, true_sigma, n)
        return evaluation.mdl.PredictionField(
            rho_hat=rho, v_hat=1.0 - rho,
            sigma_rho=np.full(n, 2.0 * true_sigma),
            sigma_v=np.full(n, 2.0 * true_sigma))

    monkeypatch.setattr(evaluation.mdl, "predict", fake_predict)
    samples = make_eval_samples([make_scenario(0.6)] * 8, 2.0, 8.0)
    # make the targets exactly 0.4 so errors are the injected noise
    samples = [type(s)(input=s.input, queries=s.queries,
                       targets=np.full_like(s.targets, 0.4),
                       t_c=s.t_c, d_past=s.d_past, d_pred=s.d_pred)
               for s in samples]
    from ontraffic.evaluation import fit_sigma_scale
    s_hat = fit_sigma_scale(TINY, {}, samples)
    assert abs(s_hat - 0.5) < 0.05
    curve = coverage_curve(TINY, {}, samples,
                           k_grid=np.array([0.5, 1.0, 1.5, 2.0]),
                           sigma_scale=s_hat)
    np.testing.assert_allclose(curve.observed, curve.expected, atol=0.03)


def test_coverage_sigma_scale_default_is_identity(monkeypatch):
    from ontraffic import evaluation
    monkeypatch.setattr(evaluation.mdl, "predict",
                        constant_predict(ConstantModel(0.5, 0.5, sigma=0.2)))
    samples = make_eval_samples([make_scenario(0.35)], 2.0, 8.0)
    a = coverage_curve(TINY, {}, samples)
    b = coverage_curve(TINY, {}, samples, sigma_scale=1.0)
    np.testing.assert_array_equal(a.observed, b.observed)


def test_records_csv_roundtrip(tmp_path):
    recs = [MetricRecord(tag="test", n_scenarios=2, mse=0.1, mae=0.2,
                         sweep_name="noise", sweep_value=0.03,
                         quantiles=(1, 2, 3, 4, 5))]
    path = tmp_path / "records.csv"
    records_to_csv(recs, path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["mse"] == "0.1" and rows[0]["sweep_value"] == "0.03"
    assert rows[0]["q50"] == "3"


def test_coverage_csv(tmp_path):
    curve = CoverageCurve(k=np.array([0.0, 1.0]), expected=np.array([0.0, 0.68]),
                          observed=np.array([0.0, 0.7]), n_samples=10)
    path = tmp_path / "coverage.csv"
    coverage_to_csv(curve, path)
    rows = list(csv.DictReader(open(path)))
    assert [r["k"] for r in rows] == ["0.0", "1.0"]
