"""Accuracy, robustness, receding-horizon, and calibration analyses."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .pipeline import corrupt, shift_sample


@dataclass
class MetricRecord:
    tag: str
    n_scenarios: int
    mse: float
    mae: float
    sweep_name: str = ""
    sweep_value: float = float("nan")
    quantiles: tuple = ()  # (q05, q25, q50, q75, q95) of per-scenario MSE

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("mse and mae must be non-negative")


@dataclass
class CoverageCurve:
    k: np.ndarray
    expected: np.ndarray
    observed: np.ndarray
    n_samples: int


def normal_cdf(k):
    """Standard normal CDF via erf."""
    k = np.asarray(k, dtype=float)
    return 0.5 * (1.0 + np.vectorize(math.erf)(k / math.sqrt(2.0)))


def expected_coverage(k):
    """P(|error| < k sigma) for a Gaussian error model: 2 CDF(k) - 1."""
    return 2.0 * normal_cdf(k) - 1.0


def _scenario_errors(config, params, sample):
    pred = mdl.predict(config, params, sample.input, sample.queries)
    err = np.column_stack([pred.rho_hat, pred.v_hat]) - sample.targets
    return err, pred


def _per_scenario_mse(config, params, samples):
    out = []
    for s in samples:
        err, _ = _scenario_errors(config, params, s)
        out.append(float((err ** 2).sum(axis=1).mean()))
    return np.asarray(out)


def _quantiles(values):
    return tuple(float(q) for q in np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95]))


def make_eval_samples(scenarios, d_past, d_pred, t_c=None):
    """Deterministic evaluation windows, default t_c at the earliest slot."""
    return [shift_sample(sc, d_past if t_c is None else t_c, d_past, d_pred)
            for sc in scenarios]


def accuracy_table(config, params, samples, tag="test"):
    """MSE/MAE over all query points of all evaluation samples."""
    if not samples:
        raise ValueError("empty test set")
    sq_sum = abs_sum = count = 0.0
    per_scenario = []
    for s in samples:
        err, _ = _scenario_errors(config, params, s)
        sq_sum += float((err ** 2).sum(axis=1).sum())
        abs_sum += float(np.abs(err).sum())
        count += len(err)
        per_scenario.append(float((err ** 2).sum(axis=1).mean()))
    return MetricRecord(
        tag=tag, n_scenarios=len(samples),
        mse=sq_sum / count, mae=abs_sum / (2 * count),
        quantiles=_quantiles(per_scenario))


def receding_horizon_eval(config, params_shifted, params_baseline, scenarios,
                          d_past, d_pred, d_horizon, n_shifts=6, t_c0=None):
    """Per-shift MSE curves for the shift-trained and baseline models.

    Evaluates each model at t_c0 + j*d_horizon for j = 0..n_shifts-1,
    rebuilding inputs per shift. Returns a dict with per-shift per-scenario
    MSE arrays of shape (n_shifts, n_scenarios).
    """
    t_c0 = d_past if t_c0 is None else t_c0
    T = min(float(sc.t[-1]) for sc in scenarios)
    if t_c0 + (n_shifts - 1) * d_horizon > T - d_pred:
        raise ValueError("scenarios too short for the requested shifts")
    shifts = t_c0 + np.arange(n_shifts) * d_horizon
    curves = {"shifted": [], "baseline": []}
    for t_c in shifts:
        samples = make_eval_samples(scenarios, d_past, d_pred, t_c=float(t_c))
        curves["shifted"].append(_per_scenario_mse(config, params_shifted, samples))
        if params_baseline is not None:
            curves["baseline"].append(_per_scenario_mse(config, params_baseline, samples))
    return {
        "shifts": shifts,
        "shifted": np.asarray(curves["shifted"]),
        "baseline": np.asarray(curves["baseline"]) if params_baseline is not None else None,
    }


def robustness_sweep(config, params, scenarios, axis, values, rng,
                     d_past=None, d_pred=None, sigma_rho_per_meter=None):
    """MSE distributions under corruption or shortened history.

    axis is one of "noise" (position noise std in km, with density noise
    scaled proportionally unless sigma_rho_per_meter is None), "dropout"
    (masked probe fraction), or "history" (d_past in minutes, inputs
    re-windowed). values must be sorted ascending.
    """
    if list(values) != sorted(values):
        raise ValueError("sweep values must be sorted ascending")
    d_past = config.d_past if d_past is None else d_past
    d_pred = config.d_pred if d_pred is None else d_pred
    root_seed = int(rng.integers(2 ** 31))
    records = []
    for value in values:
        per_scenario = []
        for i, sc in enumerate(scenarios):
            sub_rng = np.random.default_rng((root_seed, i, int(round(value * 1e6))))
            if axis == "history":
                # same targets for every history length; only the probe
                # window handed to the branch shrinks
                sample = shift_sample(sc, d_past, d_past, d_pred)
                from .pipeline import InputSet, build_input_set
                inp = build_input_set(sc.probes, sc.schedule, d_past, value,
                                      d_pred, x_max=float(sc.x[-1]))
                coords = inp.coords.copy()
                coords[:, 1] -= d_past
                sample = type(sample)(input=InputSet(coords, inp.values),
                                      queries=sample.queries, targets=sample.targets,
                                      t_c=sample.t_c, d_past=value,
                                      d_pred=sample.d_pred)
            elif axis in ("noise", "dropout"):
                sample = shift_sample(sc, d_past, d_past, d_pred)
                if axis == "noise":
                    sigma_rho = value * (sigma_rho_per_meter or 0.0) * 1000.0
                    corrupted = corrupt(sample.input, sub_rng, sigma_pos=value,
                                        sigma_rho=sigma_rho,
                                        x_range=(config.x_min, config.x_max))
                else:
                    corrupted = corrupt(sample.input, sub_rng, mu_mask=value)
                sample = type(sample)(input=corrupted, queries=sample.queries,
                                      targets=sample.targets, t_c=sample.t_c,
                                      d_past=sample.d_past, d_pred=sample.d_pred)
            else:
                raise ValueError(f"unknown sweep axis {axis!r}")
            err, _ = _scenario_errors(config, params, sample)
            per_scenario.append(float((err ** 2).sum(axis=1).mean()))
        per_scenario = np.asarray(per_scenario)
        records.append(MetricRecord(
            tag=axis, n_scenarios=len(scenarios),
            mse=float(per_scenario.mean()),
            mae=float("nan"), sweep_name=axis, sweep_value=float(value),
            quantiles=_quantiles(per_scenario)))
    return records


def _coverage_arrays(config, params, samples):
    errors, sigmas = [], []
    for s in samples:
        pred = mdl.predict(config, params, s.input, s.queries)
        errors.append(np.abs(pred.rho_hat - s.targets[:, 0]))
        sigmas.append(pred.sigma_rho)
    errors = np.concatenate(errors)
    sigmas = np.concatenate(sigmas)
    if np.any(sigmas <= 0):
        raise ValueError("sigma_rho must be positive everywhere")
    return errors, sigmas


def coverage_curve(config, params, samples, k_grid=None, sigma_scale=1.0):
    """Observed vs expected coverage of the density predictions.

    ``sigma_scale`` multiplies the predicted sigma, e.g. a recalibration
    factor from :func:`fit_sigma_scale`.
    """
    k_grid = np.linspace(0.0, 3.0, 31) if k_grid is None else np.asarray(k_grid, float)
    errors, sigmas = _coverage_arrays(config, params, samples)
    observed = np.array([(errors < k * sigma_scale * sigmas).mean() for k in k_grid])
    return CoverageCurve(k=k_grid, expected=expected_coverage(k_grid),
                         observed=observed, n_samples=len(errors))


def fit_sigma_scale(config, params, samples, k_grid=None,
                    scale_grid=None):
    """Post-hoc sigma recalibration on a held-out calibration set.

    The likelihood fit matches sigma^2 to the local mean squared error,
    which over-covers when the error distribution is heavier-tailed than
    Gaussian. This returns the scalar multiplier for sigma that minimizes
    the worst coverage gap over ``k_grid`` on the given samples; apply it
    via the ``sigma_scale`` argument of :func:`coverage_curve`.
    """
    k_grid = (np.array([0.5, 1.0, 1.5, 2.0]) if k_grid is None
              else np.asarray(k_grid, float))
    scale_grid = (np.linspace(0.3, 1.5, 241) if scale_grid is None
                  else np.asarray(scale_grid, float))
    errors, sigmas = _coverage_arrays(config, params, samples)
    expected = expected_coverage(k_grid)
    gaps = [np.max(np.abs(np.array([(errors < k * s * sigmas).mean()
                                    for k in k_grid]) - expected))
            for s in scale_grid]
    return float(scale_grid[int(np.argmin(gaps))])


def coverage_from_errors(errors, sigmas, k_grid):
    """Coverage machinery on raw arrays (used by the synthetic oracle)."""
    errors = np.abs(np.asarray(errors, float))
    sigmas = np.asarray(sigmas, float)
    k_grid = np.asarray(k_grid, float)
    observed = np.array([(errors < k * sigmas).mean() for k in k_grid])
    return CoverageCurve(k=k_grid, expected=expected_coverage(k_grid),
                         observed=observed, n_samples=len(errors))


# -- csv output ----------------------------------------------------------


def records_to_csv(records, path):
    cols = ["tag", "n_scenarios", "mse", "mae", "sweep_name", "sweep_value",
            "q05", "q25", "q50", "q75", "q95"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in records:
            q = list(r.quantiles) if r.quantiles else [float("nan")] * 5
            writer.writerow([r.tag, r.n_scenarios, r.mse, r.mae,
                             r.sweep_name, r.sweep_value, *q])


def coverage_to_csv(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "expected", "observed"])
        for k, e, o in zip(curve.k, curve.expected, curve.observed):
            writer.writerow([k, e, o])
