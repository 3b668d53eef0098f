"""Uncertainty training and coverage calibration.

Run:  python demos/05_uncertainty_calibration.py   (a few minutes on CPU)

Trains with the heteroscedastic negative-log-likelihood phase enabled,
then checks how often the true density falls inside k-sigma bands
against the Gaussian expectation — the coverage calibration curve.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ontraffic.evaluation import (coverage_curve, fit_sigma_scale,
                                  make_eval_samples)
from ontraffic.generate import GenerationConfig, generate_dataset
from ontraffic.model import ModelConfig
from ontraffic.training import TrainConfig, train


def main():
    data = generate_dataset(
        GenerationConfig(source="godunov", n_scenarios=36, seed=2, n_cells=50),
        workers=1)
    train_set, test_set = data.scenarios[:30], data.scenarios[30:]

    model_cfg = ModelConfig(d_enc=16, n_heads=2, head_width=16, p=16, hidden=16)
    train_cfg = TrainConfig(epochs=150, seed=0, warmup_fraction=0.3,
                            n_queries=128)
    params, report = train(
        train_set, model_cfg, train_cfg,
        log=lambda r: print(f"  epoch {r['epoch']:3d}  val_mse {r['val_mse']:.4f}"
                            f"  val_nll {r['val_nll']:.3f}")
        if r["epoch"] % 25 == 0 else None)

    samples = make_eval_samples(test_set, model_cfg.d_past, model_cfg.d_pred)
    curve = coverage_curve(model_cfg, params, samples)
    print(f"coverage over {curve.n_samples} held-out points:")
    for k in (0.5, 1.0, 1.5, 2.0):
        i = int(np.argmin(np.abs(curve.k - k)))
        print(f"  k={k:3.1f}: observed {curve.observed[i]:.3f} "
              f"expected {curve.expected[i]:.3f}")

    # The NLL fits sigma^2 to the local mean squared error; with
    # heavier-than-Gaussian error tails that sigma over-covers. A single
    # recalibration factor fitted on the training scenarios tightens it.
    cal = make_eval_samples(train_set, model_cfg.d_past, model_cfg.d_pred)
    scale = fit_sigma_scale(model_cfg, params, cal)
    scaled = coverage_curve(model_cfg, params, samples, sigma_scale=scale)
    print(f"recalibration factor {scale:.3f} fitted on the training set")

    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    ax.plot(curve.k, curve.expected, "k--", label="Gaussian expectation")
    ax.plot(curve.k, curve.observed, "o-", label="observed")
    ax.plot(scaled.k, scaled.observed, "s-",
            label=f"observed, sigma x {scale:.2f}")
    ax.set_xlabel("k")
    ax.set_ylabel("P(|error| < k sigma)")
    ax.legend()
    fig.savefig("demos/coverage.png", dpi=120)
    print("wrote demos/coverage.png")


if __name__ == "__main__":
    main()
