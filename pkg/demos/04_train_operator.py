"""Train a small operator model and reconstruct a held-out scenario.

Run:  python demos/04_train_operator.py   (about two minutes on CPU)

Trains on a handful of macroscopic scenarios with random temporal
shifts, then compares the reconstructed density field of an unseen
scenario against the solver's ground truth.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ontraffic.evaluation import accuracy_table, make_eval_samples
from ontraffic.generate import GenerationConfig, generate_dataset
from ontraffic.model import ModelConfig, predict
from ontraffic.training import TrainConfig, train


def main():
    data = generate_dataset(
        GenerationConfig(source="godunov", n_scenarios=24, seed=1, n_cells=50),
        workers=1)
    train_set, test_set = data.scenarios[:20], data.scenarios[20:]

    model_cfg = ModelConfig(d_enc=16, n_heads=2, head_width=16, p=16, hidden=16)
    train_cfg = TrainConfig(epochs=120, seed=0, warmup_fraction=1.0,
                            n_queries=128)
    params, report = train(
        train_set, model_cfg, train_cfg,
        log=lambda r: print(f"  epoch {r['epoch']:3d}  train {r['train_mse']:.4f}"
                            f"  val {r['val_mse']:.4f}")
        if r["epoch"] % 20 == 0 else None)
    print(f"best val MSE {report.best_val_mse:.4f} at epoch {report.best_epoch} "
          f"({report.wall_time:.0f}s)")

    samples = make_eval_samples(test_set, model_cfg.d_past, model_cfg.d_pred)
    record = accuracy_table(model_cfg, params, samples)
    print(f"held-out: MSE {record.mse:.4f}, MAE {record.mae:.4f} "
          f"over {record.n_scenarios} scenarios")

    sample = samples[0]
    pred = predict(model_cfg, params, sample.input, sample.queries)
    n_x = len(test_set[0].x)
    shape = (n_x, len(sample.queries) // n_x)
    fig, axes = plt.subplots(1, 3, figsize=(14, 3.5), constrained_layout=True)
    extent = [sample.queries[:, 1].min(), sample.queries[:, 1].max(), 0, 5]
    for ax, field, title in [
            (axes[0], sample.targets[:, 0].reshape(shape), "true density"),
            (axes[1], pred.rho_hat.reshape(shape), "reconstruction"),
            (axes[2], pred.sigma_rho.reshape(shape), "predicted sigma")]:
        im = ax.imshow(field, origin="lower", aspect="auto", cmap="inferno_r",
                       extent=extent)
        ax.axvline(0.0, color="w", ls="--", lw=1)
        ax.set_title(title)
        ax.set_xlabel("t - t_c [min]")
        fig.colorbar(im, ax=ax)
    axes[0].set_ylabel("x [km]")
    fig.savefig("demos/reconstruction.png", dpi=120)
    print("wrote demos/reconstruction.png "
          "(dashed line = reference time; left of it is history)")


if __name__ == "__main__":
    main()
