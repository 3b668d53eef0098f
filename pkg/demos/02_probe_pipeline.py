"""From a solved scenario to a training sample: probes, windows, files.

Run:  python demos/02_probe_pipeline.py

Traces probe vehicles through a solved density field, assembles the
windowed observation set (probe rows + boundary-control rows), applies
the random temporal shift, and round-trips the dataset container format.
"""

import os
import tempfile

import numpy as np

from ontraffic.generate import GenerationConfig, generate_dataset
from ontraffic.pipeline import (build_input_set, load_dataset,
                                random_temporal_shift, save_dataset, subsample)


def main():
    config = GenerationConfig(source="godunov", n_scenarios=4, seed=11, n_cells=50)
    dataset = generate_dataset(config, workers=1)
    sc = dataset.scenarios[0]
    print(f"{len(dataset)} scenarios; first has {len(sc.probes)} probe vehicles")
    for k, probe in enumerate(sc.probes[:3], start=1):
        print(f"  probe {k}: {len(probe)} reports, "
              f"x {probe[0, 2]:.2f}->{probe[-1, 2]:.2f} km, "
              f"t {probe[0, 3]:.1f}->{probe[-1, 3]:.1f} min")

    # windowed observation set at reference time t_c = 6 min
    inp = build_input_set(sc.probes, sc.schedule, t_c=6.0, d_past=2.0,
                          d_pred=8.0, x_max=5.0)
    n_ctrl = int(inp.is_control.sum())
    print(f"input set at t_c=6: {inp.m} rows ({inp.m - n_ctrl} probe, "
          f"{n_ctrl} boundary-control)")

    # the training view: shifted windows, subsampled probes and queries
    rng = np.random.default_rng(0)
    sample = subsample(random_temporal_shift([sc], rng, 2.0, 8.0)[0], rng,
                       probe_keep_range=(0.3, 1.0), n_queries=256)
    print(f"training sample: t_c={sample.t_c:.2f}, {sample.input.m} input rows, "
          f"{len(sample.queries)} query/target pairs, "
          f"shifted t range [{sample.queries[:, 1].min():.2f}, "
          f"{sample.queries[:, 1].max():.2f}] min")

    # serialization round-trip
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "demo.ontf")
        save_dataset(dataset, path)
        restored = load_dataset(path)
        size = os.path.getsize(path)
        print(f"container: {size / 1e6:.2f} MB for {len(restored)} scenarios, "
              f"meta={restored.meta['source']}")


if __name__ == "__main__":
    main()
