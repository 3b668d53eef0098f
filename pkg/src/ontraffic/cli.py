"""Command-line entry point: generate / train / eval / predict.

Configuration comes from an optional JSON file plus flag overrides
(flags win). All randomness flows from one root seed, split per stage.
Exit codes: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation, generate, model as mdl, pipeline, training

log = logging.getLogger("ontraffic")


class UserError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("ONTRAFFIC_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(message)s")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UserError(f"cannot read config {path}: {exc}")


def _apply(dc, overrides):
    known = {f.name for f in dataclasses.fields(dc)}
    unknown = set(overrides) - known
    if unknown:
        raise UserError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(dc, **overrides)


def _stage_seed(root, stage):
    import zlib
    return int(np.random.default_rng((root, zlib.crc32(stage.encode()))).integers(2 ** 31))


def cmd_generate(args):
    cfg_file = _load_config(args.config)
    gen = _apply(generate.GenerationConfig(), cfg_file.get("generate", {}))
    if args.seed is not None:
        gen = dataclasses.replace(gen, seed=_stage_seed(args.seed, "generate"))
    if args.scenarios is not None:
        gen = dataclasses.replace(gen, n_scenarios=args.scenarios)
    if args.source is not None:
        gen = dataclasses.replace(gen, source=args.source)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    dataset = generate.generate_dataset(gen, workers=args.workers)
    path = out_dir / f"{gen.source}_{gen.n_scenarios}.ontf"
    pipeline.save_dataset(dataset, path)
    size = path.stat().st_size
    print(f"wrote {len(dataset)} scenarios to {path} "
          f"({size / 1e6:.1f} MB, seed {gen.seed}, {time.perf_counter() - t0:.1f}s)")
    return 0


def cmd_train(args):
    if not args.dataset:
        raise UserError("--dataset is required for train")
    cfg_file = _load_config(args.config)
    dataset = pipeline.load_dataset(args.dataset)
    windows = dataset.meta.get("windows", {})
    x_max = float(dataset.scenarios[0].x[-1]) if dataset.scenarios else 5.0
    model_cfg = _apply(mdl.ModelConfig(
        x_max=x_max,
        d_past=windows.get("d_past", 2.0),
        d_pred=windows.get("d_pred", 8.0),
    ), cfg_file.get("model", {}))
    train_cfg = _apply(training.TrainConfig(), cfg_file.get("train", {}))
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=_stage_seed(args.seed, "train"))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    params = None
    if args.checkpoint and Path(args.checkpoint).exists():
        model_cfg, params, _ = mdl.load_checkpoint(args.checkpoint)
        log.info("resuming from %s", args.checkpoint)

    try:
        params, report = training.train(
            dataset.scenarios, model_cfg, train_cfg, params=params,
            log=lambda row: log.info(
                "epoch %d train_mse %.5f val_mse %.5f (%.1fs)",
                row["epoch"], row["train_mse"], row["val_mse"], row["seconds"]))
    except training.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    ckpt = out_dir / "model.ontc"
    mdl.save_checkpoint(ckpt, model_cfg, params,
                        extra={"best_epoch": report.best_epoch,
                               "best_val_mse": report.best_val_mse})
    report.to_csv(out_dir / "epochs.csv")
    print(f"checkpoint {ckpt}; best val MSE {report.best_val_mse:.5f} "
          f"at epoch {report.best_epoch}; {report.wall_time:.1f}s")
    return 0


ANALYSES = ("accuracy", "robustness", "receding_horizon", "coverage")


def cmd_eval(args):
    if not args.dataset or not args.checkpoint:
        raise UserError("--dataset and --checkpoint are required for eval")
    requested = ANALYSES if args.analyses in (None, "all") else tuple(
        a.strip() for a in args.analyses.split(","))
    unknown = set(requested) - set(ANALYSES)
    if unknown:
        raise UserError(f"unknown analyses: {sorted(unknown)}")
    config, params, _ = mdl.load_checkpoint(args.checkpoint)
    dataset = pipeline.load_dataset(args.dataset)
    scenarios = dataset.scenarios
    rng = np.random.default_rng(_stage_seed(args.seed or 0, "eval"))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = evaluation.make_eval_samples(scenarios, config.d_past, config.d_pred)
    summary = {}

    if "accuracy" in requested:
        rec = evaluation.accuracy_table(config, params, samples, tag=dataset.meta.get("source", "test"))
        evaluation.records_to_csv([rec], out_dir / "accuracy.csv")
        summary["accuracy"] = {"mse": rec.mse, "mae": rec.mae}
    if "robustness" in requested:
        noise = evaluation.robustness_sweep(config, params, scenarios, "noise",
                                            [0.0, 0.01, 0.03, 0.06], rng)
        drop = evaluation.robustness_sweep(config, params, scenarios, "dropout",
                                           [0.0, 0.1, 0.3, 0.5], rng)
        hist = evaluation.robustness_sweep(config, params, scenarios, "history",
                                           [0.25, 0.5, 1.0, 2.0], rng)
        evaluation.records_to_csv(noise + drop + hist, out_dir / "robustness.csv")
        summary["robustness"] = {
            "noise_mse": [r.mse for r in noise],
            "dropout_mse": [r.mse for r in drop],
            "history_mse": [r.mse for r in hist]}
    if "receding_horizon" in requested:
        curves = evaluation.receding_horizon_eval(
            config, params, None, scenarios, config.d_past, config.d_pred,
            d_horizon=1.0, n_shifts=6)
        mean_curve = curves["shifted"].mean(axis=1)
        with open(out_dir / "receding_horizon.csv", "w") as fh:
            fh.write("shift,mse\n")
            for s, m in zip(curves["shifts"], mean_curve):
                fh.write(f"{s},{m}\n")
        spread = float((mean_curve.max() - mean_curve.min()) / mean_curve.mean())
        summary["receding_horizon"] = {"spread": spread}
    if "coverage" in requested:
        curve = evaluation.coverage_curve(config, params, samples)
        evaluation.coverage_to_csv(curve, out_dir / "coverage.csv")
        gap = float(np.max(np.abs(curve.observed - curve.expected)))
        summary["coverage"] = {"max_gap": gap}

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_predict(args):
    if not args.checkpoint or not args.input:
        raise UserError("--checkpoint and --input are required for predict")
    config, params, _ = mdl.load_checkpoint(args.checkpoint)
    try:
        raw = np.loadtxt(args.input, delimiter=",", skiprows=1)
    except (OSError, ValueError) as exc:
        raise UserError(f"malformed input set {args.input}: {exc}")
    if raw.ndim != 2 or raw.shape[1] != 5:
        raise UserError("input set must have columns x,t,id,rho,v")
    input_set = pipeline.InputSet(raw[:, :3], raw[:, 3:])
    nx, nt = args.grid
    xs = np.linspace(config.x_min, config.x_max, nx)
    ts = np.linspace(-config.d_past, config.d_pred, nt)
    qx, qt = np.meshgrid(xs, ts, indexing="ij")
    queries = np.column_stack([qx.ravel(), qt.ravel()])
    t0 = time.perf_counter()
    pred = mdl.predict(config, params, input_set, queries)
    elapsed = time.perf_counter() - t0
    out = Path(args.out or ".") / "prediction.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("x,t,rho_hat,v_hat,sigma_rho,sigma_v\n")
        for row in zip(queries[:, 0], queries[:, 1], pred.rho_hat, pred.v_hat,
                       pred.sigma_rho, pred.sigma_v):
            fh.write(",".join(f"{v:.6g}" for v in row) + "\n")
    print(f"wrote {len(queries)} predictions to {out} in {elapsed * 1e3:.1f} ms")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ontraffic")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    g = sub.add_parser("generate", help="generate a scenario dataset")
    common(g)
    g.add_argument("--source", choices=["godunov", "idm"])
    g.add_argument("--scenarios", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the operator model")
    common(t)
    t.add_argument("--dataset")
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run evaluation analyses")
    common(e)
    e.add_argument("--dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--analyses", help="comma list or 'all'")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a field from an input-set CSV")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="CSV with columns x,t,id,rho,v")
    p.add_argument("--grid", type=int, nargs=2, default=(100, 240),
                   metavar=("NX", "NT"))
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, training.DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
