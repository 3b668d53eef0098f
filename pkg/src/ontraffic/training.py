"""Losses, Adam, and the receding-horizon training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import model as mdl
from .pipeline import random_temporal_shift, subsample


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 200
    warmup_fraction: float = 0.2  # leading fraction of epochs on pure MSE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_split: float = 0.8
    n_queries: int = 256
    probe_keep_range: tuple = (0.3, 1.0)
    diagonal_nll: bool = False
    fixed_t_c: float | None = None  # disables the random temporal shift

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.train_split < 1:
            raise ValueError("train split must lie in (0, 1)")

    @property
    def warmup_epochs(self):
        return int(round(self.warmup_fraction * self.epochs))


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts per epoch
    wall_time: float = 0.0
    best_epoch: int = -1
    best_val_mse: float = np.inf

    def to_csv(self, path):
        cols = ["epoch", "train_mse", "val_mse", "train_nll", "val_nll", "seconds"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.epochs:
                writer.writerow({c: row[c] for c in cols})


# -- losses --------------------------------------------------------------


def _stack_predictions(rho_hat, v_hat):
    return ad.concat([rho_hat, v_hat], axis=1)  # (n, 2)


def mse_loss(rho_hat, v_hat, targets):
    """Mean over samples of the squared 2-norm of the (rho, v) error."""
    targets = np.asarray(targets, dtype=float)
    pred = _stack_predictions(rho_hat, v_hat)
    if pred.shape != targets.shape:
        raise ValueError(f"prediction shape {pred.shape} != targets {targets.shape}")
    err = pred - Tensor(targets)
    return ad.mean(ad.sum_over_axis(ad.square(err), axis=1))


def nll_loss(rho_hat, v_hat, sigma_rho, sigma_v, targets, diagonal=False):
    """Gaussian negative log-likelihood.

    Default follows the vector-norm form: per sample,
    ||e||^2 / ||sigma||^2 + log(2 pi ||sigma||^2) with
    ||sigma||^2 = sigma_rho^2 + sigma_v^2. The diagonal variant scores
    each component with its own variance.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(sigma_rho.data <= 0) or np.any(sigma_v.data < 0):
        raise ValueError("sigma_rho must be positive and sigma_v non-negative")
    err = _stack_predictions(rho_hat, v_hat) - Tensor(targets)
    if diagonal:
        var_rho = ad.square(sigma_rho)
        var_v = ad.square(sigma_v) + 1e-12
        e_rho = _col(err, 0)
        e_v = _col(err, 1)
        per = ad.square(e_rho) / var_rho + ad.log(2.0 * np.pi * var_rho) \
            + ad.square(e_v) / var_v + ad.log(2.0 * np.pi * var_v)
        return ad.mean(per)
    var = ad.square(sigma_rho) + ad.square(sigma_v)  # (n, 1)
    sq = ad.sum_over_axis(ad.square(err), axis=1)  # (n,)
    var_flat = _drop_col(var)
    return ad.mean(sq / var_flat + ad.log(2.0 * np.pi * var_flat))


def _col(t, i):
    out = t.data[:, i:i + 1]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[:, i:i + 1] = g
        return (full,)

    return ad._make(out.copy(), (t,), vjp)


def _drop_col(t):
    out = t.data[:, 0]
    return ad._make(out.copy(), (t,), lambda g: (g[:, None].copy(),))


# -- optimizer -----------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, state, config):
    """Standard bias-corrected Adam update in place; grads must be set."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def zero_grads(params):
    for p in params.values():
        p.grad = None


# -- loop ----------------------------------------------------------------


def _prepare_samples(scenarios, rng, model_config, train_config):
    """Fresh shifts and subsamples for one pass over the given scenarios."""
    if train_config.fixed_t_c is not None:
        from .pipeline import shift_sample
        shifted = [shift_sample(sc, train_config.fixed_t_c, model_config.d_past,
                                model_config.d_pred) for sc in scenarios]
    else:
        shifted = random_temporal_shift(scenarios, rng, model_config.d_past,
                                        model_config.d_pred)
    return [subsample(s, rng, train_config.probe_keep_range, train_config.n_queries)
            for s in shifted]


def _scenario_loss(model_config, params, sample, use_nll, diagonal):
    rho_hat, v_hat, sigma_rho, sigma_v = mdl.forward(
        model_config, params, sample.input, sample.queries)
    if use_nll:
        return nll_loss(rho_hat, v_hat, sigma_rho, sigma_v, sample.targets,
                        diagonal=diagonal)
    return mse_loss(rho_hat, v_hat, sample.targets)


def evaluate_mse(model_config, params, samples):
    """Plain MSE of the mean predictions over a list of samples."""
    total, count = 0.0, 0
    for s in samples:
        pred = mdl.predict(model_config, params, s.input, s.queries)
        err = np.column_stack([pred.rho_hat, pred.v_hat]) - s.targets
        total += float((err ** 2).sum(axis=1).sum())
        count += len(s.targets)
    return total / max(count, 1)


def evaluate_nll(model_config, params, samples, diagonal=False):
    total = 0.0
    for s in samples:
        frozen = {k: Tensor(v.data) for k, v in params.items()}
        rho_hat, v_hat, sigma_rho, sigma_v = mdl.forward(
            model_config, frozen, s.input, s.queries)
        total += float(nll_loss(rho_hat, v_hat, sigma_rho, sigma_v, s.targets,
                                diagonal=diagonal).data)
    return total / max(len(samples), 1)


def train(scenarios, model_config, train_config, params=None, log=None):
    """Optimize the model over the given scenarios.

    Each epoch re-applies the random temporal shift and subsampling with
    fresh draws, runs Adam on batches of scenarios (loss averaged over
    the batch), and tracks the validation value of the active loss (MSE
    during warmup, NLL afterwards); the best-validation parameters are
    restored at the end. The selection restarts when the NLL phase begins,
    otherwise a warmup checkpoint with an untrained uncertainty head would
    always win on MSE. Returns (params, TrainReport).
    """
    if not scenarios:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = mdl.init_params(model_config, seed=train_config.seed)
    state = AdamState()
    n_train = max(1, int(round(train_config.train_split * len(scenarios))))
    train_set = scenarios[:n_train]
    val_set = scenarios[n_train:] or train_set[-1:]

    report = TrainReport()
    best = {k: v.data.copy() for k, v in params.items()}
    best_score = np.inf
    best_phase_nll = False
    start = time.perf_counter()
    for epoch in range(train_config.epochs):
        t0 = time.perf_counter()
        use_nll = epoch >= train_config.warmup_epochs
        samples = _prepare_samples(train_set, rng, model_config, train_config)
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), train_config.batch_size):
            batch = [samples[i] for i in order[lo:lo + train_config.batch_size]]
            zero_grads(params)
            losses = [_scenario_loss(model_config, params, s, use_nll,
                                     train_config.diagonal_nll) for s in batch]
            loss = ad.mean(ad.concat([_as_row(l) for l in losses], axis=0))
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            adam_step(params, state, train_config)

        val_rng = np.random.default_rng((train_config.seed, epoch, 1))
        val_samples = _prepare_samples(val_set, val_rng, model_config, train_config)
        row = {
            "epoch": epoch,
            "train_mse": evaluate_mse(model_config, params, samples),
            "val_mse": evaluate_mse(model_config, params, val_samples),
            "train_nll": evaluate_nll(model_config, params, samples,
                                      train_config.diagonal_nll) if use_nll else float("nan"),
            "val_nll": evaluate_nll(model_config, params, val_samples,
                                    train_config.diagonal_nll) if use_nll else float("nan"),
            "seconds": time.perf_counter() - t0,
        }
        report.epochs.append(row)
        if use_nll and not best_phase_nll:
            best_phase_nll = True
            best_score = np.inf
        score = row["val_nll"] if use_nll else row["val_mse"]
        if score < best_score:
            best_score = score
            report.best_val_mse = row["val_mse"]
            report.best_epoch = epoch
            best = {k: v.data.copy() for k, v in params.items()}
        if log:
            log(row)
    report.wall_time = time.perf_counter() - start
    for k, p in params.items():
        p.data = best[k]
        p.grad = None
    return params, report


def _as_row(scalar):
    out = scalar.data.reshape(1, 1)
    return ad._make(out.copy(), (scalar,), lambda g: (g.reshape(scalar.shape).copy(),))
