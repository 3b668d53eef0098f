"""Scenario generation: simulate, trace probes, assemble a Dataset."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import godunov, idm
from .pipeline import (Dataset, Scenario, probes_to_array, sample_probe_entries,
                       trace_probe_trajectory)


@dataclass
class GenerationConfig:
    source: str = "godunov"  # or "idm"
    n_scenarios: int = 100
    seed: int = 0
    # godunov grid
    x_max: float = 5.0
    n_cells: int = 100
    t_end: float = 20.0
    # probe statistics
    rho_bar: float = 40.0  # vehicles per km
    probe_probability: float = 0.03
    # idm
    road_length: float = 1.0
    inflow_rate: float = 15.0  # vehicles per min
    # boundary schedule
    d_min: float = 1.0
    d_max: float = 2.0
    rho_red: float = 1.0
    rho_green: float = 0.0


def generate_godunov_scenario(config, seed):
    rng = np.random.default_rng(seed)
    grid = godunov.Grid(x_max=config.x_max, n_cells=config.n_cells,
                        t_end=config.t_end)
    ic = godunov.sample_initial_condition(rng, x_max=config.x_max)
    bc = godunov.sample_boundary_schedule(rng, horizon=config.t_end,
                                          d_min=config.d_min, d_max=config.d_max,
                                          rho_red=config.rho_red,
                                          rho_green=config.rho_green)
    rho, v = godunov.solve(ic, bc, grid)
    entries = sample_probe_entries(rng, grid.cell_centers, grid.times,
                                   rho_bar=config.rho_bar,
                                   probe_probability=config.probe_probability)
    probes = []
    for entry in entries:
        obs = trace_probe_trajectory(grid.cell_centers, grid.times, rho, v, entry)
        if obs:
            probes.append(probes_to_array(obs))
    return Scenario(x=grid.cell_centers, t=grid.times, rho=rho, v=v,
                    probes=probes, schedule=bc, source="godunov")


def generate_idm_scenario(config, seed):
    rng = np.random.default_rng(seed)
    light = godunov.sample_boundary_schedule(rng, horizon=config.t_end,
                                             d_min=config.d_min, d_max=config.d_max)
    result = idm.simulate(config.inflow_rate, light,
                          road_length=config.road_length,
                          t_end=config.t_end, rng=rng)
    centers, times, rho, v = idm.rasterize(result, n_cells=config.n_cells)

    # probes are a Bernoulli pick over simulated vehicles
    probe_ids = sorted(vid for vid in result.trajectories
                       if rng.random() < config.probe_probability)
    p = result.params
    probes = []
    for vid in probe_ids:
        ts, xs, vs = result.trajectories[vid]
        rows = []
        for t, x, s in zip(ts, xs, vs):
            j = min(np.searchsorted(times, t), len(times) - 1)
            rho_local = float(np.interp(x, centers, rho[:, j]))
            rows.append((rho_local, min(s / p.v0, 1.0), x, t))
        if rows:
            probes.append(np.asarray(rows))
    return Scenario(x=centers, t=times, rho=rho, v=v, probes=probes,
                    schedule=light, source="idm")


def _one(args):
    config, seed = args
    if config.source == "godunov":
        return generate_godunov_scenario(config, seed)
    if config.source == "idm":
        return generate_idm_scenario(config, seed)
    raise ValueError(f"unknown source {config.source!r}")


def generate_dataset(config, workers=1):
    """Generate n scenarios; per-scenario seeds make results independent
    of the worker count."""
    seeds = [(config.seed, i) for i in range(config.n_scenarios)]
    jobs = [(config, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scenarios = list(pool.map(_one, jobs))
    else:
        scenarios = [_one(j) for j in jobs]
    meta = {
        "source": config.source,
        "seed": config.seed,
        "windows": {"d_past": 2.0, "d_pred": 8.0},
        "rho_bar": config.rho_bar,
        "probe_probability": config.probe_probability,
    }
    return Dataset(scenarios=scenarios, meta=meta)
