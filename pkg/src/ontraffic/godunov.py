"""Godunov finite-volume solver for the LWR traffic model.

Units: space in km, time in minutes, density normalized to [0, 1].
The fundamental diagram is normalized Greenshields, f(rho) = rho(1 - rho)
and v(rho) = 1 - rho, so the free-flow speed is 1 km/min (60 km/h) and
the characteristic speed is bounded by 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FREE_FLOW_SPEED = 1.0  # km/min, implied by the normalized flux


class CFLError(RuntimeError):
    """Raised when the time step violates the CFL stability bound."""


def flux(rho):
    """Greenshields flux f(rho) = rho(1 - rho)."""
    return rho * (1.0 - rho)


def velocity(rho):
    """Greenshields velocity v(rho) = 1 - rho."""
    return 1.0 - rho


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid for one road segment."""

    x_min: float = 0.0
    x_max: float = 5.0
    n_cells: int = 100
    t_end: float = 20.0
    dt: float | None = None  # defaults to 0.5 * dx / max|f'|

    def __post_init__(self):
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.n_cells < 2:
            raise ValueError("need at least 2 cells")
        if self.dt is None:
            object.__setattr__(self, "dt", 0.5 * self.dx / FREE_FLOW_SPEED)
        if self.dt > self.dx / FREE_FLOW_SPEED + 1e-15:
            raise CFLError(f"dt={self.dt} exceeds CFL bound dx/max|f'|={self.dx}")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def cell_centers(self):
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class InitialConditionParams:
    """Multi-step piecewise-constant initial density profile."""

    rho_init: float
    step_heights: np.ndarray
    step_positions: np.ndarray  # right edges x_k, strictly increasing

    def evaluate(self, x):
        """Density at positions x; steps apply on [x_{k-1}, x_k)."""
        rho = np.full_like(np.asarray(x, dtype=float), self.rho_init)
        level = self.rho_init
        # heights accumulate: each step changes the running level
        for dh, xk in zip(self.step_heights, self.step_positions):
            level = level + dh
            rho = np.where((x >= xk), level, rho)
        return np.clip(rho, 0.0, 1.0)


@dataclass(frozen=True)
class BoundarySchedule:
    """Alternating red/green downstream boundary densities."""

    durations: np.ndarray  # minutes, phase i
    levels: np.ndarray  # density held during phase i
    rho_red: float = 1.0
    rho_green: float = 0.0

    def __post_init__(self):
        if len(self.durations) != len(self.levels):
            raise ValueError("durations and levels must align")

    @property
    def edges(self):
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def level_at(self, t):
        """Boundary density at time(s) t (clamped to the last phase)."""
        idx = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(self.levels) - 1)
        return np.asarray(self.levels)[idx]


def sample_initial_condition(rng, n_steps_range=(0, 6), s_w_min=0.4, s_w_max=1.5,
                             rho_init=0.1, x_min=0.0, x_max=5.0):
    """Draw a piecewise-constant initial profile with uniform parameters.

    Step heights are drawn from U(-rho_current, 1 - rho_current) so the
    running level stays inside [0, 1]; step positions advance by widths
    drawn from U(s_w_min, s_w_max).
    """
    if s_w_min <= 0 or s_w_max < s_w_min:
        raise ValueError("invalid step-width range")
    n_steps = int(rng.integers(n_steps_range[0], n_steps_range[1] + 1))
    heights, positions = [], []
    level = rho_init
    x = x_min
    for _ in range(n_steps):
        x = x + rng.uniform(s_w_min, s_w_max)
        if x >= x_max:
            break
        dh = rng.uniform(-level, 1.0 - level)
        level += dh
        heights.append(dh)
        positions.append(x)
    return InitialConditionParams(
        rho_init=rho_init,
        step_heights=np.asarray(heights),
        step_positions=np.asarray(positions),
    )


def sample_boundary_schedule(rng, horizon, d_min=1.0, d_max=2.0,
                             rho_red=1.0, rho_green=0.0, start_red=None):
    """Alternating red/green phases with i.i.d. U(d_min, d_max) durations."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    red = bool(rng.integers(0, 2)) if start_red is None else start_red
    durations, levels = [], []
    total = 0.0
    while total < horizon:
        d = float(rng.uniform(d_min, d_max))
        durations.append(d)
        levels.append(rho_red if red else rho_green)
        total += d
        red = not red
    return BoundarySchedule(
        durations=np.asarray(durations),
        levels=np.asarray(levels),
        rho_red=rho_red,
        rho_green=rho_green,
    )


def godunov_flux(rho_left, rho_right):
    """Exact Riemann flux for concave Greenshields f.

    min of f over [rho_L, rho_R] when rho_L <= rho_R, else max of f over
    [rho_R, rho_L]; the max of concave f sits at the critical density 0.5
    when it lies inside the interval.
    """
    rho_left = np.asarray(rho_left, dtype=float)
    rho_right = np.asarray(rho_right, dtype=float)
    if np.any(rho_left < 0) or np.any(rho_left > 1) or np.any(rho_right < 0) or np.any(rho_right > 1):
        raise ValueError("densities must lie in [0, 1]")
    f_l, f_r = flux(rho_left), flux(rho_right)
    demand = np.where(rho_left <= 0.5, f_l, 0.25)
    supply = np.where(rho_right >= 0.5, f_r, 0.25)
    return np.where(
        rho_left <= rho_right,
        np.minimum(f_l, f_r),
        np.minimum(demand, supply),  # = max of f on [rho_R, rho_L]
    )


def solve(ic, bc, grid, inflow_density=0.1):
    """Solve the LWR equation; returns (rho, v) of shape (n_cells, n_steps+1).

    Conservative update rho_i += -(dt/dx)(F_{i+1/2} - F_{i-1/2}) with an
    upstream ghost cell fixed at the inflow density and a downstream ghost
    cell following the boundary schedule.
    """
    if grid.dt > grid.dx / FREE_FLOW_SPEED + 1e-15:
        raise CFLError(f"dt={grid.dt} violates CFL with dx={grid.dx}")
    n_x, n_t = grid.n_cells, grid.n_steps
    rho = np.empty((n_x, n_t + 1))
    rho[:, 0] = np.clip(ic.evaluate(grid.cell_centers), 0.0, 1.0)
    lam = grid.dt / grid.dx
    for n in range(n_t):
        cur = rho[:, n]
        t = n * grid.dt
        left = np.concatenate([[inflow_density], cur])
        right = np.concatenate([cur, [float(bc.level_at(t))]])
        interface = godunov_flux(left, right)  # n_x + 1 interfaces
        rho[:, n + 1] = cur - lam * (interface[1:] - interface[:-1])
    return rho, velocity(rho)
