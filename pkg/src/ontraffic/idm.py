"""Intelligent Driver Model microsimulation of a signalized road segment.

Single lane, vehicles enter upstream with Poisson arrivals, a traffic
light at the downstream end alternates red/green per a boundary
schedule. Units: km and minutes; the desired speed v0 = 1 km/min so
normalized speed equals speed, and densities normalize by the jam
density 1 / (s0 + vehicle_length).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .godunov import BoundarySchedule


@dataclass
class IDMParams:
    a: float = 0.73  # max acceleration, km/min^2
    b: float = 1.67  # comfortable deceleration, km/min^2
    v0: float = 1.0  # desired speed, km/min
    s0: float = 0.002  # jam gap, km (2 m)
    T_headway: float = 0.025  # min (1.5 s)
    vehicle_length: float = 0.005  # km (5 m)

    def __post_init__(self):
        for name in ("a", "b", "v0", "s0", "T_headway", "vehicle_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")

    @property
    def jam_spacing(self):
        return self.s0 + self.vehicle_length


@dataclass
class VehicleState:
    position: float  # km
    speed: float  # km/min
    id: int
    is_probe: bool = False


class CollisionError(RuntimeError):
    """Raised when two vehicles overlap during integration."""


def idm_acceleration(me, leader, p):
    """IDM acceleration a[1 - (v/v0)^4 - (s*/s)^2].

    s*(v, dv) = s0 + v*T + v*dv / (2 sqrt(a b)); without a leader the
    interaction term is dropped entirely.
    """
    free = 1.0 - (me.speed / p.v0) ** 4
    if leader is None:
        return p.a * free
    gap = leader.position - me.position - p.vehicle_length
    if gap <= 0:
        raise CollisionError(f"non-positive gap {gap} for vehicle {me.id}")
    dv = me.speed - leader.speed
    s_star = p.s0 + me.speed * p.T_headway + me.speed * dv / (2.0 * np.sqrt(p.a * p.b))
    return p.a * (free - (s_star / gap) ** 2)


@dataclass
class MicrosimResult:
    """Raw trajectories plus bookkeeping from one simulation run."""

    record_times: np.ndarray
    trajectories: dict  # id -> (times, positions, speeds) arrays
    light: BoundarySchedule
    road_length: float
    params: IDMParams
    entered: int = 0
    exited: int = 0


def estimate_local_density(vehicles, p):
    """Per-vehicle normalized density from inverse spacing.

    Spacing is center-to-center distance to the vehicle ahead; the last
    vehicle (no leader) falls back to its rear gap. A single isolated
    vehicle reports density 0.
    """
    if not vehicles:
        raise ValueError("need at least one vehicle")
    n = len(vehicles)
    out = np.zeros(n)
    for i, veh in enumerate(vehicles):
        if i + 1 < n:
            spacing = vehicles[i + 1].position - veh.position
        elif n >= 2:
            spacing = veh.position - vehicles[i - 1].position
        else:
            return out
        out[i] = min(1.0, p.jam_spacing / max(spacing, p.jam_spacing))
    return out


def _is_red(light, t):
    return float(light.level_at(t)) >= 0.5


def simulate(inflow_rate, light, road_length=1.0, t_end=20.0, dt=1.0 / 600.0,
             params=None, rng=None, record_dt=None):
    """Run the car-following simulation.

    Vehicles arrive at x=0 as a Poisson process (held back until there is
    physical room), follow IDM with semi-implicit Euler integration, stop
    for the red light modeled as a stationary virtual leader at the stop
    line, and leave the simulation once past the road end.
    """
    if dt > 0.1 / 60.0 + 1e-12:
        raise ValueError("dt must be at most 0.1 s for stable integration")
    p = params or IDMParams()
    rng = rng or np.random.default_rng(0)
    record_every = max(1, int(round((record_dt or 5.0 / 60.0) / dt)))

    n_steps = int(round(t_end / dt))
    vehicles = []  # ordered upstream -> downstream (increasing position)
    history = {}
    record_times = []
    entered = exited = 0
    next_id = 0
    # pre-draw arrival times
    arrivals = []
    if inflow_rate > 0:
        t = rng.exponential(1.0 / inflow_rate)
        while t < t_end:
            arrivals.append(t)
            t += rng.exponential(1.0 / inflow_rate)
    arrivals = arrivals[::-1]  # pop from the end

    stop_line_leader = VehicleState(position=road_length + p.vehicle_length,
                                    speed=0.0, id=-1)

    for step in range(n_steps + 1):
        t = step * dt
        red = _is_red(light, t)

        # insert pending arrivals when there is room at the entrance
        while arrivals and arrivals[-1] <= t:
            if vehicles and vehicles[0].position < p.jam_spacing:
                break  # entrance blocked; retry next step
            arrivals.pop()
            speed = p.v0 if not vehicles else min(p.v0, vehicles[0].speed + 0.2 * p.v0)
            veh = VehicleState(position=0.0, speed=speed, id=next_id)
            vehicles.insert(0, veh)
            history[veh.id] = ([], [], [])
            next_id += 1
            entered += 1

        if step % record_every == 0:
            record_times.append(t)
            for veh in vehicles:
                times, pos, spd = history[veh.id]
                times.append(t)
                pos.append(veh.position)
                spd.append(veh.speed)

        if step == n_steps:
            break

        # accelerations with the current neighbor structure
        accels = []
        for i, veh in enumerate(vehicles):
            if i + 1 < len(vehicles):
                leader = vehicles[i + 1]
            elif red:
                leader = stop_line_leader
            else:
                leader = None
            accels.append(idm_acceleration(veh, leader, p))

        # semi-implicit Euler; speeds clamped at zero
        for veh, acc in zip(vehicles, accels):
            veh.speed = max(0.0, veh.speed + acc * dt)
            veh.position += veh.speed * dt

        # red-light compliance: never cross the stop line on red
        if red and vehicles and vehicles[-1].position > road_length:
            vehicles[-1].position = road_length
            vehicles[-1].speed = 0.0

        # remove vehicles that left the segment
        while vehicles and vehicles[-1].position > road_length:
            vehicles.pop()
            exited += 1

        # collision check every step
        for i in range(len(vehicles) - 1):
            if vehicles[i + 1].position - vehicles[i].position <= p.vehicle_length:
                raise CollisionError(
                    f"overlap between vehicles {vehicles[i].id} and {vehicles[i + 1].id} at t={t:.3f}")

    trajectories = {
        vid: (np.asarray(ts), np.asarray(xs), np.asarray(vs))
        for vid, (ts, xs, vs) in history.items() if ts
    }
    return MicrosimResult(
        record_times=np.asarray(record_times),
        trajectories=trajectories,
        light=light,
        road_length=road_length,
        params=p,
        entered=entered,
        exited=exited,
    )


def rasterize(result, n_cells=50, n_times=None):
    """Grid the microsim into normalized (rho, v) fields.

    At each recorded time the per-vehicle inverse-spacing densities and
    speeds are linearly interpolated across the occupied span; cells
    outside any vehicle's reach read rho=0, v=1 (empty free-flowing road).
    Returns (x_centers, times, rho, v) with fields shaped (n_cells, n_t).
    """
    p = result.params
    times = result.record_times if n_times is None else result.record_times[
        np.linspace(0, len(result.record_times) - 1, n_times).astype(int)]
    dx = result.road_length / n_cells
    centers = (np.arange(n_cells) + 0.5) * dx
    rho = np.zeros((n_cells, len(times)))
    v = np.ones((n_cells, len(times)))

    # index trajectories by time for fast lookup
    by_time = {}
    for vid, (ts, xs, vs) in result.trajectories.items():
        for t, x, s in zip(ts, xs, vs):
            by_time.setdefault(round(float(t), 9), []).append((x, s))

    for j, t in enumerate(times):
        snap = sorted(by_time.get(round(float(t), 9), []))
        if len(snap) < 2:
            continue
        pos = np.array([s[0] for s in snap])
        spd = np.array([s[1] for s in snap])
        states = [VehicleState(position=x, speed=s, id=k)
                  for k, (x, s) in enumerate(zip(pos, spd))]
        dens = estimate_local_density(states, p)
        inside = (centers >= pos[0]) & (centers <= pos[-1])
        rho[inside, j] = np.interp(centers[inside], pos, dens)
        v[inside, j] = np.clip(np.interp(centers[inside], pos, spd) / p.v0, 0.0, 1.0)
    return centers, np.asarray(times), np.clip(rho, 0.0, 1.0), v
