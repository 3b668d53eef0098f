import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ontraffic.godunov import BoundarySchedule
from ontraffic.idm import (CollisionError, IDMParams, VehicleState,
                           estimate_local_density, idm_acceleration, simulate)


def schedule(durations, levels):
    return BoundarySchedule(durations=np.asarray(durations, float),
                            levels=np.asarray(levels, float))


PERMANENT_GREEN = schedule([1000.0], [0.0])
PERMANENT_RED = schedule([1000.0], [1.0])


def test_accel_from_standstill_no_leader():
    p = IDMParams()
    me = VehicleState(position=0.0, speed=0.0, id=0)
    assert idm_acceleration(me, None, p) == pytest.approx(p.a)


def test_accel_at_desired_speed_no_leader():
    p = IDMParams()
    me = VehicleState(position=0.0, speed=p.v0, id=0)
    assert idm_acceleration(me, None, p) == pytest.approx(0.0)


def test_accel_jam_equilibrium():
    # stopped behind a stopped leader at gap s0: a [1 - 0 - 1] = 0
    p = IDMParams()
    me = VehicleState(position=0.0, speed=0.0, id=0)
    leader = VehicleState(position=p.s0 + p.vehicle_length, speed=0.0, id=1)
    assert idm_acceleration(me, leader, p) == pytest.approx(0.0)


def test_accel_rejects_nonpositive_gap():
    p = IDMParams()
    me = VehicleState(position=0.0, speed=0.5, id=0)
    leader = VehicleState(position=p.vehicle_length, speed=0.5, id=1)
    with pytest.raises(CollisionError):
        idm_acceleration(me, leader, p)


def test_zero_inflow_empty():
    result = simulate(0.0, PERMANENT_GREEN, t_end=2.0)
    assert result.trajectories == {}
    assert result.entered == 0 and result.exited == 0


def test_free_flow_relaxation_matches_scalar_ode():
    # single vehicle, permanent green: dv/dt = a (1 - (v/v0)^4)
    p = IDMParams()
    result = simulate(0.0, PERMANENT_GREEN, road_length=50.0, t_end=8.0,
                      params=p, rng=np.random.default_rng(0))
    # inject one vehicle by simulating a tiny inflow burst instead: use
    # a dedicated run with inflow then no more arrivals
    result = simulate(0.5, PERMANENT_GREEN, road_length=50.0, t_end=8.0,
                      params=p, rng=np.random.default_rng(1))
    vid = min(result.trajectories)
    ts, xs, vs = result.trajectories[vid]
    v_entry = vs[0]
    ode = solve_ivp(lambda t, v: p.a * (1 - (v / p.v0) ** 4),
                    (ts[0], ts[-1]), [v_entry], t_eval=ts, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(vs, ode.y[0], atol=2e-3)
    assert abs(vs[-1] - p.v0) < 1e-3


def test_permanent_red_queue_monotone():
    result = simulate(10.0, PERMANENT_RED, t_end=8.0,
                      rng=np.random.default_rng(2))
    p = result.params
    # rebuild per-time snapshots of stopped vehicles
    times = result.record_times
    tails, heads = [], []
    # queued = slower than 20% of desired speed; a 20 m tolerance absorbs
    # the creep of vehicles closing up to the jam gap
    for t in times[len(times) // 4:]:
        queued = [x for ts, xs, vs in result.trajectories.values()
                  for tt, x, v in zip(ts, xs, vs)
                  if abs(tt - t) < 1e-9 and v < 0.2 * p.v0]
        if queued:
            tails.append(min(queued))
            heads.append(max(queued))
    assert tails, "no queue formed under permanent red"
    assert all(b <= a + 0.02 for a, b in zip(tails, tails[1:]))
    assert tails[-1] <= tails[0] + 1e-9  # the queue never shrinks
    assert heads[-1] == pytest.approx(result.road_length, abs=2 * p.jam_spacing)


def test_red_light_compliance():
    rng = np.random.default_rng(3)
    light = schedule([1.5, 1.5, 1.5, 1.5], [1.0, 0.0, 1.0, 0.0])
    result = simulate(12.0, light, t_end=6.0, rng=rng)
    for ts, xs, vs in result.trajectories.values():
        for t, x in zip(ts, xs):
            if float(light.level_at(t)) >= 0.5:
                assert x <= result.road_length + 1e-12


def test_vehicle_count_conservation():
    result = simulate(12.0, schedule([1.0, 1.0, 1.0], [1.0, 0.0, 1.0]),
                      t_end=3.0, rng=np.random.default_rng(4))
    t_last = result.record_times[-1]
    on_road = sum(1 for ts, _, _ in result.trajectories.values()
                  if abs(ts[-1] - t_last) < 1e-9)
    assert result.entered == result.exited + on_road
    assert result.entered == len(result.trajectories)


def test_no_collisions_under_stop_and_go():
    light = schedule([1.0] * 8, [1.0, 0.0] * 4)
    simulate(20.0, light, t_end=8.0, rng=np.random.default_rng(5))
    # simulate raises CollisionError internally if any gap closes


def test_density_bumper_to_bumper():
    p = IDMParams()
    xs = np.arange(5) * p.jam_spacing
    vehicles = [VehicleState(position=x, speed=0.0, id=i) for i, x in enumerate(xs)]
    np.testing.assert_allclose(estimate_local_density(vehicles, p), 1.0)


def test_density_isolated_vehicle():
    p = IDMParams()
    pair = [VehicleState(position=0.0, speed=1.0, id=0),
            VehicleState(position=100.0, speed=1.0, id=1)]
    dens = estimate_local_density(pair, p)
    assert np.all(dens < 1e-4)


def test_density_double_jam_spacing():
    p = IDMParams()
    xs = np.arange(6) * 2 * p.jam_spacing
    vehicles = [VehicleState(position=x, speed=0.2, id=i) for i, x in enumerate(xs)]
    np.testing.assert_allclose(estimate_local_density(vehicles, p), 0.5, atol=0.01)


def test_density_requires_vehicles():
    with pytest.raises(ValueError):
        estimate_local_density([], IDMParams())
