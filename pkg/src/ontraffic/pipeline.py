"""From raw simulated fields to training samples.

Covers probe selection and tracing, input-set assembly (probe rows plus
boundary-control rows), the random temporal shift used for receding
horizon training, probe/query subsampling, measurement corruption, and
the on-disk dataset container.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .godunov import BoundarySchedule, velocity

CONTROL_ID = -1.0
MAGIC = b"ONTF"
FORMAT_VERSION = 1

PROBE_CADENCE = 5.0 / 60.0  # min between probe reports
CONTROL_CADENCE = 10.0 / 60.0  # min between control-lattice rows


class DatasetFormatError(ValueError):
    """Raised on magic/version/checksum problems in the container file."""


@dataclass(frozen=True)
class ProbeObservation:
    rho: float
    v: float
    y: float  # position, km
    t: float  # min
    source_id: int


@dataclass
class InputSet:
    """Variable-length observation set fed to the branch network."""

    coords: np.ndarray  # (m, 3): position, time, source id
    values: np.ndarray  # (m, 2): density, velocity

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValueError("coords and values row counts differ")
        if self.coords.shape[1] != 3 or self.values.shape[1] != 2:
            raise ValueError("coords must be (m,3) and values (m,2)")

    @property
    def m(self):
        return self.coords.shape[0]

    @property
    def is_control(self):
        return self.coords[:, 2] == CONTROL_ID

    def probe_rows(self):
        return InputSet(self.coords[~self.is_control], self.values[~self.is_control])


@dataclass
class Scenario:
    """One ground-truth field with probe trajectories and its boundary schedule."""

    x: np.ndarray  # cell centers (n_x,)
    t: np.ndarray  # times (n_t,)
    rho: np.ndarray  # (n_x, n_t)
    v: np.ndarray  # (n_x, n_t)
    probes: list  # per probe: (n_obs, 4) array of (rho, v, y, t)
    schedule: BoundarySchedule
    source: str = "godunov"


@dataclass
class TrainingSample:
    input: InputSet
    queries: np.ndarray  # (n, 2) of shifted (x, t)
    targets: np.ndarray  # (n, 2) of (rho, v)
    t_c: float
    d_past: float
    d_pred: float


@dataclass
class Dataset:
    scenarios: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scenarios)


# -- probes --------------------------------------------------------------


def select_probes(candidates, rng, probe_probability=0.03):
    """Independent Bernoulli selection of probe ids from candidates."""
    if not 0.0 <= probe_probability <= 1.0:
        raise ValueError("probe probability must lie in [0, 1]")
    picks = rng.random(len(candidates)) < probe_probability
    return {c for c, hit in zip(candidates, picks) if hit}


def sample_probe_entries(rng, grid_x, grid_t, rho_bar=40.0, probe_probability=0.03,
                         inflow_density=0.1):
    """Entry points (x, t) for synthetic probes in a macroscopic field.

    Probe linear density is rho_bar * probe_probability per km: vehicles
    already on the road at t=0 enter at uniform positions, later probes
    enter at x_min at the rate implied by the inflow flux.
    """
    lam = rho_bar * probe_probability  # probes per km
    length = grid_x[-1] - grid_x[0]
    entries = [(float(x), float(grid_t[0]))
               for x in rng.uniform(grid_x[0], grid_x[-1], rng.poisson(lam * length))]
    rate = lam * velocity(inflow_density)  # probes per min at the inlet
    t = grid_t[0] + rng.exponential(1.0 / rate) if rate > 0 else np.inf
    while t < grid_t[-1]:
        entries.append((float(grid_x[0]), float(t)))
        t += rng.exponential(1.0 / rate)
    entries.sort(key=lambda e: e[1])
    return entries


def interpolate_field(grid_x, grid_t, field_values, x, t):
    """Bilinear interpolation of a (n_x, n_t) field at scalar (x, t)."""
    ix = np.clip(np.searchsorted(grid_x, x) - 1, 0, len(grid_x) - 2)
    it = np.clip(np.searchsorted(grid_t, t) - 1, 0, len(grid_t) - 2)
    wx = np.clip((x - grid_x[ix]) / (grid_x[ix + 1] - grid_x[ix]), 0.0, 1.0)
    wt = np.clip((t - grid_t[it]) / (grid_t[it + 1] - grid_t[it]), 0.0, 1.0)
    f = field_values
    return ((1 - wx) * (1 - wt) * f[ix, it] + wx * (1 - wt) * f[ix + 1, it]
            + (1 - wx) * wt * f[ix, it + 1] + wx * wt * f[ix + 1, it + 1])


def trace_probe_trajectory(grid_x, grid_t, rho, v, entry, cadence=PROBE_CADENCE):
    """Integrate dy/dt = v(y, t) from the entry point through the field.

    Forward Euler at the field's time step with bilinear interpolation;
    observations are recorded every `cadence` minutes and the trajectory
    truncates when it exits the domain.
    """
    x0, t0 = entry
    if not (grid_x[0] <= x0 <= grid_x[-1]) or not (grid_t[0] <= t0 <= grid_t[-1]):
        raise ValueError(f"entry {entry} outside the domain")
    dt = float(grid_t[1] - grid_t[0])
    stride = max(1, int(round(cadence / dt)))
    obs = []
    y, t = float(x0), float(t0)
    step = 0
    while t <= grid_t[-1] + 1e-12:
        if y > grid_x[-1]:
            break
        if step % stride == 0:
            obs.append(ProbeObservation(
                rho=float(interpolate_field(grid_x, grid_t, rho, y, t)),
                v=float(interpolate_field(grid_x, grid_t, v, y, t)),
                y=y, t=t, source_id=0))
        y += float(interpolate_field(grid_x, grid_t, v, y, t)) * dt
        t += dt
        step += 1
    return obs


def probes_to_array(observations):
    """Pack ProbeObservation list into an (n, 4) array of (rho, v, y, t)."""
    if not observations:
        return np.zeros((0, 4))
    return np.array([[o.rho, o.v, o.y, o.t] for o in observations])


# -- input sets ----------------------------------------------------------


def build_input_set(probe_arrays, schedule, t_c, d_past, d_pred, x_max,
                    control_cadence=CONTROL_CADENCE):
    """Assemble the branch input: windowed probe rows plus control rows.

    Probe rows keep observations with t in [t_c - d_past, t_c]; control
    rows sample the boundary schedule on a fixed lattice over
    [t_c - d_past, t_c + d_pred] at x_max, carrying the reserved control
    id and (rho_control, v(rho_control)) values. Times stay absolute here;
    shifting happens in the temporal-shift step.
    """
    coords, values = [], []
    for k, arr in enumerate(probe_arrays, start=1):
        if len(arr) == 0:
            continue
        mask = (arr[:, 3] >= t_c - d_past - 1e-12) & (arr[:, 3] <= t_c + 1e-12)
        if mask.any():
            win = arr[mask]
            coords.append(np.column_stack([win[:, 2], win[:, 3],
                                           np.full(len(win), float(k))]))
            values.append(win[:, :2])
    n_lattice = int(round((d_past + d_pred) / control_cadence)) + 1
    t_lattice = t_c - d_past + np.arange(n_lattice) * control_cadence
    levels = np.asarray(schedule.level_at(t_lattice), dtype=float)
    coords.append(np.column_stack([np.full(n_lattice, x_max), t_lattice,
                                   np.full(n_lattice, CONTROL_ID)]))
    values.append(np.column_stack([levels, velocity(levels)]))
    return InputSet(np.vstack(coords), np.vstack(values))


def shift_sample(scenario, t_c, d_past, d_pred, x_max=None,
                 control_cadence=CONTROL_CADENCE):
    """Window a scenario at reference time t_c and re-zero all times.

    Implements the random-temporal-shift step for one scenario: build the
    input set, take every grid point with t in [t_c - d_past, t_c + d_pred]
    as a target, then subtract t_c from all time coordinates.
    """
    T = float(scenario.t[-1])
    if T < d_past + d_pred:
        raise ValueError(f"scenario length {T} shorter than window {d_past + d_pred}")
    if not (d_past <= t_c <= T - d_pred):
        raise ValueError(f"t_c={t_c} outside admissible range [{d_past}, {T - d_pred}]")
    x_max = float(scenario.x[-1]) if x_max is None else x_max
    inp = build_input_set(scenario.probes, scenario.schedule, t_c, d_past, d_pred,
                          x_max=x_max, control_cadence=control_cadence)
    coords = inp.coords.copy()
    coords[:, 1] -= t_c
    mask = (scenario.t >= t_c - d_past - 1e-12) & (scenario.t <= t_c + d_pred + 1e-12)
    tt = scenario.t[mask] - t_c
    xx = scenario.x
    qx, qt = np.meshgrid(xx, tt, indexing="ij")
    queries = np.column_stack([qx.ravel(), qt.ravel()])
    targets = np.column_stack([scenario.rho[:, mask].ravel(), scenario.v[:, mask].ravel()])
    return TrainingSample(
        input=InputSet(coords, inp.values.copy()),
        queries=queries, targets=targets,
        t_c=t_c, d_past=d_past, d_pred=d_pred)


def random_temporal_shift(scenarios, rng, d_past, d_pred):
    """Fresh uniformly-drawn t_c per scenario; returns TrainingSamples."""
    out = []
    for sc in scenarios:
        T = float(sc.t[-1])
        if T < d_past + d_pred:
            raise ValueError("scenario shorter than the training window")
        t_c = float(rng.uniform(d_past, T - d_pred))
        out.append(shift_sample(sc, t_c, d_past, d_pred))
    return out


def subsample(sample, rng, probe_keep_range=(0.3, 1.0), n_queries=256):
    """Random probe-count and query-point reduction for one sample.

    Keeps a uniformly drawn fraction of probe rows (control rows always
    survive) and draws n_queries target points uniformly without
    replacement.
    """
    if n_queries < 1:
        raise ValueError("n_queries must be at least 1")
    is_ctrl = sample.input.is_control
    probe_idx = np.flatnonzero(~is_ctrl)
    keep_frac = float(rng.uniform(*probe_keep_range))
    n_keep = int(round(keep_frac * len(probe_idx)))
    kept = np.sort(rng.choice(probe_idx, size=n_keep, replace=False)) if n_keep else np.array([], int)
    rows = np.concatenate([kept, np.flatnonzero(is_ctrl)])
    n_q = min(n_queries, len(sample.queries))
    q_idx = rng.choice(len(sample.queries), size=n_q, replace=False)
    return TrainingSample(
        input=InputSet(sample.input.coords[rows], sample.input.values[rows]),
        queries=sample.queries[q_idx], targets=sample.targets[q_idx],
        t_c=sample.t_c, d_past=sample.d_past, d_pred=sample.d_pred)


def corrupt(input_set, rng, sigma_pos=0.0, sigma_rho=0.0, mu_mask=0.0,
            x_range=(0.0, 5.0)):
    """Noise injection and sensor dropout on probe rows only.

    Gaussian noise of std sigma_pos (km) on positions and sigma_rho on
    density values, both clamped to their valid ranges; then
    ceil(mu_mask * m_probe) uniformly chosen probe rows are removed.
    """
    if not 0.0 <= mu_mask < 1.0:
        raise ValueError("mu_mask must lie in [0, 1)")
    coords = input_set.coords.copy()
    values = input_set.values.copy()
    probe = ~input_set.is_control
    n_probe = int(probe.sum())
    if sigma_pos > 0 and n_probe:
        coords[probe, 0] = np.clip(coords[probe, 0] + rng.normal(0, sigma_pos, n_probe),
                                   x_range[0], x_range[1])
    if sigma_rho > 0 and n_probe:
        values[probe, 0] = np.clip(values[probe, 0] + rng.normal(0, sigma_rho, n_probe),
                                   0.0, 1.0)
    if mu_mask > 0 and n_probe:
        n_drop = int(np.ceil(mu_mask * n_probe))
        drop = rng.choice(np.flatnonzero(probe), size=n_drop, replace=False)
        keep = np.setdiff1d(np.arange(len(coords)), drop)
        coords, values = coords[keep], values[keep]
    return InputSet(coords, values)


# -- container format ----------------------------------------------------


def _pack_array(buf, arr):
    a = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", a.ndim))
    for s in a.shape:
        buf.write(struct.pack("<I", s))
    buf.write(a.tobytes())


def _unpack_array(view, offset):
    (ndim,) = struct.unpack_from("<I", view, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}I", view, offset)
    offset += 4 * ndim
    n = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(view, dtype="<f4", count=n, offset=offset).reshape(shape)
    return arr.astype(np.float64), offset + 4 * n


def serialize(dataset):
    """Encode a Dataset into the single-file container format.

    Layout: magic "ONTF", u32 version, u32 header length, JSON header,
    per-scenario packed float32 blocks, u32 crc32 of all blocks. All
    integers little-endian.
    """
    header = dict(dataset.meta)
    header["scenario_count"] = len(dataset.scenarios)
    header["sources"] = [sc.source for sc in dataset.scenarios]
    hdr = json.dumps(header, sort_keys=True).encode()
    body = io.BytesIO()
    for sc in dataset.scenarios:
        body.write(struct.pack("<I", len(sc.probes)))
        _pack_array(body, sc.x)
        _pack_array(body, sc.t)
        _pack_array(body, sc.rho)
        _pack_array(body, sc.v)
        for arr in sc.probes:
            _pack_array(body, arr)
        _pack_array(body, np.asarray(sc.schedule.durations))
        _pack_array(body, np.asarray(sc.schedule.levels))
    blocks = body.getvalue()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<I", len(hdr)))
    out.write(hdr)
    out.write(blocks)
    out.write(struct.pack("<I", zlib.crc32(blocks)))
    return out.getvalue()


def deserialize(data):
    """Decode bytes produced by :func:`serialize`."""
    if len(data) < 12 or data[:4] != MAGIC:
        raise DatasetFormatError("bad magic bytes: not a dataset container")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported container version {version}")
    (hdr_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + hdr_len + 4:
        raise DatasetFormatError("truncated container")
    header = json.loads(data[12:12 + hdr_len].decode())
    blocks = data[12 + hdr_len:-4]
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(blocks) != crc:
        raise DatasetFormatError("checksum mismatch: container corrupted")
    scenarios = []
    offset = 0
    sources = header.get("sources", [])
    for i in range(header["scenario_count"]):
        (n_probes,) = struct.unpack_from("<I", blocks, offset)
        offset += 4
        x, offset = _unpack_array(blocks, offset)
        t, offset = _unpack_array(blocks, offset)
        rho, offset = _unpack_array(blocks, offset)
        v, offset = _unpack_array(blocks, offset)
        probes = []
        for _ in range(n_probes):
            arr, offset = _unpack_array(blocks, offset)
            probes.append(arr.reshape(-1, 4))
        durations, offset = _unpack_array(blocks, offset)
        levels, offset = _unpack_array(blocks, offset)
        scenarios.append(Scenario(
            x=x, t=t, rho=rho, v=v, probes=probes,
            schedule=BoundarySchedule(durations=durations, levels=levels),
            source=sources[i] if i < len(sources) else "godunov"))
    meta = {k: v for k, v in header.items() if k not in ("scenario_count", "sources")}
    return Dataset(scenarios=scenarios, meta=meta)


def save_dataset(dataset, path):
    with open(path, "wb") as fh:
        fh.write(serialize(dataset))


def load_dataset(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
