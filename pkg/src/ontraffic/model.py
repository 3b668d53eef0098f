"""Variable-input operator network with uncertainty outputs.

Branch: per-observation coordinate/value encoders, multi-head attention
pooling over the (variable-length, permutation-invariant) observation
set, and two output MLPs producing coefficient vectors for the mean and
the uncertainty. Trunk: an MLP over normalized query coordinates with
mean and uncertainty basis groups. A nonlinear decoder combines branch
and trunk via an element-wise product; a learned fundamental-diagram MLP
maps predicted density to velocity, with first-order propagation of the
density uncertainty through its derivative.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .pipeline import CONTROL_ID, InputSet


@dataclass
class ModelConfig:
    d_enc: int = 32
    n_heads: int = 4
    head_width: int = 32
    p: int = 32
    hidden: int = 32
    n_hidden: int = 1
    activation: str = "tanh"
    sigma_floor: float = 1e-3
    linear_decoder: bool = False  # vanilla inner-product baseline
    share_trunk_body: bool = True
    # domain constants for normalizing coordinates into [-1, 1]
    x_min: float = 0.0
    x_max: float = 5.0
    d_past: float = 2.0
    d_pred: float = 8.0
    id_scale: float = 10.0

    def __post_init__(self):
        if min(self.d_enc, self.n_heads, self.head_width, self.p, self.hidden) < 1:
            raise ValueError("all widths must be at least 1")


@dataclass
class PredictionField:
    rho_hat: np.ndarray
    v_hat: np.ndarray
    sigma_rho: np.ndarray
    sigma_v: np.ndarray


def _activation(name):
    return {"tanh": ad.tanh, "relu": ad.relu, "softplus": ad.softplus}[name]


def _glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def _mlp_init(rng, params, name, sizes):
    for i in range(len(sizes) - 1):
        params[f"{name}.W{i}"] = Tensor(_glorot(rng, sizes[i], sizes[i + 1]),
                                        requires_grad=True)
        params[f"{name}.b{i}"] = Tensor(np.zeros((1, sizes[i + 1])),
                                        requires_grad=True)


def _mlp_layers(params, name):
    n = 0
    while f"{name}.W{n}" in params:
        n += 1
    return n


def _mlp_forward(params, name, x, act):
    n = _mlp_layers(params, name)
    h = x
    for i in range(n):
        h = ad.matmul(h, params[f"{name}.W{i}"]) + params[f"{name}.b{i}"]
        if i < n - 1:
            h = act(h)
    return h


def init_params(config, seed=0):
    """Glorot-initialized parameter dict for every sub-network."""
    rng = np.random.default_rng(seed)
    c = config
    hid = [c.hidden] * c.n_hidden
    params = {}
    _mlp_init(rng, params, "enc_coords", [3] + hid + [c.d_enc])
    _mlp_init(rng, params, "enc_values", [2] + hid + [c.d_enc])
    for h in range(c.n_heads):
        _mlp_init(rng, params, f"att_score{h}", [c.d_enc] + hid + [1])
        _mlp_init(rng, params, f"att_value{h}", [c.d_enc] + hid + [c.head_width])
    _mlp_init(rng, params, "branch_mean", [c.n_heads * c.head_width] + hid + [c.p])
    _mlp_init(rng, params, "branch_sigma", [c.n_heads * c.head_width] + hid + [c.p])
    if c.share_trunk_body:
        _mlp_init(rng, params, "trunk", [2] + hid + [2 * c.p])
    else:
        _mlp_init(rng, params, "trunk", [2] + hid + [c.p])
        _mlp_init(rng, params, "trunk_sigma", [2] + hid + [c.p])
    _mlp_init(rng, params, "decoder_mean", [c.p] + hid + [1])
    _mlp_init(rng, params, "decoder_sigma", [c.p] + hid + [1])
    _mlp_init(rng, params, "fd", [1] + hid + [1])
    return params


def normalize_coords(config, coords):
    """Branch coordinates to roughly [-1, 1]; the id column keeps its sign."""
    c = config
    out = np.asarray(coords, dtype=float).copy()
    out[:, 0] = 2.0 * (out[:, 0] - c.x_min) / (c.x_max - c.x_min) - 1.0
    out[:, 1] = 2.0 * (out[:, 1] + c.d_past) / (c.d_past + c.d_pred) - 1.0
    ctrl = out[:, 2] == CONTROL_ID
    out[:, 2] = np.where(ctrl, -1.0, out[:, 2] / c.id_scale)
    return out


def normalize_queries(config, queries):
    c = config
    out = np.asarray(queries, dtype=float).copy()
    out[:, 0] = 2.0 * (out[:, 0] - c.x_min) / (c.x_max - c.x_min) - 1.0
    out[:, 1] = 2.0 * (out[:, 1] + c.d_past) / (c.d_past + c.d_pred) - 1.0
    return out


def encode_observations(config, params, input_set):
    """psi_j = Psi_c(coords_j) + Psi_v(values_j), shape (m, d_enc)."""
    act = _activation(config.activation)
    coords = Tensor(normalize_coords(config, input_set.coords))
    values = Tensor(np.asarray(input_set.values, dtype=float))
    return _mlp_forward(params, "enc_coords", coords, act) + \
        _mlp_forward(params, "enc_values", values, act)


def attention_pool(config, params, psi):
    """Softmax-weighted pooling per head, heads concatenated: (1, H*head_width)."""
    if psi.shape[0] < 1:
        raise ValueError("attention pooling needs at least one observation")
    act = _activation(config.activation)
    scale = 1.0 / np.sqrt(config.d_enc)
    heads = []
    for h in range(config.n_heads):
        scores = _mlp_forward(params, f"att_score{h}", psi, act) * scale  # (m, 1)
        weights = ad.softmax(scores, axis=0)
        vals = _mlp_forward(params, f"att_value{h}", psi, act)  # (m, head_width)
        heads.append(ad.matmul(_transpose(weights), vals))  # (1, head_width)
    return ad.concat(heads, axis=1)


def _transpose(t):
    out = t.data.T
    return ad._make(out.copy(), (t,), lambda g: (g.T.copy(),))


def branch_forward(config, params, input_set):
    """(beta, beta_sigma), each of shape (1, p)."""
    psi = encode_observations(config, params, input_set)
    nu = attention_pool(config, params, psi)
    act = _activation(config.activation)
    beta = _mlp_forward(params, "branch_mean", nu, act)
    beta_sigma = _mlp_forward(params, "branch_sigma", nu, act)
    return beta, beta_sigma


def trunk_forward(config, params, queries):
    """(tau, tau_sigma), each (n_queries, p); queries normalized internally."""
    act = _activation(config.activation)
    q = Tensor(normalize_queries(config, queries))
    if config.share_trunk_body:
        both = _mlp_forward(params, "trunk", q, act)
        tau = _slice_cols(both, 0, config.p)
        tau_sigma = _slice_cols(both, config.p, 2 * config.p)
    else:
        tau = _mlp_forward(params, "trunk", q, act)
        tau_sigma = _mlp_forward(params, "trunk_sigma", q, act)
    return tau, tau_sigma


def _slice_cols(t, lo, hi):
    out = t.data[:, lo:hi]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[:, lo:hi] = g
        return (full,)

    return ad._make(out.copy(), (t,), vjp)


def decode(config, params, beta, tau, beta_sigma, tau_sigma):
    """(rho_hat, sigma_rho) at all queries, each (n_queries, 1)."""
    act = _activation(config.activation)
    mean_in = tau * beta  # broadcast (n, p) * (1, p)
    sigma_in = tau_sigma * beta_sigma
    if config.linear_decoder:
        rho_hat = _keepdim(ad.sum_over_axis(mean_in, axis=1))
        raw_sigma = _keepdim(ad.sum_over_axis(sigma_in, axis=1))
    else:
        rho_hat = _mlp_forward(params, "decoder_mean", mean_in, act)
        raw_sigma = _mlp_forward(params, "decoder_sigma", sigma_in, act)
    sigma_rho = ad.softplus(raw_sigma) + config.sigma_floor
    return rho_hat, sigma_rho


def _keepdim(t):
    out = t.data[:, None]
    return ad._make(out.copy(), (t,), lambda g: (g[:, 0].copy(),))


def fd_velocity(config, params, rho_hat):
    """(v_hat, d v_hat / d rho_hat), both (n, 1), exact derivative.

    The derivative is accumulated forward through the fundamental-diagram
    MLP layer by layer, so it is itself differentiable with respect to
    the network parameters (needed for the uncertainty loss).
    """
    if config.activation != "tanh":
        raise NotImplementedError("analytic FD derivative implemented for tanh only")
    n = _mlp_layers(params, "fd")
    h = rho_hat
    deriv = None
    for i in range(n):
        w = params[f"fd.W{i}"]
        pre = ad.matmul(h, w) + params[f"fd.b{i}"]
        if i < n - 1:
            h = ad.tanh(pre)
            gate = 1.0 - ad.square(h)  # tanh'
            if deriv is None:
                deriv = gate * w  # w is (1, width): d pre / d rho
            else:
                deriv = gate * ad.matmul(deriv, w)
        else:
            h = pre
            deriv = ad.matmul(deriv, w) if deriv is not None else ad.broadcast_to(w, h.shape)
    return h, deriv


def propagate_uncertainty(sigma_rho, dfd_drho):
    """sigma_v = |dFD/drho| * sigma_rho."""
    return ad.absolute(dfd_drho) * sigma_rho


def forward(config, params, input_set, queries):
    """Full differentiable forward pass.

    Returns Tensors (rho_hat, v_hat, sigma_rho, sigma_v), each (n, 1).
    """
    if input_set.m < 1:
        raise ValueError("input set must contain at least one row")
    beta, beta_sigma = branch_forward(config, params, input_set)
    tau, tau_sigma = trunk_forward(config, params, queries)
    rho_hat, sigma_rho = decode(config, params, beta, tau, beta_sigma, tau_sigma)
    v_hat, dfd = fd_velocity(config, params, rho_hat)
    sigma_v = propagate_uncertainty(sigma_rho, dfd)
    return rho_hat, v_hat, sigma_rho, sigma_v


def predict(config, params, input_set, queries, chunk=2000):
    """Inference-only evaluation returning a PredictionField of arrays.

    Runs the trunk/decoder/FD stack tape-free on plain arrays, in query
    chunks small enough to stay cache-resident; the branch (cheap, and
    the only part touched by the observation set) reuses the tape code.
    The arithmetic is identical to forward().
    """
    if input_set.m < 1:
        raise ValueError("input set must contain at least one row")
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    beta, beta_sigma = branch_forward(config, frozen, input_set)
    b, bs = beta.data, beta_sigma.data

    def layers(name):
        return [(params[f"{name}.W{i}"].data, params[f"{name}.b{i}"].data)
                for i in range(_mlp_layers(params, name))]

    if config.activation != "tanh":
        # uncommon configs fall back to the tape implementation
        out = forward(config, frozen, input_set, queries)
        return PredictionField(*[t.data[:, 0].copy() for t in out])

    trunk = layers("trunk")
    trunk_sigma = None if config.share_trunk_body else layers("trunk_sigma")
    dec_mean, dec_sigma = layers("decoder_mean"), layers("decoder_sigma")
    fd = layers("fd")

    def mlp(ls, x):
        h = x
        for i, (W, bias) in enumerate(ls):
            h = np.dot(h, W)
            h += bias
            if i < len(ls) - 1:
                np.tanh(h, out=h)
        return h

    qn = normalize_queries(config, queries)
    pieces = []
    for lo in range(0, len(qn), chunk):
        qc = qn[lo:lo + chunk]
        if trunk_sigma is None:
            both = mlp(trunk, qc)
            tau, tau_sigma = both[:, :config.p], both[:, config.p:]
        else:
            tau, tau_sigma = mlp(trunk, qc), mlp(trunk_sigma, qc)
        if config.linear_decoder:
            rho = (tau * b).sum(axis=1, keepdims=True)
            raw = (tau_sigma * bs).sum(axis=1, keepdims=True)
        else:
            rho = mlp(dec_mean, tau * b)
            raw = mlp(dec_sigma, tau_sigma * bs)
        sigma = np.maximum(raw, 0.0) + np.log1p(np.exp(-np.abs(raw))) \
            + config.sigma_floor
        h, deriv = rho, None
        for i, (W, bias) in enumerate(fd):
            pre = np.dot(h, W)
            pre += bias
            if i < len(fd) - 1:
                h = np.tanh(pre)
                gate = 1.0 - h * h
                deriv = gate * W if deriv is None else gate * np.dot(deriv, W)
            else:
                h = pre
                deriv = np.dot(deriv, W) if deriv is not None \
                    else np.broadcast_to(W, h.shape)
        pieces.append((rho, h, sigma, np.abs(deriv) * sigma))
    rho, v, sigma_rho, sigma_v = (np.concatenate(c) for c in zip(*pieces))
    return PredictionField(rho_hat=rho[:, 0], v_hat=v[:, 0],
                           sigma_rho=sigma_rho[:, 0], sigma_v=sigma_v[:, 0])


# -- checkpoint io -------------------------------------------------------

CKPT_MAGIC = b"ONTC"
CKPT_VERSION = 1


def save_checkpoint(path, config, params, extra=None):
    """JSON config header plus named packed float32 tensors."""
    names = sorted(params)
    header = {
        "config": asdict(config),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (config, params, extra); params require grad."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise ValueError("not a model checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (hdr_len,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hdr_len].decode())
    config = ModelConfig(**header["config"])
    params = {}
    offset = 12 + hdr_len
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[spec["name"]] = Tensor(arr.astype(np.float64).reshape(shape),
                                      requires_grad=True)
        offset += 4 * count
    return config, params, header.get("extra", {})
