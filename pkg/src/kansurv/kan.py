"""Layered spline networks over (covariates, time) inputs.

A layer holds one spline-plus-silu edge per (input, output) pair; nodes sum
their incoming edges. The first layer admits a factored evaluation over a
covariate batch crossed with a time grid: per-covariate contributions and
per-time contributions are computed once each and combined by broadcast
addition before the remaining layers run on the combined values.

Gradients are reverse-mode: coefficient gradients are linear in the stored
basis values, and chaining through inner layers uses the spline input
derivative (zero outside each edge's knot domain, where evaluation clamps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bspline import silu, silu_prime, stacked_basis, stacked_basis_deriv, uniform_knots

MODEL_SCHEMA = "kansurv-model-v1"


@dataclass
class KanLayer:
    degree: int
    knots: np.ndarray     # (d_in, d_out, L); rows may differ after refits
    theta: np.ndarray     # (d_in, d_out, n_basis)
    w_base: np.ndarray    # (d_in, d_out)
    w_spline: np.ndarray  # (d_in, d_out)

    @property
    def d_in(self) -> int:
        return self.knots.shape[0]

    @property
    def d_out(self) -> int:
        return self.knots.shape[1]

    @property
    def n_basis(self) -> int:
        return self.theta.shape[2]


@dataclass
class KanNetwork:
    layers: list[KanLayer]

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].d_in] + [lay.d_out for lay in self.layers]

    @property
    def degree(self) -> int:
        return self.layers[0].degree


@dataclass
class _LayerCache:
    x: np.ndarray
    sil: np.ndarray
    basis: np.ndarray      # (N, E, nb)
    spline: np.ndarray     # (N, E) spline-term values per edge
    dspline: np.ndarray | None  # (N, E) spline-term input derivative


def _edge_view(layer: KanLayer):
    e = layer.d_in * layer.d_out
    return (layer.knots.reshape(e, -1), layer.theta.reshape(e, -1),
            layer.w_base.reshape(e), layer.w_spline.reshape(e))


def _layer_forward(layer: KanLayer, x: np.ndarray, want_cache: bool,
                   want_input_grad: bool):
    n, d_in = x.shape
    d_out = layer.d_out
    t2, th2, wb2, ws2 = _edge_view(layer)
    x2 = np.repeat(x, d_out, axis=1)  # column i*d_out+j carries x[:, i]
    if want_input_grad:
        basis, dbasis = stacked_basis_deriv(t2, layer.degree, x2)
        dspline = np.einsum("nek,ek->ne", dbasis, th2)
    else:
        basis = stacked_basis(t2, layer.degree, x2)
        dspline = None
    spline = np.einsum("nek,ek->ne", basis, th2)
    sil = silu(x)
    acts = wb2 * np.repeat(sil, d_out, axis=1) + ws2 * spline
    out = acts.reshape(n, d_in, d_out).sum(axis=1)
    cache = _LayerCache(x, sil, basis, spline, dspline) if want_cache else None
    return out, cache


def _layer_backward(layer: KanLayer, cache: _LayerCache, dz: np.ndarray,
                    want_input_grad: bool):
    """dz: (N, d_out) upstream gradient. Returns ((dtheta, dw_base, dw_spline),
    gradient w.r.t. the layer inputs or None)."""
    d_in, d_out = layer.d_in, layer.d_out
    _, th2, wb2, ws2 = _edge_view(layer)
    dz2 = np.tile(dz, (1, d_in))  # aligns with edge order i*d_out+j
    dtheta = np.einsum("ne,nek->ek", dz2 * ws2, cache.basis)
    dw_spline = np.einsum("ne,ne->e", dz2, cache.spline)
    sil2 = np.repeat(cache.sil, d_out, axis=1)
    dw_base = np.einsum("ne,ne->e", dz2, sil2)
    grads = (dtheta.reshape(layer.theta.shape),
             dw_base.reshape(d_in, d_out),
             dw_spline.reshape(d_in, d_out))
    if not want_input_grad:
        return grads, None
    sp2 = np.repeat(silu_prime(cache.x), d_out, axis=1)
    dact_dx = wb2 * sp2 + ws2 * cache.dspline
    dx = (dz2 * dact_dx).reshape(-1, d_in, d_out).sum(axis=2)
    return grads, dx


def forward_batch(net: KanNetwork, z: np.ndarray, want_cache: bool = False):
    """Evaluate the network on rows of z (shape (N, d0)). Returns the scalar
    outputs (N,) and, when requested, the caches needed by backward_batch."""
    h = np.asarray(z, dtype=float)
    caches = []
    for li, layer in enumerate(net.layers):
        if h.shape[1] != layer.d_in:
            raise ValueError(
                f"layer {li}: expected {layer.d_in} inputs, got {h.shape[1]}"
            )
        h, cache = _layer_forward(layer, h, want_cache, want_input_grad=li > 0)
        caches.append(cache)
    out = h[:, 0]
    return (out, caches) if want_cache else (out, None)


def forward(net: KanNetwork, z0) -> float:
    z0 = np.asarray(z0, dtype=float).ravel()
    out, _ = forward_batch(net, z0[None, :])
    return float(out[0])


def backward_batch(net: KanNetwork, caches, dout: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients for a recorded forward pass; dout is the
    loss gradient w.r.t. the N scalar outputs. Returns a flat vector in
    flatten_params order."""
    dz = np.asarray(dout, dtype=float)[:, None]
    per_layer: list = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        per_layer[li], dz = _layer_backward(
            net.layers[li], caches[li], dz, want_input_grad=li > 0
        )
    return _flatten_grads(per_layer)


def forward_factored(net: KanNetwork, x: np.ndarray, times: np.ndarray,
                     want_cache: bool = False):
    """Evaluate on every (row of x) x (time) pair; entry (i, k) equals
    forward(net, (x_i, t_k)). The first layer splits into a covariate part and
    a time part combined by broadcast addition."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float).ravel()
    first = net.layers[0]
    d_cov = first.d_in - 1
    if x.shape[1] != d_cov:
        raise ValueError(f"layer 0: expected {d_cov} covariates, got {x.shape[1]}")
    n, k = x.shape[0], times.size

    cov_part = KanLayer(first.degree, first.knots[:d_cov], first.theta[:d_cov],
                        first.w_base[:d_cov], first.w_spline[:d_cov])
    time_part = KanLayer(first.degree, first.knots[d_cov:], first.theta[d_cov:],
                         first.w_base[d_cov:], first.w_spline[d_cov:])
    f_cov, cache_cov = _layer_forward(cov_part, x, want_cache, False)
    g_time, cache_time = _layer_forward(time_part, times[:, None], want_cache, False)

    h = (f_cov[:, None, :] + g_time[None, :, :]).reshape(n * k, first.d_out)
    caches = [(cache_cov, cache_time)]
    for li, layer in enumerate(net.layers[1:], start=1):
        h, cache = _layer_forward(layer, h, want_cache, want_input_grad=True)
        caches.append(cache)
    out = h[:, 0].reshape(n, k)
    return (out, caches) if want_cache else (out, None)


def backward_factored(net: KanNetwork, caches, dout: np.ndarray) -> np.ndarray:
    """Gradients for a recorded factored forward pass; dout has shape (n, K)."""
    n, k = dout.shape
    first = net.layers[0]
    d_cov = first.d_in - 1
    dz = np.asarray(dout, dtype=float).reshape(n * k, 1)
    per_layer: list = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, 0, -1):
        per_layer[li], dz = _layer_backward(net.layers[li], caches[li], dz, True)
    d_comb = dz.reshape(n, k, first.d_out)
    cov_part = KanLayer(first.degree, first.knots[:d_cov], first.theta[:d_cov],
                        first.w_base[:d_cov], first.w_spline[:d_cov])
    time_part = KanLayer(first.degree, first.knots[d_cov:], first.theta[d_cov:],
                         first.w_base[d_cov:], first.w_spline[d_cov:])
    cache_cov, cache_time = caches[0]
    g_cov, _ = _layer_backward(cov_part, cache_cov, d_comb.sum(axis=1), False)
    g_time, _ = _layer_backward(time_part, cache_time, d_comb.sum(axis=0), False)
    per_layer[0] = tuple(
        np.concatenate([a, b], axis=0) for a, b in zip(g_cov, g_time)
    )
    return _flatten_grads(per_layer)


def flatten_params(net: KanNetwork) -> np.ndarray:
    """Parameter order (documented, fixed): for each layer in sequence, theta
    raveled, then w_base raveled, then w_spline raveled."""
    parts = []
    for lay in net.layers:
        parts += [lay.theta.ravel(), lay.w_base.ravel(), lay.w_spline.ravel()]
    return np.concatenate(parts)


def _flatten_grads(per_layer) -> np.ndarray:
    parts = []
    for dtheta, dwb, dws in per_layer:
        parts += [dtheta.ravel(), dwb.ravel(), dws.ravel()]
    return np.concatenate(parts)


def set_params(net: KanNetwork, vec: np.ndarray) -> None:
    """Inverse of flatten_params; writes the network's arrays in place."""
    vec = np.asarray(vec, dtype=float)
    pos = 0
    for lay in net.layers:
        for arr in (lay.theta, lay.w_base, lay.w_spline):
            arr.flat[:] = vec[pos: pos + arr.size]
            pos += arr.size
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, network needs {pos}")


def param_count(net: KanNetwork) -> int:
    return sum(l.theta.size + l.w_base.size + l.w_spline.size for l in net.layers)


def init_network(widths, degree: int, n_interior: int, seed: int,
                 noise_scale: float = 0.3, scale_base_mu: float = 0.0,
                 scale_base_sigma: float = 1.0, scale_sp: float = 1.0,
                 knot_range: tuple[float, float] = (-1.0, 1.0)) -> KanNetwork:
    """Build a network with uniform knots on knot_range and random parameters.

    Coefficients are drawn so each edge's spline output has standard deviation
    about noise_scale/sqrt(d_in) over a uniform sweep of the knot domain (the
    per-coefficient scale divides out the mean squared basis norm). w_base is
    Normal(scale_base_mu, scale_base_sigma^2)/sqrt(d_in); w_spline starts at
    scale_sp. Deterministic for a fixed seed.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths) or widths[-1] != 1:
        raise ValueError(f"invalid widths {widths}: need [d0, ..., 1]")
    lo, hi = knot_range
    kv = uniform_knots(lo, hi, n_interior, degree)
    sweep = np.linspace(lo, hi, 101)
    bmat = stacked_basis(kv.knots[None, :], degree, sweep[:, None])[:, 0, :]
    mean_sq_norm = float(np.mean(np.sum(bmat**2, axis=1)))

    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        sigma_theta = noise_scale / np.sqrt(d_in * mean_sq_norm)
        theta = rng.normal(0.0, 1.0, (d_in, d_out, kv.n_basis)) * sigma_theta
        w_base = rng.normal(scale_base_mu, scale_base_sigma, (d_in, d_out)) / np.sqrt(d_in)
        w_spline = np.full((d_in, d_out), float(scale_sp))
        knots = np.broadcast_to(kv.knots, (d_in, d_out, kv.knots.size)).copy()
        layers.append(KanLayer(degree, knots, theta, w_base, w_spline))
    return KanNetwork(layers)


def copy_network(net: KanNetwork) -> KanNetwork:
    return KanNetwork([
        KanLayer(l.degree, l.knots.copy(), l.theta.copy(),
                 l.w_base.copy(), l.w_spline.copy())
        for l in net.layers
    ])


@dataclass(frozen=True)
class InputScaler:
    """Affine per-coordinate transform applied to (covariates, time) before
    the network sees them; holds the training-time normalisation statistics."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "InputScaler":
        return cls(np.zeros(dim), np.ones(dim))

    def apply_covariates(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset[:-1]) / self.scale[:-1]

    def apply_time(self, t: np.ndarray) -> np.ndarray:
        return (t - self.offset[-1]) / self.scale[-1]


def save_model(path, net: KanNetwork, scaler: InputScaler,
               time_grid: np.ndarray | None = None, meta: dict | None = None) -> None:
    doc = {
        "schema": MODEL_SCHEMA,
        "widths": net.widths,
        "degree": net.degree,
        "n_interior": net.layers[0].knots.shape[2] - 2 * (net.degree + 1),
        "layers": [
            {
                "knots": lay.knots.tolist(),
                "theta": lay.theta.tolist(),
                "w_base": lay.w_base.tolist(),
                "w_spline": lay.w_spline.tolist(),
            }
            for lay in net.layers
        ],
        "scaler": {"offset": scaler.offset.tolist(), "scale": scaler.scale.tolist()},
        "time_grid": None if time_grid is None else np.asarray(time_grid).tolist(),
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unrecognised model schema: {doc.get('schema')!r}")
    layers = [
        KanLayer(doc["degree"], np.array(spec["knots"], dtype=float),
                 np.array(spec["theta"], dtype=float),
                 np.array(spec["w_base"], dtype=float),
                 np.array(spec["w_spline"], dtype=float))
        for spec in doc["layers"]
    ]
    net = KanNetwork(layers)
    scaler = InputScaler(np.array(doc["scaler"]["offset"], dtype=float),
                         np.array(doc["scaler"]["scale"], dtype=float))
    grid = None if doc["time_grid"] is None else np.array(doc["time_grid"], dtype=float)
    return net, scaler, grid, doc["meta"]
