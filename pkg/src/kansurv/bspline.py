"""Univariate B-spline bases on clamped knot vectors.

Provides basis evaluation (Cox-de Boor recursion, vectorised over points and
over stacks of knot vectors), input derivatives, the spline-plus-silu edge
used by the network layers, and data-adaptive knot refitting.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot vector: degree+1 copies of each endpoint, J interior knots.

    Interior knots must lie strictly inside (lo, hi) and be nondecreasing;
    repeats among them are allowed (they lower continuity, nothing else).
    Basis dimension is J + degree + 1.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        kn = np.asarray(self.knots, dtype=float).copy()
        p = self.degree
        if kn.ndim != 1 or kn.size < 2 * (p + 1) + 1:
            raise ValueError("knot vector too short for one interior knot")
        if np.any(np.diff(kn) < 0):
            raise ValueError("knots must be nondecreasing")
        lo, hi = kn[0], kn[-1]
        if not lo < hi:
            raise ValueError("domain must have positive length")
        if np.any(kn[: p + 1] != lo) or np.any(kn[-(p + 1):] != hi):
            raise ValueError("first and last degree+1 knots must repeat the ends")
        interior = kn[p + 1: -(p + 1)]
        if interior.size and (interior[0] <= lo or interior[-1] >= hi):
            raise ValueError("interior knots must lie strictly inside the domain")
        kn.flags.writeable = False
        object.__setattr__(self, "knots", kn)

    @property
    def n_interior(self) -> int:
        return self.knots.size - 2 * (self.degree + 1)

    @property
    def n_basis(self) -> int:
        return self.n_interior + self.degree + 1

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])


def make_knots(lo: float, hi: float, interior, degree: int) -> KnotVector:
    interior = np.asarray(interior, dtype=float)
    p1 = degree + 1
    kn = np.concatenate([np.full(p1, float(lo)), interior, np.full(p1, float(hi))])
    return KnotVector(degree=degree, knots=kn)


def uniform_knots(lo: float, hi: float, n_interior: int, degree: int) -> KnotVector:
    if n_interior < 1:
        raise ValueError("need at least one interior knot")
    interior = lo + (hi - lo) * np.arange(1, n_interior + 1) / (n_interior + 1)
    return make_knots(lo, hi, interior, degree)


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _degree_zero(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Half-open interval indicators, right-closed at the domain end.

    t: (E, L) stacked knot rows, x: (N, E) per-edge points (already clamped).
    Returns (N, E, L-1).
    """
    ind = (x[:, :, None] >= t[None, :, :-1]) & (x[:, :, None] < t[None, :, 1:])
    ind = ind.astype(float)
    # x exactly at the max knot falls in no half-open interval; assign it to
    # the last nonempty one so the basis still sums to one there.
    nonempty = t[:, :-1] < t[:, 1:]
    last = t.shape[1] - 2 - np.argmax(nonempty[:, ::-1], axis=1)
    onehot = np.zeros_like(ind[0])
    onehot[np.arange(t.shape[0]), last] = 1.0
    at_end = x == t[None, :, -1]
    return np.where(at_end[:, :, None], onehot[None], ind)


def _recurse(t: np.ndarray, nd: np.ndarray, x: np.ndarray, q: int) -> np.ndarray:
    """One Cox-de Boor step from degree q-1 to q. 0/0 counts as 0."""
    den_l = t[:, q:-1] - t[:, :-q - 1]
    den_r = t[:, q + 1:] - t[:, 1:-q]
    num_l = x[:, :, None] - t[None, :, :-q - 1]
    num_r = t[None, :, q + 1:] - x[:, :, None]
    wl = np.where(den_l > 0, num_l / np.where(den_l > 0, den_l, 1.0), 0.0)
    wr = np.where(den_r > 0, num_r / np.where(den_r > 0, den_r, 1.0), 0.0)
    return wl * nd[:, :, :-1] + wr * nd[:, :, 1:]


def stacked_basis(t: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    """Basis values for E knot rows at once.

    t: (E, L), x: (N, E). Out-of-domain points are clamped per edge.
    Returns (N, E, L - degree - 1).
    """
    xc = np.clip(x, t[None, :, 0], t[None, :, -1])
    nd = _degree_zero(t, xc)
    for q in range(1, degree + 1):
        nd = _recurse(t, nd, xc, q)
    return nd


def stacked_basis_deriv(t: np.ndarray, degree: int, x: np.ndarray):
    """Basis values and their input derivatives, (N,E,nb) each.

    The derivative is taken at the clamped point and zeroed strictly outside
    the domain (constant extension); at interior knots it is the right
    derivative by construction of the half-open intervals.
    """
    p = degree
    xc = np.clip(x, t[None, :, 0], t[None, :, -1])
    nd = _degree_zero(t, xc)
    for q in range(1, p):
        nd = _recurse(t, nd, xc, q)
    if p == 0:
        return nd, np.zeros_like(nd)
    basis = _recurse(t, nd, xc, p)
    den1 = t[:, p:-1] - t[:, :-p - 1]
    den2 = t[:, p + 1:] - t[:, 1:-p]
    term1 = np.where(den1 > 0, nd[:, :, :-1] / np.where(den1 > 0, den1, 1.0), 0.0)
    term2 = np.where(den2 > 0, nd[:, :, 1:] / np.where(den2 > 0, den2, 1.0), 0.0)
    inside = (x >= t[None, :, 0]) & (x <= t[None, :, -1])
    deriv = p * (term1 - term2) * inside[:, :, None]
    return basis, deriv


def basis_eval(kv: KnotVector, x):
    """All basis values at x (scalar or 1-d array). Inside the domain they are
    nonnegative and sum to one; outside, x is clamped first."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = stacked_basis(kv.knots[None, :], kv.degree, arr[:, None])[:, 0, :]
    return out[0] if np.isscalar(x) or np.ndim(x) == 0 else out


@dataclass
class SplineEdge:
    """One learnable edge: w_base*silu(x) + w_spline * sum_k theta_k B_k(x)."""

    knots: KnotVector
    theta: np.ndarray
    w_base: float = 0.0
    w_spline: float = 1.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.knots.n_basis,):
            raise ValueError(
                f"theta must have length {self.knots.n_basis}, got {self.theta.shape}"
            )


def spline_eval(edge: SplineEdge, x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    b = stacked_basis(edge.knots.knots[None, :], edge.knots.degree, arr[:, None])
    val = edge.w_base * silu(arr) + edge.w_spline * (b[:, 0, :] @ edge.theta)
    return float(val[0]) if np.ndim(x) == 0 else val


def spline_eval_input_derivative(edge: SplineEdge, x):
    """d/dx of spline_eval; right derivative at knots, zero spline term
    outside the domain (the silu term is never clamped)."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    _, db = stacked_basis_deriv(edge.knots.knots[None, :], edge.knots.degree, arr[:, None])
    val = edge.w_base * silu_prime(arr) + edge.w_spline * (db[:, 0, :] @ edge.theta)
    return float(val[0]) if np.ndim(x) == 0 else val


def refit_knots(edge: SplineEdge, samples, grid_eps: float) -> SplineEdge:
    """Move the knots to the observed sample range and refit the coefficients.

    Interior knots are the blend grid_eps * (uniform over the sample range)
    + (1 - grid_eps) * (type-7 sample quantiles). Coefficients are the ridge
    least-squares fit of the old spline-term values at the samples onto the
    new basis, so the edge's values there are preserved up to the residual;
    w_base and w_spline are untouched. Degenerate all-equal samples leave the
    edge unchanged and raise a RuntimeWarning.
    """
    if not 0.0 <= grid_eps <= 1.0:
        raise ValueError("grid_eps must lie in [0, 1]")
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("samples must be nonempty")
    lo, hi = float(s.min()), float(s.max())
    if hi <= lo:
        warnings.warn("degenerate refit samples (all equal); keeping old knots",
                      RuntimeWarning, stacklevel=2)
        return edge
    kv = edge.knots
    levels = np.arange(1, kv.n_interior + 1) / (kv.n_interior + 1)
    uniform = lo + (hi - lo) * levels
    quant = np.quantile(s, levels)
    interior = grid_eps * uniform + (1.0 - grid_eps) * quant
    tick = 1e-9 * (hi - lo)
    interior = np.clip(interior, lo + tick, hi - tick)
    new_kv = make_knots(lo, hi, interior, kv.degree)

    old_vals = stacked_basis(kv.knots[None, :], kv.degree, s[:, None])[:, 0, :] @ edge.theta
    bmat = stacked_basis(new_kv.knots[None, :], kv.degree, s[:, None])[:, 0, :]
    gram = bmat.T @ bmat + 1e-8 * np.eye(new_kv.n_basis)
    theta_new = np.linalg.solve(gram, bmat.T @ old_vals)
    return dataclasses.replace(edge, knots=new_kv, theta=theta_new)
