"""Hazard-regression head.

Turns per-subject log-hazard values on a time grid into cumulative hazard and
survival curves through a right-endpoint rectangle rule, and provides the
right-censored negative log-likelihood and the squared-log-hazard penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

# log-hazards are clipped here before exponentiation; hazards outside
# e^(+/-20) are far beyond anything a bounded-hazard model should express
LOG_HAZARD_BOUND = 20.0


def clamp_log_hazard(g):
    return np.clip(g, -LOG_HAZARD_BOUND, LOG_HAZARD_BOUND)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times tau_0 = 0 < tau_1 < ... < tau_K."""

    taus: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float).copy()
        if taus.ndim != 1 or taus.size < 2:
            raise ValueError("grid needs at least (0, tau_1)")
        if taus[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("grid times must be strictly increasing")
        taus.flags.writeable = False
        object.__setattr__(self, "taus", taus)

    @property
    def n_bins(self) -> int:
        return self.taus.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.taus)


def build_grid(y_train, n_bins: int) -> TimeGrid:
    """Grid at the equally spaced quantiles of the training observed times,
    with the zeroth grid point pinned to 0 and duplicate quantiles removed."""
    y = np.asarray(y_train, dtype=float).ravel()
    if n_bins < 1 or y.size == 0:
        raise ValueError("need n_bins >= 1 and nonempty training times")
    if np.ptp(y) == 0.0:
        warnings.warn("degenerate training times (all equal); grid is (0, y)",
                      RuntimeWarning, stacklevel=2)
    levels = np.linspace(0.0, 1.0, n_bins + 1)[1:]
    taus = np.unique(np.concatenate([[0.0], np.quantile(y, levels)]))
    return TimeGrid(taus)


def bin_index(grid: TimeGrid, y):
    """Largest k with tau_k <= y (vectorised; scalar in, scalar out)."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise ValueError("observed times must be nonnegative")
    idx = np.searchsorted(grid.taus, arr, side="right") - 1
    return int(idx) if np.ndim(y) == 0 else idx


@dataclass(frozen=True)
class HazardCurves:
    """Per-subject curves on a shared grid; column k corresponds to tau_k.

    survival = exp(-cum_hazard) by construction, survival[:, 0] = 1.
    """

    grid: TimeGrid
    log_hazard: np.ndarray
    cum_hazard: np.ndarray
    survival: np.ndarray

    def survival_at(self, times) -> np.ndarray:
        """Survival read at arbitrary times: step-constant between grid points
        and held at the last column beyond tau_K. Returns (n, len(times))."""
        cols = bin_index(self.grid, np.asarray(times, dtype=float))
        return self.survival[:, cols]


def integrate_hazard(g, grid: TimeGrid) -> HazardCurves:
    """Right-rectangle accumulation: the hazard increment on (tau_{k-1}, tau_k]
    is exp(g[:, k]) * (tau_k - tau_{k-1}). g must be (n, K+1) aligned with the
    grid; it is clamped before exponentiation. Exact for constant hazards."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if g.shape[1] != grid.taus.size:
        raise ValueError(f"expected {grid.taus.size} grid columns, got {g.shape[1]}")
    increments = np.exp(clamp_log_hazard(g[:, 1:])) * grid.widths
    cum = np.concatenate([np.zeros((g.shape[0], 1)), np.cumsum(increments, axis=1)], axis=1)
    return HazardCurves(grid, g, cum, np.exp(-cum))


def nll(g_at_obs, lambda_at_obs, delta) -> float:
    """Mean of Lambda_i - Delta_i * g_i over subjects: the negative censored
    log-likelihood up to the model-free terms."""
    g_at_obs = np.asarray(g_at_obs, dtype=float)
    lam = np.asarray(lambda_at_obs, dtype=float)
    d = np.asarray(delta, dtype=float)
    return float(np.mean(lam - d * g_at_obs))


def shrink_penalty(g_batch, lambda_shrink: float) -> float:
    """lambda_shrink times the mean squared log-hazard over the batch grid."""
    if lambda_shrink < 0:
        raise ValueError("lambda_shrink must be >= 0")
    if lambda_shrink == 0.0:
        return 0.0
    g = np.asarray(g_batch, dtype=float)
    return float(lambda_shrink * np.mean(g**2))


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored sample: covariates x (n, d), observed times y in [0, 1],
    event indicators delta in {0, 1}. Immutable after construction."""

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).copy()
        y = np.asarray(self.y, dtype=float).ravel().copy()
        d = np.asarray(self.delta).ravel().copy()
        if x.ndim != 2 or x.shape[0] != y.size or d.size != y.size:
            raise ValueError("x, y, delta must agree on the number of subjects")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("missing or non-finite values are not allowed")
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError("observed times must lie in [0, 1]")
        if not np.all(np.isin(d, (0, 1))):
            raise ValueError("event indicators must be 0 or 1")
        d = d.astype(np.int64)
        for arr in (x, y, d):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", d)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(self.x[idx], self.y[idx], self.delta[idx])


def curves_to_csv(curves: HazardCurves, path) -> None:
    """One row per subject, survival at tau_1..tau_K; the header carries the
    grid times themselves."""
    taus = curves.grid.taus[1:]
    frame = pd.DataFrame(curves.survival[:, 1:], columns=[f"{t:.10g}" for t in taus])
    frame.to_csv(path, index=False)


def curves_from_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a curves file back: (grid times (K,), survival values (n, K))."""
    frame = pd.read_csv(path)
    times = np.array([float(c) for c in frame.columns])
    if np.any(np.diff(times) <= 0):
        raise ValueError("curve file header times must be strictly increasing")
    return times, frame.to_numpy(dtype=float)
