"""Survival model evaluation.

Product-limit estimation, time-dependent concordance, an inverse
probability of censoring weighted integrated Brier score, calibration
error at a reference time, a decile chi-square calibration test, and
integrated squared error against known survival curves, plus the
log-log slope fit used to summarise error decay across sample sizes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaincc

from .survival import TimeGrid, bin_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KmCurve:
    """Product-limit curve: distinct event times, the survival value just
    after each, and the at-risk count just before each."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray

    def __post_init__(self) -> None:
        if not (self.times.shape == self.survival.shape == self.at_risk.shape):
            raise ValueError("curve fields must align")

    def eval(self, t) -> np.ndarray:
        """Right-continuous evaluation: value after the last event <= t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float),
                              side="right")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]

    def eval_left(self, t) -> np.ndarray:
        """Left limit: value after the last event strictly before t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float),
                              side="left")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]


def km_fit(y: np.ndarray, delta: np.ndarray) -> KmCurve:
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=int)
    if y.size == 0:
        raise ValueError("empty sample")
    event_times = np.unique(y[delta == 1])
    # at risk just before t counts everyone still observed at t
    at_risk = np.array([(y >= t).sum() for t in event_times], dtype=float)
    deaths = np.array([((y == t) & (delta == 1)).sum() for t in event_times],
                      dtype=float)
    surv = np.cumprod(1.0 - deaths / at_risk) if event_times.size else np.array([])
    return KmCurve(times=event_times, survival=surv, at_risk=at_risk)


def km_censor(y: np.ndarray, delta: np.ndarray) -> KmCurve:
    """Product-limit for the censoring distribution: flip the indicator."""
    return km_fit(y, 1 - np.asarray(delta, dtype=int))


def c_td(s_hat: np.ndarray, y: np.ndarray, delta: np.ndarray,
         grid: TimeGrid) -> float:
    """Time-dependent concordance.

    A pair (i, j) with y_i < y_j and an event for i is concordant when the
    predicted survival at y_i's grid bin is lower for i than for j; exact
    ties count one half. Predictions are read at grid columns because the
    model is piecewise constant between grid points.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=int)
    n = y.shape[0]
    if s_hat.shape != (n, grid.taus.shape[0]):
        raise ValueError("prediction matrix must be subjects x grid points")
    b = bin_index(grid, y)
    at_bi = s_hat[:, b]            # [j, i] = S(tau_{b_i} | x_j)
    own = at_bi[np.arange(n), np.arange(n)]
    comparable = (y[:, None] < y[None, :]) & (delta[:, None] == 1)
    other = at_bi.T                # [i, j] = S(tau_{b_i} | x_j)
    score = np.where(own[:, None] < other, 1.0,
                     np.where(own[:, None] == other, 0.5, 0.0))
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    return float((score * comparable).sum() / n_pairs)


def ibs(s_hat: np.ndarray, y: np.ndarray, delta: np.ndarray,
        grid: TimeGrid, upper_quantile: float = 0.9) -> float:
    """Censoring-weighted Brier score, trapezoid-averaged over grid times
    between the first boundary and the given quantile of observed times.

    Subjects whose censoring weight vanishes at a time are dropped from
    that time's score; how often that happens is logged.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=int)
    n = y.shape[0]
    if s_hat.shape != (n, grid.taus.shape[0]):
        raise ValueError("prediction matrix must be subjects x grid points")
    cens = km_censor(y, delta)
    g_at_y = cens.eval_left(y)
    upper = np.quantile(y, upper_quantile)
    cols = np.nonzero((grid.taus >= grid.taus[1]) & (grid.taus <= upper))[0]
    if cols.size == 0:
        cols = np.array([1])
    times = grid.taus[cols]
    g_at_t = cens.eval(times)
    n_dropped = 0
    scores = np.empty(cols.size)
    for out, (k, t) in enumerate(zip(cols, times)):
        died = (y <= t) & (delta == 1)
        alive = y > t
        w_died = np.where(g_at_y > 0, 1.0 / np.where(g_at_y > 0, g_at_y, 1.0), 0.0)
        w_alive = 1.0 / g_at_t[out] if g_at_t[out] > 0 else 0.0
        n_dropped += int((died & (g_at_y <= 0)).sum())
        n_dropped += int(alive.sum()) if w_alive == 0.0 else 0
        term = (died * np.square(s_hat[:, k]) * w_died
                + alive * np.square(1.0 - s_hat[:, k]) * w_alive)
        scores[out] = term.sum() / n
    if n_dropped:
        logger.info("%d subject-time terms dropped for zero censor weight",
                    n_dropped)
    if times.size == 1:
        return float(scores[0])
    span = times[-1] - times[0]
    return float(np.trapezoid(scores, times) / span)


def ici_at(t_star: float, s_at_t: np.ndarray, y: np.ndarray,
           delta: np.ndarray, n_bins: int = 10) -> float:
    """Calibration error at one time: group subjects into equal-count bins
    of predicted event probability, compare each bin's mean prediction with
    a product-limit estimate inside the bin, and average the absolute gaps
    weighted by bin size."""
    s_at_t = np.asarray(s_at_t, dtype=float)
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=int)
    n = y.shape[0]
    pred = 1.0 - s_at_t
    order = np.argsort(pred, kind="stable")
    total = 0.0
    n_flagged = 0
    for members in np.array_split(order, n_bins):
        if members.size == 0:
            continue
        if np.max(y[members]) < t_star:
            # nobody observed out to t_star: the curve freezes at its last
            # observable value
            n_flagged += 1
        curve = km_fit(y[members], delta[members])
        observed = 1.0 - float(curve.eval(t_star))
        total += (members.size / n) * abs(float(pred[members].mean()) - observed)
    if n_flagged:
        logger.info("%d calibration bins exhausted before t_star", n_flagged)
    return float(total)


def dcal(s_at_y: np.ndarray, delta: np.ndarray, n_bins: int = 10):
    """Decile calibration test on predicted survival at the observed time.

    Event subjects drop unit mass into the bin holding their value;
    censored subjects spread unit mass uniformly over [0, value]. Returns
    the chi-square statistic against uniform bin counts and its p-value
    with n_bins - 1 degrees of freedom.
    """
    s_at_y = np.asarray(s_at_y, dtype=float)
    delta = np.asarray(delta, dtype=int)
    if np.any((s_at_y < 0) | (s_at_y > 1)):
        raise ValueError("survival values must lie in [0, 1]")
    n = s_at_y.shape[0]
    width = 1.0 / n_bins
    counts = np.zeros(n_bins)
    holding = np.minimum((s_at_y / width).astype(int), n_bins - 1)
    np.add.at(counts, holding[delta == 1], 1.0)
    for s, b in zip(s_at_y[delta == 0], holding[delta == 0]):
        if s <= np.finfo(float).tiny:
            counts[0] += 1.0
            continue
        counts[b] += (s - b * width) / s
        counts[:b] += width / s
    expected = n / n_bins
    stat = float(np.sum(np.square(counts - expected) / expected))
    p_value = float(gammaincc((n_bins - 1) / 2.0, stat / 2.0))
    return stat, p_value


def ise_survival(s_hat: np.ndarray, s_star: np.ndarray,
                 times: np.ndarray) -> float:
    """Mean over subjects of the trapezoid integral of the squared curve
    difference over the given times."""
    s_hat = np.asarray(s_hat, dtype=float)
    s_star = np.asarray(s_star, dtype=float)
    times = np.asarray(times, dtype=float)
    if s_hat.shape != s_star.shape or s_hat.shape[1] != times.shape[0]:
        raise ValueError("curve matrices and grid must align")
    per_subject = np.trapezoid(np.square(s_hat - s_star), times, axis=1)
    return float(per_subject.mean())


def slope_fit(ns, ise_medians) -> float:
    """Least-squares slope of log2 median error on log2 sample size."""
    ns = np.asarray(ns, dtype=float)
    med = np.asarray(ise_medians, dtype=float)
    if ns.size < 3:
        raise ValueError("need at least 3 sample sizes")
    if np.any(med <= 0):
        raise ValueError("errors must be positive to take logs")
    return float(np.polyfit(np.log2(ns), np.log2(med), 1)[0])


@dataclass
class MetricReport:
    c_td: float
    ibs: float
    ici_median: float
    dcal_stat: float
    dcal_p: float
    nll_test: Optional[float] = None
    ise_s: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.c_td <= 1.0):
            raise ValueError("concordance out of range")
        if self.ibs < 0.0:
            raise ValueError("negative Brier score")
        if not (0.0 <= self.dcal_p <= 1.0):
            raise ValueError("p-value out of range")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))
