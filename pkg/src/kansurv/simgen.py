"""Synthetic survival data.

Four fixed data-generating processes, each a known log-hazard surface over
five uniform covariates (three of which are pure noise) and raw time on
(0, 10]. Event times are drawn by inverting the conditional cumulative
hazard on a fine trapezoid table; censoring combines an exponential draw
with an administrative cutoff at t = 3, with the exponential rate
calibrated so roughly 30% of subjects are censored. Observed times are
rescaled by the cutoff so downstream code sees times in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .survival import SurvivalDataset

HORIZON = 3.0
T_MAX = 10.0
TABLE_SIZE = 2000
TARGET_CENSOR_RATE = 0.30
TRUTH_GRID_SIZE = 200
N_SHARED_TEST = 2000

# SeedSequence tags keeping the generator, shared-test, and calibration
# streams disjoint from each other and from plain integer seeds
_STREAM_GENERATE = 101
_STREAM_TEST = 202
_STREAM_CALIBRATE = 303

_CHUNK_ROWS = 2048
_BISECT_TOL = 1e-8


def _g_unit(x1, x2, t):
    # unit hazard, testing hook only: T is then standard exponential
    return np.zeros(np.broadcast_shapes(np.shape(x1), np.shape(t)))


def _g_1(x1, x2, t):
    return (np.sin(2.0 * np.pi * x1) + 0.5 * np.cos(2.0 * np.pi * x2)
            - 0.3 * np.sin(np.pi * t) + 0.2)


def _g_2(x1, x2, t):
    return (np.abs(2.0 * x1 - 1.0) + 0.5 * np.cos(2.0 * np.pi * x2)
            - 0.3 * np.sin(np.pi * t) + 0.2)


def _g_3(x1, x2, t):
    return np.sin(np.pi * (x1 + 0.5 * x2)) - 0.3 * t + 0.2


def _g_4(x1, x2, t):
    return np.square(x1) * t + 0.3 * np.sin(np.pi * x2) - 0.4


_FORMULAS = {0: _g_unit, 1: _g_1, 2: _g_2, 3: _g_3, 4: _g_4}
# the tent term in process 2 has a single weak derivative; the others are
# analytic, so their effective smoothness is capped by the cubic order
_SMOOTHNESS = {0: 4, 1: 4, 2: 1, 3: 4, 4: 4}


@dataclass(frozen=True)
class DgpSpec:
    """One synthetic process: formula id plus the shared sampling constants."""

    dgp_id: int
    n_cov: int = 5
    horizon: float = HORIZON
    t_max: float = T_MAX
    target_censor_rate: float = TARGET_CENSOR_RATE

    def __post_init__(self) -> None:
        if self.dgp_id not in _FORMULAS:
            raise ValueError(f"unknown process id {self.dgp_id}")

    @property
    def smoothness_r(self) -> int:
        return _SMOOTHNESS[self.dgp_id]


def dgp_spec(dgp_id: int) -> DgpSpec:
    return DgpSpec(dgp_id)


def dgp_loghazard(spec: DgpSpec, x: np.ndarray, t) -> np.ndarray:
    """True log-hazard at raw time t. Only the first two covariate columns
    enter any formula; the rest are noise by construction."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n_cov:
        raise ValueError(f"expected {spec.n_cov} covariates, got {x.shape[-1]}")
    return _FORMULAS[spec.dgp_id](x[..., 0], x[..., 1], np.asarray(t, dtype=float))


def _table_nodes(spec: DgpSpec) -> np.ndarray:
    # TABLE_SIZE positive nodes plus the origin; trapezoid weights between
    return np.linspace(0.0, spec.t_max, TABLE_SIZE + 1)


def _hazard_table(spec: DgpSpec, x: np.ndarray):
    """Per-subject hazard and cumulative hazard at the table nodes."""
    nodes = _table_nodes(spec)
    haz = np.exp(dgp_loghazard(spec, x[:, None, :], nodes[None, :]))
    width = nodes[1] - nodes[0]
    increments = 0.5 * width * (haz[:, 1:] + haz[:, :-1])
    cum = np.zeros_like(haz)
    np.cumsum(increments, axis=1, out=cum[:, 1:])
    return nodes, haz, cum


def cumulative_hazard(spec: DgpSpec, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Continuous trapezoid-interpolated cumulative hazard, one time per row.

    This is the exact function the event sampler inverts, so the inversion
    identity holds against it to solver tolerance.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.shape[0] != x.shape[0]:
        raise ValueError("one query time per subject required")
    nodes, haz, cum = _hazard_table(spec, x)
    width = nodes[1] - nodes[0]
    idx = np.clip((t // width).astype(int), 0, TABLE_SIZE - 1)
    rows = np.arange(x.shape[0])
    lam_t = np.exp(dgp_loghazard(spec, x, t))
    partial = 0.5 * (t - nodes[idx]) * (haz[rows, idx] + lam_t)
    return cum[rows, idx] + partial


def _invert_chunk(spec, x, target):
    nodes, haz, cum = _hazard_table(spec, x)
    width = nodes[1] - nodes[0]
    boundary = target >= cum[:, -1]
    capped = np.where(boundary, cum[:, -1], target)
    # bracket on the table, then bisect the trapezoid interpolant inside
    idx = np.clip(np.sum(cum <= capped[:, None], axis=1) - 1, 0, TABLE_SIZE - 1)
    rows = np.arange(x.shape[0])
    base = cum[rows, idx]
    haz_lo = haz[rows, idx]
    t_lo = nodes[idx]
    lo = t_lo.copy()
    hi = nodes[idx + 1].copy()
    for _ in range(60):
        if np.max(hi - lo) <= _BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        lam_mid = np.exp(dgp_loghazard(spec, x, mid))
        val = base + 0.5 * (mid - t_lo) * (haz_lo + lam_mid)
        above = val >= capped
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    t = 0.5 * (lo + hi)
    return np.where(boundary, spec.t_max, t), boundary


def sample_event_time(spec: DgpSpec, x: np.ndarray, u: np.ndarray):
    """Invert Λ(T | x) = −log(u) per subject, so u near 1 maps to early
    times and u near 0 to late ones.

    Returns (times, boundary) where boundary marks subjects whose target
    exceeds the cumulative hazard at the support endpoint; those are pinned
    to t_max (and in practice swallowed by the administrative cutoff).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u >= 1.0)):
        raise ValueError("u draws must lie in [0, 1)")
    # a literal zero draw would ask for an infinite target; nudge it onto
    # the boundary branch instead
    target = -np.log(np.maximum(u, np.finfo(float).tiny))
    times = np.empty(x.shape[0])
    boundary = np.empty(x.shape[0], dtype=bool)
    for start in range(0, x.shape[0], _CHUNK_ROWS):
        sl = slice(start, min(start + _CHUNK_ROWS, x.shape[0]))
        times[sl], boundary[sl] = _invert_chunk(spec, x[sl], target[sl])
    return times, boundary


def _draw_raw(spec: DgpSpec, n: int, seed_seq: np.random.SeedSequence):
    """Covariates, event times, and censoring exponentials from three
    independent substreams, so changing one draw leaves the others fixed."""
    child_x, child_u, child_c = seed_seq.spawn(3)
    x = np.random.default_rng(child_x).random((n, spec.n_cov))
    u = np.random.default_rng(child_u).random(n)
    t, boundary = sample_event_time(spec, x, u)
    exp_draws = np.random.default_rng(child_c).standard_exponential(n)
    return x, t, boundary, exp_draws


def _censor_rate(t: np.ndarray, exp_draws: np.ndarray, lam_c: float,
                 horizon: float) -> float:
    c = np.minimum(exp_draws / lam_c, horizon)
    return float(np.mean(c < t))


def calibrate_censoring(spec: DgpSpec, n_probe: int = 100_000,
                        seed: int = 0) -> float:
    """Bisect the exponential censoring rate to hit the target overall
    censoring fraction. The probe sample is drawn once and reused across
    bisection steps (common random numbers), so the result is deterministic
    given the seed."""
    if n_probe < 10_000:
        raise ValueError("n_probe too small for a stable rate estimate")
    ss = np.random.SeedSequence([_STREAM_CALIBRATE, spec.dgp_id, seed])
    _, t, _, exp_draws = _draw_raw(spec, n_probe, ss)
    lo, hi = 1e-6, 1e3
    rate_lo = _censor_rate(t, exp_draws, lo, spec.horizon)
    rate_hi = _censor_rate(t, exp_draws, hi, spec.horizon)
    target = spec.target_censor_rate
    if rate_lo > target or rate_hi < target:
        raise RuntimeError(
            f"censoring target {target} outside reachable range "
            f"[{rate_lo:.4f}, {rate_hi:.4f}] for rates in [{lo}, {hi}]")
    for _ in range(200):
        mid = np.sqrt(lo * hi)  # log-scale midpoint
        rate = _censor_rate(t, exp_draws, mid, spec.horizon)
        if abs(rate - target) <= 0.005:
            return float(mid)
        if rate < target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("censoring calibration failed to converge")


_LAMBDA_CACHE: dict[int, float] = {}


def default_lambda_c(spec: DgpSpec) -> float:
    """Calibrated rate for this process, computed once per interpreter."""
    if spec.dgp_id not in _LAMBDA_CACHE:
        _LAMBDA_CACHE[spec.dgp_id] = calibrate_censoring(spec)
    return _LAMBDA_CACHE[spec.dgp_id]


@dataclass(frozen=True)
class GroundTruth:
    """True survival for a block of subjects on the fixed reporting grid.

    times_raw are on the original scale (0, horizon]; times are the same
    points after division by the horizon, matching observed-time scaling.
    """

    times_raw: np.ndarray
    times: np.ndarray
    survival: np.ndarray

    def __post_init__(self) -> None:
        if self.survival.shape[1] != self.times_raw.shape[0]:
            raise ValueError("survival columns must match the grid")


def ground_truth(spec: DgpSpec, x: np.ndarray) -> GroundTruth:
    """True survival on the reporting grid by trapezoid integration."""
    x = np.asarray(x, dtype=float)
    nodes = np.linspace(0.0, spec.horizon, TRUTH_GRID_SIZE + 1)
    haz = np.exp(dgp_loghazard(spec, x[:, None, :], nodes[None, :]))
    width = nodes[1] - nodes[0]
    cum = np.cumsum(0.5 * width * (haz[:, 1:] + haz[:, :-1]), axis=1)
    return GroundTruth(times_raw=nodes[1:], times=nodes[1:] / spec.horizon,
                       survival=np.exp(-cum))


def true_survival(spec: DgpSpec, x: np.ndarray, t_raw: np.ndarray) -> np.ndarray:
    """True survival at arbitrary raw times, one per subject."""
    return np.exp(-cumulative_hazard(spec, x, t_raw))


@dataclass(frozen=True)
class SimulatedSample:
    data: SurvivalDataset
    truth: GroundTruth
    lam_c: float
    censor_rate: float
    n_boundary: int


def _assemble(spec, x, t, boundary, exp_draws, lam_c) -> SimulatedSample:
    c = exp_draws / lam_c
    y_raw = np.minimum(np.minimum(t, c), spec.horizon)
    delta = (t <= np.minimum(c, spec.horizon)).astype(int)
    data = SurvivalDataset(x, y_raw / spec.horizon, delta)
    return SimulatedSample(data=data, truth=ground_truth(spec, x),
                           lam_c=float(lam_c),
                           censor_rate=float(1.0 - delta.mean()),
                           n_boundary=int(boundary.sum()))


def generate(spec: DgpSpec, n: int, seed: int,
             lam_c: float | None = None) -> SimulatedSample:
    """One replication: n subjects with observed times on [0, 1] plus their
    true survival curves. Deterministic given (spec, n, seed)."""
    if n < 16:
        raise ValueError("n too small")
    if lam_c is None:
        lam_c = default_lambda_c(spec)
    ss = np.random.SeedSequence([_STREAM_GENERATE, spec.dgp_id, seed])
    x, t, boundary, exp_draws = _draw_raw(spec, n, ss)
    return _assemble(spec, x, t, boundary, exp_draws, lam_c)


def shared_test_set(spec: DgpSpec, n: int = N_SHARED_TEST,
                    lam_c: float | None = None) -> SimulatedSample:
    """The evaluation sample shared by every replication of a process."""
    if lam_c is None:
        lam_c = default_lambda_c(spec)
    ss = np.random.SeedSequence([_STREAM_TEST, spec.dgp_id])
    x, t, boundary, exp_draws = _draw_raw(spec, n, ss)
    return _assemble(spec, x, t, boundary, exp_draws, lam_c)


def dataset_to_csv(data: SurvivalDataset, path) -> None:
    cols = {f"x{j + 1}": data.x[:, j] for j in range(data.d)}
    cols["time"] = data.y
    cols["event"] = data.delta
    pd.DataFrame(cols).to_csv(path, index=False)


def dataset_from_csv(path) -> SurvivalDataset:
    frame = pd.read_csv(path)
    xcols = [c for c in frame.columns if c not in ("time", "event")]
    return SurvivalDataset(frame[xcols].to_numpy(dtype=float),
                           frame["time"].to_numpy(dtype=float),
                           frame["event"].to_numpy(dtype=int))


def truth_to_csv(truth: GroundTruth, path) -> None:
    frame = pd.DataFrame(truth.survival,
                         columns=[f"{t:.10g}" for t in truth.times])
    frame.insert(0, "subject", np.arange(truth.survival.shape[0]))
    frame.to_csv(path, index=False)


def truth_from_csv(path) -> GroundTruth:
    frame = pd.read_csv(path)
    times = np.array([float(c) for c in frame.columns[1:]])
    return GroundTruth(times_raw=times * HORIZON, times=times,
                       survival=frame.iloc[:, 1:].to_numpy(dtype=float))


def sample_manifest(spec: DgpSpec, seed: int, sample: SimulatedSample) -> dict:
    return {
        "dgp_id": spec.dgp_id,
        "seed": seed,
        "n": sample.data.n,
        "lambda_c": sample.lam_c,
        "censor_rate": sample.censor_rate,
        "n_boundary": sample.n_boundary,
        "horizon": spec.horizon,
    }
