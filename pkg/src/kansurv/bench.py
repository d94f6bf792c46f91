"""Experiment orchestration.

CSV ingestion with the shared preprocessing rules, stratified splitting,
train-statistics scaling, the fit/predict/evaluate pipeline, the
convergence-rate study over synthetic processes, and the multi-split
benchmark loop. Heavy loops fan out to a process pool sized by the
KANSURV_WORKERS environment variable and run inline when that is 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time as _time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .kan import InputScaler, KanNetwork, forward_factored, init_network
from .metrics import MetricReport, c_td, dcal, ibs, ici_at, ise_survival, slope_fit
from .simgen import default_lambda_c, dgp_spec, generate, shared_test_set
from .survival import (
    HazardCurves,
    SurvivalDataset,
    TimeGrid,
    bin_index,
    build_grid,
    integrate_hazard,
)
from .train import FitResult, TrainConfig, fit, full_grid_nll

logger = logging.getLogger(__name__)

WORKERS_ENV = "KANSURV_WORKERS"
_SPLIT_TAG = 404
_NET_TAG = 505
_PREDICT_CHUNK = 4096


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring malformed %s=%r", WORKERS_ENV, raw)
        return 1


def content_hash(*arrays) -> str:
    digest = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        digest.update(str(a.shape).encode())
        digest.update(a.tobytes())
    return digest.hexdigest()[:16]


# --- ingestion -----------------------------------------------------------

def load_csv(path) -> SurvivalDataset:
    """Read a survival table: one `time` column, one binary `event` column,
    everything else a feature. Rows with missing cells are dropped (count
    logged); times are min-max scaled to [0, 1] using the whole file, before
    any splitting."""
    frame = pd.read_csv(path)
    for col in ("time", "event"):
        if col not in frame.columns:
            raise ValueError(f"missing required column {col!r}")
    feature_cols = [c for c in frame.columns if c not in ("time", "event")]
    if not feature_cols:
        raise ValueError("no feature columns found")
    complete = frame.dropna()
    n_dropped = len(frame) - len(complete)
    if n_dropped:
        logger.info("dropped %d rows with missing values", n_dropped)
    bad = complete.index[~complete["event"].isin((0, 1))]
    if len(bad):
        raise ValueError(f"non-binary event value at row {bad[0]}")
    times = complete["time"].to_numpy(dtype=float)
    lo, hi = times.min(), times.max()
    if hi <= lo:
        raise ValueError("nonpositive time range")
    return SurvivalDataset(
        complete[feature_cols].to_numpy(dtype=float),
        (times - lo) / (hi - lo),
        complete["event"].to_numpy(dtype=int),
    )


# --- splitting and scaling ----------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split(data: SurvivalDataset, seed: int, mode: str) -> SplitPlan:
    """Partition subjects, stratified on the event indicator. Benchmark
    mode makes 64/16/20 train/val/test; simulation mode makes 80/20
    train/val with the test block supplied externally."""
    if mode not in ("benchmark", "simulation"):
        raise ValueError(f"unknown split mode {mode!r}")
    if data.n < 25:
        raise ValueError("too few subjects to split")
    rng = np.random.default_rng(np.random.SeedSequence([_SPLIT_TAG, seed]))
    train, val, test = [], [], []
    for value in (0, 1):
        members = np.nonzero(data.delta == value)[0]
        if members.size < 3:
            raise ValueError(f"event stratum {value} has under 3 subjects")
        members = rng.permutation(members)
        if mode == "benchmark":
            n_test = round(0.2 * members.size)
            n_val = round(0.16 * members.size)
            test.append(members[:n_test])
            val.append(members[n_test:n_test + n_val])
            train.append(members[n_test + n_val:])
        else:
            n_val = round(0.2 * members.size)
            val.append(members[:n_val])
            train.append(members[n_val:])
    return SplitPlan(
        seed=seed,
        train=np.sort(np.concatenate(train)),
        val=np.sort(np.concatenate(val)),
        test=np.sort(np.concatenate(test)) if test else np.array([], dtype=int),
    )


def standardise(data: SurvivalDataset, train_idx: np.ndarray,
                mode: str) -> InputScaler:
    """Scaling statistics from training rows only. Benchmark mode z-scores
    every covariate and the time input; simulation covariates already live
    on the unit cube, so they pass through untouched."""
    if mode == "simulation":
        return InputScaler.identity(data.d + 1)
    x_train = data.x[train_idx]
    y_train = data.y[train_idx]
    offset = np.zeros(data.d + 1)
    scale = np.ones(data.d + 1)
    for j in range(data.d):
        sd = float(x_train[:, j].std())
        if sd == 0.0:
            warnings.warn(f"covariate column {j} has zero variance; left "
                          "unscaled", RuntimeWarning)
            continue
        offset[j] = float(x_train[:, j].mean())
        scale[j] = sd
    t_sd = float(y_train.std())
    if t_sd == 0.0:
        warnings.warn("time column has zero variance; left unscaled",
                      RuntimeWarning)
    else:
        offset[-1] = float(y_train.mean())
        scale[-1] = t_sd
    return InputScaler(offset, scale)


# --- fitting pipeline ----------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = ()
    degree: int = 3
    n_interior: int = 5
    n_bins: int = 32
    noise_scale: float = 0.3
    knot_range: tuple = (0.0, 1.0)

    def widths(self, d_cov: int) -> list:
        return [d_cov + 1, *self.hidden, 1]


@dataclass
class FittedModel:
    net: KanNetwork
    scaler: InputScaler
    grid: TimeGrid
    plan: SplitPlan
    result: FitResult


def predict_on_grid(net: KanNetwork, scaler: InputScaler, x: np.ndarray,
                    taus: np.ndarray) -> HazardCurves:
    """Hazard curves for a covariate block on an arbitrary grid, chunked so
    large blocks stay inside a modest memory budget."""
    grid = TimeGrid(np.asarray(taus, dtype=float))
    t_scaled = scaler.apply_time(grid.taus)
    parts = []
    for start in range(0, x.shape[0], _PREDICT_CHUNK):
        block = scaler.apply_covariates(x[start:start + _PREDICT_CHUNK])
        g, _ = forward_factored(net, block, t_scaled)
        parts.append(g)
    return integrate_hazard(np.vstack(parts), grid)


def fit_once(data: SurvivalDataset, model_cfg: ModelConfig,
             train_cfg: TrainConfig, mode: str, split_seed: int) -> FittedModel:
    plan = split(data, split_seed, mode)
    train_set = data.subset(plan.train)
    val_set = data.subset(plan.val)
    scaler = standardise(data, plan.train, mode)
    grid = build_grid(train_set.y, model_cfg.n_bins)
    net = init_network(
        model_cfg.widths(data.d), model_cfg.degree, model_cfg.n_interior,
        seed=int(np.random.SeedSequence([_NET_TAG, split_seed]).generate_state(1)[0]),
        noise_scale=model_cfg.noise_scale, knot_range=model_cfg.knot_range)
    result = fit(net, scaler, train_set, val_set, grid, train_cfg)
    return FittedModel(net=result.net, scaler=scaler, grid=grid, plan=plan,
                       result=result)


def evaluate_model(fitted: FittedModel, test: SurvivalDataset,
                   t_star: float, metadata: dict | None = None) -> MetricReport:
    """Score one fitted model on held-out subjects: discrimination,
    censoring-weighted Brier score, calibration at the reference time, the
    decile calibration test, and the held-out likelihood."""
    curves = predict_on_grid(fitted.net, fitted.scaler, test.x,
                             fitted.grid.taus)
    rows = np.arange(test.n)
    cols = bin_index(fitted.grid, test.y)
    s_at_obs = curves.survival[rows, cols]
    t_col = bin_index(fitted.grid, t_star)
    stat, p = dcal(s_at_obs, test.delta)
    return MetricReport(
        c_td=c_td(curves.survival, test.y, test.delta, fitted.grid),
        ibs=ibs(curves.survival, test.y, test.delta, fitted.grid),
        ici_median=ici_at(t_star, curves.survival[:, t_col], test.y,
                          test.delta),
        dcal_stat=stat,
        dcal_p=p,
        nll_test=full_grid_nll(fitted.net, fitted.scaler, test, fitted.grid),
        metadata=metadata or {},
    )


def median_event_time(data: SurvivalDataset) -> float:
    events = data.y[data.delta == 1]
    if events.size == 0:
        raise ValueError("no events to take a median over")
    return float(np.median(events))


def benchmark_run(data: SurvivalDataset, model_cfg: ModelConfig,
                  train_cfg: TrainConfig, seeds=range(10)) -> list:
    """The multi-split protocol: for each seed, split 64/16/20, scale with
    training statistics, fit, and score the test block. The calibration
    reference time is the median training event time of that split."""
    reports = []
    for seed in seeds:
        cfg = replace(train_cfg, seed=seed)
        fitted = fit_once(data, model_cfg, cfg, "benchmark", seed)
        train_set = data.subset(fitted.plan.train)
        report = evaluate_model(
            fitted, data.subset(fitted.plan.test),
            median_event_time(train_set),
            metadata={"split_seed": seed,
                      "best_epoch": fitted.result.best_epoch,
                      "val_nll": fitted.result.best_val_nll})
        reports.append(report)
        logger.info("split %d: c_td=%.3f ibs=%.3f dcal_p=%.3f", seed,
                    report.c_td, report.ibs, report.dcal_p)
    return reports


# --- rate study ----------------------------------------------------------

def adaptive_knots(n: int, smoothness_r: int) -> int:
    """Interior knot count growing like n to the power 1/(2r+1)."""
    return int(np.ceil(n ** (1.0 / (2 * smoothness_r + 1))))


def architecture(kind: str) -> tuple:
    if kind == "additive":
        return ()
    if kind == "deep":
        return (3,)
    raise ValueError(f"unknown architecture {kind!r}")


_TEST_CACHE: dict = {}


def _cached_test_set(dgp_id: int, lam_c: float):
    key = (dgp_id, round(lam_c, 12))
    if key not in _TEST_CACHE:
        _TEST_CACHE[key] = shared_test_set(dgp_spec(dgp_id), lam_c=lam_c)
    return _TEST_CACHE[key]


@dataclass(frozen=True)
class RateCell:
    dgp_id: int
    n: int
    replicate: int
    arch: str


def _default_rate_train_cfg(n: int) -> TrainConfig:
    # Batch grows with n so the SGD noise floor shrinks along the ladder;
    # a fixed batch flattens the tail of the convergence curve.
    return TrainConfig(learning_rate=0.01, batch_size=max(32, n // 8),
                       patience=40, max_epochs=400, grid_update="init",
                       grid_eps=0.02, lambda_shrink=0.0, seed=0)


def _default_rate_model_cfg() -> ModelConfig:
    # A fine time grid keeps discretisation bias below the ISE scale the
    # ladder resolves; the coarse default grid is visible at n >= 4096.
    return ModelConfig(n_bins=128)


def run_rate_cell(cell: RateCell, model_cfg: ModelConfig | None = None,
                  train_cfg: TrainConfig | None = None,
                  lam_c: float | None = None,
                  adapt_knots: bool = True) -> dict:
    """One replicate: generate, fit the prescribed architecture, and score
    ISE against the shared test truth. By default the knot count follows the
    n-dependent sieve schedule; adapt_knots=False keeps the configured one
    (head-to-head comparisons at a single n)."""
    spec = dgp_spec(cell.dgp_id)
    if lam_c is None:
        lam_c = default_lambda_c(spec)
    started = _time.perf_counter()
    row = {"dgp_id": cell.dgp_id, "n": cell.n, "replicate": cell.replicate,
           "arch": cell.arch, "ise_s": np.nan, "error": "",
           "seconds": np.nan, "epochs": 0}
    try:
        sample = generate(spec, cell.n, seed=cell.replicate, lam_c=lam_c)
        test = _cached_test_set(cell.dgp_id, lam_c)
        cfg = train_cfg or _default_rate_train_cfg(cell.n)
        cfg = replace(cfg, seed=cell.replicate)
        mc = model_cfg or _default_rate_model_cfg()
        mc = replace(mc, hidden=architecture(cell.arch))
        if adapt_knots:
            mc = replace(mc, n_interior=adaptive_knots(cell.n,
                                                       spec.smoothness_r))
        fitted = fit_once(sample.data, mc, cfg, "simulation", cell.replicate)
        taus = np.concatenate([[0.0], test.truth.times])
        curves = predict_on_grid(fitted.net, fitted.scaler, test.data.x, taus)
        row["ise_s"] = ise_survival(curves.survival[:, 1:],
                                    test.truth.survival, test.truth.times)
        row["epochs"] = fitted.result.epochs_run
    except Exception as exc:  # noqa: BLE001 - a replicate failure is data
        logger.exception("replicate failed: %s", cell)
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["seconds"] = _time.perf_counter() - started
    return row


@dataclass
class RateStudyResult:
    rows: pd.DataFrame
    medians: pd.DataFrame
    slopes: dict = field(default_factory=dict)


def _run_cells(cells, model_cfg, train_cfg, lam_c_by_dgp,
               adapt_knots) -> list:
    workers = worker_count()
    if workers == 1:
        return [run_rate_cell(c, model_cfg, train_cfg,
                              lam_c_by_dgp[c.dgp_id], adapt_knots)
                for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_rate_cell, c, model_cfg, train_cfg,
                               lam_c_by_dgp[c.dgp_id], adapt_knots)
                   for c in cells]
        return [f.result() for f in futures]


def rate_study(dgp_ids, ns, n_replicates: int,
               archs_by_dgp: dict | None = None,
               model_cfg: ModelConfig | None = None,
               train_cfg: TrainConfig | None = None,
               lam_c_by_dgp: dict | None = None,
               out_dir=None, adapt_knots: bool = True) -> RateStudyResult:
    """The full error-decay experiment: every (process, sample size,
    replicate, architecture) cell, plus medians, IQRs, and fitted slopes.

    The headline slope for each (process, architecture) uses the largest
    half of the sample sizes; the slope over all of them is kept alongside.
    """
    ns = sorted(int(n) for n in ns)
    archs_by_dgp = archs_by_dgp or {d: ("additive",) for d in dgp_ids}
    cells = [RateCell(d, n, rep, arch)
             for d in dgp_ids
             for arch in archs_by_dgp[d]
             for n in ns
             for rep in range(n_replicates)]
    if lam_c_by_dgp is None:
        lam_c_by_dgp = {d: default_lambda_c(dgp_spec(d)) for d in dgp_ids}
    rows = pd.DataFrame(_run_cells(cells, model_cfg, train_cfg, lam_c_by_dgp,
                                   adapt_knots))
    ok = rows[rows["error"] == ""]
    n_failed = len(rows) - len(ok)
    if n_failed:
        logger.warning("%d replicates failed and were skipped", n_failed)
    medians = (ok.groupby(["dgp_id", "arch", "n"])["ise_s"]
               .agg(median="median",
                    iqr=lambda v: float(np.subtract(*np.percentile(v, [75, 25]))),
                    count="count")
               .reset_index())
    slopes = {}
    head = ns[len(ns) - max(3, int(np.ceil(len(ns) / 2))):] if len(ns) >= 3 else ns
    for (did, arch), block in medians.groupby(["dgp_id", "arch"]):
        block = block.sort_values("n")
        if len(block) >= 3:
            slopes[(did, arch)] = {
                "slope_all": slope_fit(block["n"], block["median"]),
                "slope_head": slope_fit(block["n"].tail(len(head)),
                                        block["median"].tail(len(head))),
            }
    result = RateStudyResult(rows=rows, medians=medians, slopes=slopes)
    if out_dir is not None:
        write_rate_study(result, out_dir)
    return result


def write_rate_study(result: RateStudyResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cells_path = os.path.join(out_dir, "rate_cells.csv")
    medians_path = os.path.join(out_dir, "rate_medians.csv")
    result.rows.to_csv(cells_path, index=False)
    result.medians.to_csv(medians_path, index=False)
    manifest = {
        "slopes": {f"dgp{d}-{a}": v for (d, a), v in result.slopes.items()},
        "cells_hash": content_hash(result.rows["ise_s"].to_numpy()),
        "n_rows": len(result.rows),
        "n_failed": int((result.rows["error"] != "").sum()),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
